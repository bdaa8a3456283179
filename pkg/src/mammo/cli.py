"""Command-line front end.

Exit codes: 0 success, 1 at least one model failed during ``run``,
2 usage, configuration or data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .classifiers import MODEL_KINDS, ModelError, load_model, save_model
from .config import ConfigError, ExperimentConfig, load_config
from .dataset import BENIGN, MALIGNANT, EncodingConfig, EncodingError, ParseError, audit, load_dataset, write_dataset
from .evaluation import compare_report, evaluate, pct
from .imputation import fill_log, impute_all, write_fill_log
from .mlp import TrainingError
from .partition import PartitionSpec, split
from .pipeline import DataError, load_reports, run_experiment

logger = logging.getLogger("mammo")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    def __init__(self, stage, message):
        super().__init__(f"{stage}: {message}")


def _hidden(text):
    try:
        sizes = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("hidden sizes must be positive")
    return sizes


# (flag, config section, field, type, help). Defaults are read from the config dataclasses,
# so the help text and the parser share one source.
MODEL_FLAGS = [
    ("--alpha-merge", "chaid", "alpha_merge", float, "CHAID merge threshold on pairwise p-values"),
    ("--alpha-split", "chaid", "alpha_split", float, "CHAID split threshold on adjusted p-values"),
    ("--max-depth", "chaid", "max_depth", int, "CHAID maximum tree depth"),
    ("--min-parent", "chaid", "min_parent", int, "CHAID minimum node size to split (default: 2%% of train)"),
    ("--min-child", "chaid", "min_child", int, "CHAID minimum child size (default: 1%% of train)"),
    ("--bin-count", "chaid", "bin_count", int, "equal-frequency bins for age"),
    ("--hidden", "mlp", "hidden", _hidden, "MLP hidden layer sizes, comma separated"),
    ("--learning-rate", "mlp", "learning_rate", float, "MLP learning rate"),
    ("--momentum", "mlp", "momentum", float, "MLP momentum"),
    ("--max-epochs", "mlp", "max_epochs", int, "MLP epoch limit"),
    ("--patience", "mlp", "patience", int, "MLP early-stopping patience in epochs"),
    ("--mlp-seed", "mlp", "seed", int, "MLP base seed, added to the run seed"),
    ("--validation-fraction", "", "validation_fraction", float, "share of the training data held out for MLP validation"),
    ("--prune-rounds", "prune", "max_rounds", int, "MLP pruning rounds (0 disables pruning)"),
    ("--prune-fraction", "prune", "prune_fraction", float, "share of neurons removed per pruning round"),
    ("--c", "svm", "c", float, "SVM regularisation C"),
    ("--kkt-tolerance", "svm", "kkt_tolerance", float, "SMO KKT tolerance"),
    ("--max-passes", "svm", "max_passes", int, "SMO limit on full passes over the data"),
    ("--gamma", "kernel", "gamma", float, "polynomial kernel gamma"),
    ("--coef", "kernel", "coef_r", float, "polynomial kernel constant r"),
    ("--degree", "kernel", "degree", int, "polynomial kernel degree"),
]

IMPUTE_FLAGS = [
    ("--max-depth", "imputation", "max_depth", int, "imputation tree depth limit"),
    ("--min-leaf", "imputation", "min_leaf", int, "imputation tree minimum leaf size"),
    ("--min-impurity-decrease", "imputation", "min_impurity_decrease", float, "minimum gain to split"),
]

_DEFAULTS = ExperimentConfig(dataset="-")


def _default(section, name):
    obj = getattr(_DEFAULTS, section) if section else _DEFAULTS
    return getattr(obj, name)


def _add_table(parser, table):
    for flag, section, name, typ, text in table:
        d = _default(section, name)
        if isinstance(d, tuple):
            d = ",".join(map(str, d))
        if "default:" not in text:
            text = f"{text} (default: {d})"
        parser.add_argument(flag, dest=f"opt_{section}_{name}", type=typ, default=None, metavar=name.upper(), help=text)


def _apply_table(cfg: ExperimentConfig, args, table) -> ExperimentConfig:
    """Override config values with every flag the user actually gave."""
    by_section = {}
    for _, section, name, _, _ in table:
        v = getattr(args, f"opt_{section}_{name}", None)
        if v is not None:
            by_section.setdefault(section, {})[name] = v
    try:
        top = by_section.pop("", {})
        prune_kw = by_section.pop("prune", None)
        for section, kw in by_section.items():
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **kw)})
        if prune_kw is not None:
            if prune_kw.get("max_rounds") == 0:
                cfg = replace(cfg, prune=None)
            else:
                base = cfg.prune if cfg.prune is not None else _DEFAULTS.prune
                cfg = replace(cfg, prune=replace(base, **prune_kw))
        if top:
            cfg = replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _base_config(args, dataset):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        return replace(cfg, dataset=str(Path(dataset).resolve()), base_dir=None)
    return ExperimentConfig(dataset=dataset)


def _load(path, stage="load"):
    path = Path(path)
    if not path.is_file():
        raise CliError(stage, f"file not found: {path}")
    try:
        return load_dataset(path)
    except ParseError as exc:
        raise CliError(stage, f"{path}: {exc}") from exc


# ------------------------------------------------------------------ commands

def cmd_audit(args):
    ds = _load(args.data)
    rep = audit(ds)
    print(rep.format_table())
    if args.json:
        rep.to_json(args.json)
    return EXIT_OK


def cmd_impute(args):
    ds = _load(args.data)
    cfg = _apply_table(ExperimentConfig(dataset=args.data), args, IMPUTE_FLAGS)
    out = impute_all(ds, cfg.imputation, seed=args.seed, include_label=args.include_label)
    write_dataset(out, args.output)
    entries = fill_log(ds, out)
    if args.fill_log:
        write_fill_log(entries, args.fill_log)
    print(f"filled {len(entries)} cells in {len(ds)} records -> {args.output}")
    return EXIT_OK


def cmd_split(args):
    ds = _load(args.data)
    try:
        spec = PartitionSpec(args.train_fraction, not args.no_stratify, args.seed)
        train, test = split(ds, spec)
    except ValueError as exc:
        raise CliError("split", str(exc)) from exc
    write_dataset(train, args.train_out)
    write_dataset(test, args.test_out)
    def counts(ds):
        c = ds.class_counts()
        return f"{len(ds)} ({c[BENIGN]} benign / {c[MALIGNANT]} malignant)"

    print(f"train {counts(train)}  test {counts(test)}")
    return EXIT_OK


def cmd_train(args):
    ds = _load(args.data)
    if ds.n_missing():
        raise CliError("train", f"{args.data} has {ds.n_missing()} MISSING cells; run 'impute' first")
    cfg = _apply_table(_base_config(args, args.data), args, MODEL_FLAGS)
    if args.include_bi_rads:
        cfg = replace(cfg, encoding=EncodingConfig(include_non_predictive=True))
    model = cfg.make_model(args.model)
    try:
        model.fit(ds, seed=args.seed, backend=cfg.backend)
    except TrainingError as exc:
        raise CliError("train", str(exc)) from exc
    save_model(model, args.output)
    print(f"{args.model} model -> {args.output}")
    return EXIT_OK


def cmd_evaluate(args):
    try:
        model = load_model(args.model)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise CliError("load model", f"{args.model}: {exc}") from exc
    ds = _load(args.data)
    try:
        classes, scores = model.predict(ds)
    except (EncodingError, ValueError) as exc:
        raise CliError("evaluate", f"model and data do not match: {exc}") from exc
    rep = evaluate(model.kind, args.partition, classes, scores, ds.labels)
    out = Path(args.out_dir)
    rep.write(out / f"{model.kind}_{args.partition}.json")
    for kind, curve in rep.curves.items():
        curve.to_csv(out / f"{model.kind}_{args.partition}_{kind}.csv")
    m = rep.metrics
    auc = "n/a" if rep.auc is None else f"{rep.auc:.3f}"
    print(f"{model.kind} {args.partition}: accuracy {pct(m.accuracy).strip()}  sensitivity "
          f"{pct(m.sensitivity).strip()}  specificity {pct(m.specificity).strip()}  AUC {auc}")
    return EXIT_OK


def cmd_run(args):
    path = args.config or args.config_pos
    if not path:
        raise CliError("config", "no config file given (use --config PATH)")
    cfg = load_config(path)
    extra = {}
    if args.seed_override is not None:
        cfg = cfg.with_overrides(seeds=(args.seed_override,))
        extra["seed_override"] = args.seed_override
    if args.jobs is not None:
        cfg = cfg.with_overrides(jobs=args.jobs)
    if args.backend is not None:
        cfg = cfg.with_overrides(backend=args.backend)
    if args.output_dir is not None:
        cfg = cfg.with_overrides(output_dir=str(Path(args.output_dir).resolve()))
    manifest = run_experiment(cfg, extra)
    print(manifest.summary["text"])
    print(f"\nartifacts: {manifest.root}")
    for f in manifest.failures:
        print(f"FAILED seed {f['seed']} {f['model']} during {f['stage']}: {f['error']}", file=sys.stderr)
    return EXIT_OK if manifest.ok else EXIT_PARTIAL


def cmd_compare(args):
    try:
        reports = load_reports(args.reports)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError("compare", f"cannot read reports: {exc}") from exc
    out = compare_report(reports)
    print(out["text"])
    if out["auc_ranking"]:
        print("\nAUC ranking: " + " > ".join(out["auc_ranking"]))
    if args.json:
        p = Path(args.json)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps({"rows": out["rows"], "auc_ranking": out["auc_ranking"]}, indent=2) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    # table-driven flags spell out their real default themselves
    def _get_help_string(self, action):
        if "(default:" in (action.help or ""):
            return action.help
        return super()._get_help_string(action)


def build_parser():
    fmt = _HelpFormatter
    p = argparse.ArgumentParser(prog="mammo", description="Mammographic mass severity classifiers.",
                                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output on stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    a = sub.add_parser("audit", help="count valid, missing and out-of-domain values", formatter_class=fmt)
    a.add_argument("data", help="dataset file")
    a.add_argument("--json", metavar="PATH", default=None, help="also write the audit as JSON")
    a.set_defaults(func=cmd_audit)

    i = sub.add_parser("impute", help="fill MISSING cells with tree predictions", formatter_class=fmt)
    i.add_argument("data", help="dataset file")
    i.add_argument("output", help="imputed dataset to write")
    i.add_argument("--fill-log", metavar="PATH", default=None, help="JSON list of filled cells")
    i.add_argument("--include-label", action="store_true", help="let the trees use the class label")
    i.add_argument("--seed", type=int, default=0, help="seed (imputation is deterministic)")
    _add_table(i, IMPUTE_FLAGS)
    i.set_defaults(func=cmd_impute)

    s = sub.add_parser("split", help="seeded train/test partition", formatter_class=fmt)
    s.add_argument("data", help="dataset file")
    s.add_argument("train_out", help="training partition to write")
    s.add_argument("test_out", help="test partition to write")
    s.add_argument("--train-fraction", type=float, default=_DEFAULTS.partition.train_fraction,
                   help="share of records in the training partition")
    s.add_argument("--no-stratify", action="store_true", help="split without preserving class shares")
    s.add_argument("--seed", type=int, default=0, help="shuffle seed")
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train one model on an imputed dataset", formatter_class=fmt)
    t.add_argument("data", help="imputed training dataset")
    t.add_argument("output", help="model JSON to write")
    t.add_argument("--model", required=True, choices=MODEL_KINDS, help="classifier kind")
    t.add_argument("--config", metavar="PATH", default=None,
                   help="experiment config supplying hyperparameters; flags override it")
    t.add_argument("--seed", type=int, default=0, help="training seed")
    t.add_argument("--include-bi-rads", action="store_true", help="feed the BI-RADS column to MLP and SVM")
    _add_table(t, MODEL_FLAGS)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a dataset with a saved model", formatter_class=fmt)
    e.add_argument("model", help="model JSON")
    e.add_argument("data", help="imputed dataset to score")
    e.add_argument("--out-dir", default="reports", help="directory for the report JSON and curve CSVs")
    e.add_argument("--partition", default="test", help="partition name recorded in the report")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("run", help="run a full experiment from a config file", formatter_class=fmt)
    r.add_argument("config_pos", nargs="?", metavar="CONFIG", default=None, help="config file")
    r.add_argument("--config", default=None, help="config file (same as the positional argument)")
    r.add_argument("--seed-override", type=int, default=None, help="run this single seed instead of the list")
    r.add_argument("--jobs", type=int, default=None, help="seeds run concurrently (default: from config)")
    r.add_argument("--backend", choices=("numba", "numpy"), default=None,
                   help="kernel backend (default: numba unless MAMMO_DISABLE_NUMBA is set)")
    r.add_argument("--output-dir", default=None, help="artifact root (default: from config)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="tabulate evaluation reports side by side", formatter_class=fmt)
    c.add_argument("reports", nargs="+", help="report JSON files")
    c.add_argument("--json", metavar="PATH", default=None, help="also write the comparison as JSON")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mammo {args.command}: {exc}", file=sys.stderr)
    except ConfigError as exc:
        print(f"mammo {args.command}: config: {exc}", file=sys.stderr)
    except DataError as exc:
        print(f"mammo {args.command}: {exc}", file=sys.stderr)
    except ModelError as exc:
        print(f"mammo {args.command}: model: {exc}", file=sys.stderr)
    except (EncodingError, ParseError) as exc:
        print(f"mammo {args.command}: data: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"mammo {args.command}: io: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
