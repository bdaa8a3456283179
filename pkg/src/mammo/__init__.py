"""Mammographic mass severity prediction with CHAID, a pruned MLP and a polynomial-kernel SVM."""
from .dataset import Dataset, audit, encode, load_dataset
from .imputation import impute_all
from .partition import PartitionSpec, split

__version__ = "0.1.0"

__all__ = ["Dataset", "PartitionSpec", "audit", "encode", "impute_all", "load_dataset", "split", "__version__"]
