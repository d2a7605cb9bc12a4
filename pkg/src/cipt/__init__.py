"""Local permutation tests for conditional independence of discrete X and Y given Z."""

from .core import AxisSpec, DataError, Dataset, SeedTree, validate_dataset
from .binning import (BinnedDataset, CategoricalPartition, DoublePartition, Partition,
                      assign_bins, make_equal_partition)
from .statistics import h_kernel, t_ci, u_stat, u_stat_naive, u_stat_weighted
from .permutation import (CalibrationResult, LocalPermutation, TestConfig, TestOutcome,
                          count_permutations, exact_pvalue, mc_pvalue, poissonize,
                          randomized_decision, run_test)

__version__ = "0.1.0"
