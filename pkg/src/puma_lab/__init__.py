"""Progressive unmasking (PUMA) for masked diffusion on exactly enumerable distributions."""

from .core import ContractError, Vocab, TimeGrid, derive_rng
from .dist import TabularDistribution, ZmSpec, build_tabular, build_zm, zm_family
from .oracle import exact_posterior, posterior_table
from .policy import PolicySpec
from .stages import KSchedule
from .learner import TabularMDM

__version__ = "0.1.0"

__all__ = [
    "ContractError", "Vocab", "TimeGrid", "derive_rng",
    "TabularDistribution", "ZmSpec", "build_tabular", "build_zm", "zm_family",
    "exact_posterior", "posterior_table", "PolicySpec", "KSchedule", "TabularMDM",
]
