"""Game-optimal combination of conflicting probability distributions via KL centroids."""
from .centroid import (
    SHULMAN_BOUND,
    CentroidResult,
    ConvergenceError,
    equidistance_check,
    grid_oracle_weighting,
    induced_weighting,
)
from .combiner import (
    CombinationResult,
    NoPlausibleDistributionError,
    PlausibleBox,
    combine,
    combine_binary,
    combine_independent,
    game_utility,
    lex_compare,
    optimal_action,
)
from .distributions import (
    BernoulliProduct,
    DimensionError,
    FiniteDistribution,
    UndefinedGainError,
    bernoulli,
    information_gain,
    kl_divergence,
    kl_divergence_product,
    mixture,
)
from .extreme import binary_extremes, extreme_subset

__version__ = "0.1.0"
