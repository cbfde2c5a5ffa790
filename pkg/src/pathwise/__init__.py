"""Pathwise stochastic calculus on sampled price paths.

Lebesgue partitions, quadratic covariation, simple-strategy integrals, the
pathwise Burkholder-Davis-Gundy hedge and a windowed Picard solver for
equations driven by a single path.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    BoundViolation,
    DomainError,
    ParseError,
    PartitionTooLarge,
    PathwiseError,
    PreconditionError,
    ValidationError,
)
from .paths import AdaptedProcess, SampledPath, generate_random_walk, load_path, save_path  # noqa: E402
from .lebesgue import Partition, merged_partition, resolution_level, scalar_partition  # noqa: E402
from .quadvar import QVMatrixPath, qv, qv_at_level, qv_level, qv_trace  # noqa: E402
from .strategy import StrategyRealization, StrategyRule, integral_path, integral_qv, integrate, realize  # noqa: E402
from .bdg import hedge_sequence, verify_domination, verify_pathwise_bdg  # noqa: E402
from .sde import DriftProcess, FunctionalCoefficient, SDEProblem, Solution, solve, solve_direct  # noqa: E402
