"""Sum-product and Bethe partition sums on double-edge normal factor graphs."""

from .bethe import BetheBreakdown, solve, z_bethe, z_edge, z_factor
from .errors import (
    BudgetExceededError,
    ComplexEigenvalueError,
    ConvergenceError,
    DefgError,
    DegenerateMessageError,
    GraphSchemaError,
    InvariantViolation,
    NotHermitianError,
    NotPSDError,
    VanishingEdgeSumError,
)
from .exact import (
    b_matrix,
    cycle_spectral_z,
    exact_marginal,
    exact_partition_sum,
    naive_permanent,
    ryser_permanent,
)
from .graph import DeNfg, Edge, EdgeKind, Factor, build_graph, load_graph, save_graph, validate_psd, validate_structure
from .spa import MessageState, SpaConfig, SpaResult, beliefs, init_messages, run_spa
from .tensor import contract, hermitian_eig, psd_check, psd_factorize

__version__ = "0.1.0"
