"""Max-min fair cooperative NOMA under finite-blocklength coding."""

__version__ = "0.1.0"

from .allocator import (
    CNOMA_MRC,
    CNOMA_SC,
    NOMA,
    OMA,
    AllocationProblem,
    AllocationResult,
    solve,
    solve_noma,
    solve_oma,
    solve_optimal_cnoma,
    solve_suboptimal_cnoma,
)
from .fbl import decoding_error, fbl_rate, gaussian_q, gaussian_q_inv
from .link import Allocation, ChannelTriple, RateAssignment, SystemBudget
from .pairing import (
    PairingConfig,
    PairingResult,
    UserSet,
    exhaustive_pairing,
    jain_index,
    near_far_pairing,
    noma_pairing,
    propose_cnoma_pairing,
)
from .topology import CellConfig, run_trials
