"""Edge-weighted online bipartite matching with costly cancellations."""
from .model import (
    AllocationDistribution,
    Arrival,
    EventTrace,
    ProfitLedger,
    RunResult,
    WeightMatrixInstance,
    allocate_with_buyback,
    bottom_weight,
    load_instance,
    quantile,
    replay,
    save_instance,
)
from .numerics import (
    CanonicalParams,
    PenaltySpec,
    beta_of,
    canonical_profit,
    canonical_quantile,
    det_tau,
    gamma_det,
    gamma_gen,
    lambert_w_minus1,
    large_f_params,
    matching_params,
    psi_integral,
    small_f_params,
    w_hat_star,
)

__version__ = "0.1.0"
