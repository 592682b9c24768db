"""Online algorithms.

fractional_pd_run      exponential-penalty primal-dual, solved exactly by event-driven water-filling
det_integral_run       deterministic integral primal-dual with threshold tau
greedy_integral_run    largest nonnegative marginal profit
free_disposal_run      the f = 0 parameterisation charged at the true f
single_resource_canonical_run / nonuniform_single_run
                       canonical allocation on one resource, accounted with per-unit prices
"""
import math

import numpy as np

from . import kernels
from .kernels import KIND_ALLOCATE, KIND_BUYBACK
from .model import (
    AllocationDistribution,
    EventTrace,
    ProfitLedger,
    RunResult,
    WeightMatrixInstance,
    allocate_with_buyback,
    ledger_from_trace,
    per_arrival_from_trace,
)
from .numerics import PenaltySpec, beta_of, small_f_params, w_hat_star

ALGORITHMS = ("fractional", "det", "greedy", "free-disposal")


def _require_unit_capacity(instance):
    if not np.all(instance.capacities == 1.0):
        raise ValueError("this algorithm needs unit capacities")


def _require_integral(instance):
    if not instance.unit():
        raise ValueError("integral algorithms need unit demands and unit capacities")


def fractional_pd_run(instance, pen, charge_f=None):
    """Run the exponential-penalty algorithm; ``charge_f`` overrides the f used in the ledger."""
    if not isinstance(pen, PenaltySpec) or not (pen.lam > 1.0 and pen.tau > 0.0):
        raise ValueError(f"penalty needs lam > 1 and tau > 0, got {pen}")
    if not np.all(np.isfinite(instance.weights)):
        raise ValueError("weights must be finite")
    _require_unit_capacity(instance)
    T, n = instance.weights.shape
    f = instance.f if charge_f is None else float(charge_f)
    width = T + 2
    BW = np.zeros((n, width))
    BM = np.zeros((n, width))
    BM[:, 0] = 1.0
    H = np.zeros(n, dtype=np.int64)
    C = np.ones(n, dtype=np.int64)
    beta = np.zeros(n)
    ev_i, ev_j, ev_k, ev_w, ev_m, ne, phases = kernels.fractional_core(
        np.ascontiguousarray(instance.weights), instance.demands, pen.lam, pen.tau, BW, BM, H, C, beta, 4 * (T + n) + 16
    )
    trace = EventTrace(ev_i[:ne], ev_j[:ne], ev_k[:ne], ev_w[:ne], ev_m[:ne])
    dists = []
    scale = max(1.0, instance.max_weight)
    for j in range(n):
        d = AllocationDistribution(1.0, slots=C[j] + 2)
        d.c = int(C[j])
        d.W[: d.c] = BW[j, H[j]:H[j] + C[j]]
        d.M[: d.c] = BM[j, H[j]:H[j] + C[j]]
        fresh = beta_of(d, pen)
        if abs(fresh - beta[j]) > 1e-9 * scale:
            raise RuntimeError(f"cached beta of node {j} drifted: {beta[j]} vs {fresh}")
        dists.append(d)
    return RunResult(
        ledger_from_trace(trace, f),
        trace,
        dists,
        per_arrival_from_trace(trace, f, T),
        info={"beta": beta, "phases": int(phases), "pen": pen},
    )


def free_disposal_run(instance):
    return fractional_pd_run(instance, small_f_params(0.0), charge_f=instance.f)


def det_integral_run(instance, tau, accept_zero=False):
    """Reassign to argmax_j (w_ij - tau * held_j) when that score is positive.

    ``accept_zero`` also accepts a zero score on a positive-weight edge.
    """
    _require_integral(instance)
    if tau < 1.0 + instance.f - 1e-12:
        raise ValueError(f"tau must be at least 1 + f = {1 + instance.f}")
    T, n = instance.weights.shape
    held = np.zeros(n)
    dists = [AllocationDistribution() for _ in range(n)]
    ledger = ProfitLedger()
    trace = EventTrace()
    for i in range(T):
        w = instance.weights[i]
        score = np.where(w > 0, w - tau * held, -np.inf)
        j = int(np.argmax(score))
        if score[j] > 0 or (accept_zero and score[j] == 0):
            allocate_with_buyback(dists[j], ledger, trace, i, j, float(w[j]), 1.0, f=instance.f)
            held[j] = w[j]
    return RunResult(ledger, trace, dists, per_arrival_from_trace(trace, instance.f, T), info={"tau": tau})


def greedy_integral_run(instance):
    """Largest nonnegative marginal profit w_ij - (1+f) held_j on a positive-weight edge."""
    return det_integral_run(instance, 1.0 + instance.f, accept_zero=True)


def _canonical_step(trace, i, j, w_prev, w_new, wh, share):
    """Price-equivalent events for raising the running max of one (mini) node."""
    delta = w_new - w_prev
    lw = math.log(wh)
    m = share * delta / (w_new * lw)
    trace.append(i, j, KIND_BUYBACK, w_new / wh, m)
    trace.append(i, j, KIND_ALLOCATE, w_new, m)


def single_resource_canonical_run(stream, f):
    """Canonical allocation on one resource.

    Each new maximum w_i > w_prev adds reward (w_i - w_prev)/ln(w_hat) and costs
    (1+f)(w_i - w_prev)/(w_hat ln(w_hat)).  The trace stores one buyback and one
    allocate record per new maximum whose weight*mass products equal those
    amounts.  With f = 0 the rule is keep-the-max on a real distribution.
    """
    stream = np.asarray(stream, dtype=float)
    inst = WeightMatrixInstance.from_matrix(stream.reshape(-1, 1), f)
    wh = w_hat_star(f)
    if wh <= 1.0:
        res = det_integral_run(inst, 1.0)
        res.info["w_hat"] = 1.0
        return res
    trace = EventTrace()
    w_max = 0.0
    for i, w in enumerate(stream.tolist()):
        if w > w_max:
            _canonical_step(trace, i, 0, w_max, w, wh, 1.0)
            w_max = w
    return RunResult(
        ledger_from_trace(trace, f),
        trace,
        [],
        per_arrival_from_trace(trace, f, len(stream)),
        model="discounted",
        info={"w_hat": wh, "w_max": w_max},
    )


def nonuniform_single_run(stream, demands, K, f, capacity=1.0):
    """K mini-nodes of size 1/K; arrival i goes to the floor(K d_i) lowest high-water marks."""
    stream = np.asarray(stream, dtype=float)
    d = np.asarray(demands, dtype=float) / capacity
    if np.any(d > 1.0 + 1e-12):
        raise ValueError("demands must not exceed the capacity")
    K = int(K)
    if K < 1:
        raise ValueError("K must be positive")
    wh = w_hat_star(f)
    psi = np.zeros(K)
    trace = EventTrace()
    share = capacity / K
    for i, (w, di) in enumerate(zip(stream.tolist(), d.tolist())):
        k = int(math.floor(K * di + 1e-9))
        for j in np.argsort(psi, kind="stable")[:k].tolist():
            if w > psi[j]:
                if wh <= 1.0:
                    trace.append(i, j, KIND_BUYBACK, psi[j], share)
                    trace.append(i, j, KIND_ALLOCATE, w, share)
                else:
                    _canonical_step(trace, i, j, psi[j], w, wh, share)
                psi[j] = w
    return RunResult(
        ledger_from_trace(trace, f),
        trace,
        [],
        per_arrival_from_trace(trace, f, len(stream)),
        model="discounted",
        info={"w_hat": wh, "high_water": psi},
    )


def run_algorithm(name, instance, pen=None, tau=None):
    """Dispatch for the four matching algorithms by name."""
    from .numerics import det_tau, matching_params

    if name == "fractional":
        return fractional_pd_run(instance, pen or matching_params(instance.f))
    if name == "det":
        return det_integral_run(instance, tau if tau is not None else det_tau(instance.f))
    if name == "greedy":
        return greedy_integral_run(instance)
    if name == "free-disposal":
        return free_disposal_run(instance)
    raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}")
