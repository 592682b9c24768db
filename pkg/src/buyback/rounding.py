"""Randomized integral algorithms built on a fractional plan.

lossless_round_single   one shared offset eta turns a single-resource fractional plan into
                        integral allocations with the same expected profit
ak_randomized_single    geometric price levels w_hat**(eta + l - 2) with per-arrival coins
large_capacity_round    independent per-arrival sampling from a scaled-down matching plan
"""
import math
from dataclasses import dataclass

import numpy as np

from ._accel import njit
from .engine import det_integral_run, fractional_pd_run
from .model import (
    AllocationDistribution,
    EventTrace,
    ProfitLedger,
    RunResult,
    WeightMatrixInstance,
    allocate_with_buyback,
    per_arrival_from_trace,
)
from .numerics import matching_params, w_hat_star


@dataclass(frozen=True)
class RoundingSeed:
    eta: float
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")

    @classmethod
    def from_seed(cls, seed):
        """Draw eta from ``default_rng(seed)``; later draws use the same seed."""
        return cls(float(np.random.default_rng(seed).random()), int(seed))


def _as_seed(seed):
    return seed if isinstance(seed, RoundingSeed) else RoundingSeed.from_seed(seed)


def _integral_run(picks, weights, f, T, capacity=1.0):
    """Replay (arrival, weight) picks on one node of the given capacity."""
    dist = AllocationDistribution(capacity)
    ledger = ProfitLedger()
    trace = EventTrace()
    for i, w in picks:
        allocate_with_buyback(dist, ledger, trace, i, 0, float(w), 1.0, f=f)
    return RunResult(ledger, trace, [dist], per_arrival_from_trace(trace, f, T))


# lossless rounding


def _check_plan(x, weights):
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if x.shape != weights.shape or x.ndim != 1:
        raise ValueError(f"fractional masses {x.shape} and weights {weights.shape} must be aligned 1-d sequences")
    if np.any(x < 0) or np.any(x > 1.0 + 1e-12):
        raise ValueError("fractional masses must lie in [0, 1]")
    return x, weights


def lossless_allocations(x, eta):
    """Mask of arrivals t whose interval [S_{t-1}, S_t) holds a point of eta + {0, 1, ...}."""
    S = np.concatenate(([0.0], np.cumsum(x)))
    hits = np.ceil(S[1:] - eta) - np.ceil(S[:-1] - eta)
    return hits > 0


def lossless_round_single(x, weights, f, seed):
    x, weights = _check_plan(x, weights)
    rs = _as_seed(seed)
    mask = lossless_allocations(x, rs.eta)
    res = _integral_run(((i, weights[i]) for i in np.flatnonzero(mask)), weights, f, len(x))
    res.info.update(eta=rs.eta)
    return res


def _profit_of_mask(mask, weights, f):
    w = weights[mask]
    if w.size == 0:
        return 0.0
    return float(w.sum() - (1.0 + f) * w[:-1].sum())


def eta_breakpoints(x):
    """Sorted cut points of [0, 1) between which the rounding decisions are constant."""
    S = np.cumsum(x)
    return np.unique(np.concatenate(([0.0, 1.0], S - np.floor(S))))


def lossless_expectation(x, weights, f):
    """Exact expected profit and per-arrival allocation probabilities over eta ~ U[0, 1)."""
    x, weights = _check_plan(x, weights)
    cuts = eta_breakpoints(x)
    profit = 0.0
    marginals = np.zeros(len(x))
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b <= a:
            continue
        mask = lossless_allocations(x, 0.5 * (a + b))
        profit += (b - a) * _profit_of_mask(mask, weights, f)
        marginals += (b - a) * mask
    return profit, marginals


def fractional_plan_single(stream, f, pen=None):
    """Per-arrival masses x~ of the fractional algorithm on one resource, and its run."""
    inst = WeightMatrixInstance.from_matrix(np.asarray(stream, dtype=float).reshape(-1, 1), f)
    res = fractional_pd_run(inst, pen or matching_params(f))
    return res.trace.allocated_mass(inst.T, 1)[:, 0], res


# randomized single-resource algorithm


@njit
def _ak_accepts(v, wh, u):
    T = v.shape[0]
    out = np.zeros(T, dtype=np.bool_)
    eta = u[0]
    lw = math.log(wh)
    lmax = 0
    for i in range(T):
        if v[i] <= 0.0:
            continue
        # largest level l with wh**(eta + l - 2) <= v[i]
        l = int(math.floor(math.log(v[i]) / lw - eta + 2.0))
        while wh ** (eta + l - 2.0) > v[i]:
            l -= 1
        while wh ** (eta + l - 1.0) <= v[i]:
            l += 1
        if l >= 1 and l > lmax:
            if u[i + 1] < wh ** (eta + l - 2.0) / v[i]:
                out[i] = True
            lmax = l
    return out


@njit
def _ak_batch(v, w, wh, f, U):
    R = U.shape[0]
    profits = np.zeros(R)
    for r in range(R):
        acc = _ak_accepts(v, wh, U[r])
        held = 0.0
        p = 0.0
        for i in range(w.shape[0]):
            if acc[i]:
                p += w[i] - (1.0 + f) * held
                held = w[i]
        profits[r] = p
    return profits


def _normalized(stream):
    w = np.asarray(stream, dtype=float)
    pos = w[w > 0]
    if pos.size == 0:
        return w, w.copy()
    return w, w / pos[0]


def _ak_uniforms(seed, T):
    if isinstance(seed, RoundingSeed):
        return np.concatenate(([seed.eta], np.random.default_rng(seed.rng_seed).random(T)))
    return np.random.default_rng(seed).random(T + 1)


def ak_randomized_single(stream, f, seed):
    """Accept arrival i at level l > l_max with probability w_hat**(eta+l-2) / w_i.

    Weights are normalised by the first positive weight; the ledger is in the
    original units.  With f = 0 (w_hat = 1) the rule is keep-the-max.
    """
    w, v = _normalized(stream)
    T = len(w)
    wh = w_hat_star(f)
    if wh <= 1.0:
        res = det_integral_run(WeightMatrixInstance.from_matrix(w.reshape(-1, 1), f), 1.0)
        res.info["w_hat"] = 1.0
        return res
    u = _ak_uniforms(seed, T)
    acc = _ak_accepts(v, wh, u)
    res = _integral_run(((i, w[i]) for i in np.flatnonzero(acc)), w, f, T)
    res.info.update(eta=float(u[0]), w_hat=wh)
    return res


def ak_profit_batch(stream, f, reps, seed=0, uniforms=None):
    """Profits of ``reps`` independent runs; row r uses uniforms U[r] = (eta, coins)."""
    w, v = _normalized(stream)
    wh = w_hat_star(f)
    if wh <= 1.0:
        return np.full(int(reps), float(w.max()) if w.size else 0.0)
    U = np.random.default_rng(seed).random((int(reps), len(w) + 1)) if uniforms is None else np.asarray(uniforms)
    return _ak_batch(v, w, wh, float(f), U)


# large-capacity rounding


def kappa_for(s_min):
    s_min = float(s_min)
    return min(1.0, math.sqrt(2.0 * math.log(s_min) / s_min)) if s_min > 1 else 0.0


@njit
def _lc_sample(Z, kappa, u):
    T, n = Z.shape
    out = np.full(T, -1, dtype=np.int64)
    for i in range(T):
        acc = 0.0
        for j in range(n):
            acc += (1.0 - kappa) * Z[i, j]
            if u[i] < acc:
                out[i] = j
                break
    return out


@njit
def _lc_batch(W, Z, caps, kappa, f, U):
    T, n = Z.shape
    R = U.shape[0]
    profits = np.zeros(R)
    counts = np.zeros((T, n), dtype=np.int64)
    held = np.zeros((n, caps.max()))
    cnt = np.zeros(n, dtype=np.int64)
    for r in range(R):
        cnt[:] = 0
        p = 0.0
        picks = _lc_sample(Z, kappa, U[r])
        for i in range(T):
            j = picks[i]
            if j < 0:
                continue
            counts[i, j] += 1
            w = W[i, j]
            if cnt[j] < caps[j]:
                held[j, cnt[j]] = w
                cnt[j] += 1
            else:
                k = 0
                for q in range(1, caps[j]):
                    if held[j, q] < held[j, k]:
                        k = q
                p -= (1.0 + f) * held[j, k]
                held[j, k] = w
            p += w
        profits[r] = p
    return profits, counts


def _plan(instance, z):
    if isinstance(z, EventTrace):
        z = z.allocated_mass(instance.T, instance.n)
    z = np.asarray(z, dtype=float)
    if z.shape != instance.weights.shape:
        raise ValueError(f"plan shape {z.shape} does not match the instance {instance.weights.shape}")
    if np.any(z < 0) or np.any(z.sum(axis=1) > 1.0 + 1e-9):
        raise ValueError("plan rows must be nonnegative and sum to at most 1")
    caps = instance.capacities
    if np.any(caps < 1) or np.any(caps != np.round(caps)):
        raise ValueError("large-capacity rounding needs integer capacities >= 1")
    return np.ascontiguousarray(z), caps.astype(np.int64)


def large_capacity_round(instance, z, seed):
    """Sample j* = j with probability (1 - kappa) z_ij, one unit per arrival; over
    capacity, buy back the lowest held weight.  ``z`` is a T x n plan or a trace."""
    z, caps = _plan(instance, z)
    kappa = kappa_for(caps.min())
    u = np.random.default_rng(seed.rng_seed if isinstance(seed, RoundingSeed) else seed).random(instance.T)
    picks = _lc_sample(z, kappa, u)
    f = instance.f
    dists = [AllocationDistribution(c) for c in caps]
    ledger = ProfitLedger()
    trace = EventTrace()
    for i, j in enumerate(picks.tolist()):
        if j >= 0:
            allocate_with_buyback(dists[j], ledger, trace, i, j, float(instance.weights[i, j]), 1.0, f=f)
    return RunResult(ledger, trace, dists, per_arrival_from_trace(trace, f, instance.T), info={"kappa": kappa})


def large_capacity_batch(instance, z, reps, seed=0):
    """Profits of ``reps`` independent roundings and the (T, n) count of picks per edge."""
    z, caps = _plan(instance, z)
    kappa = kappa_for(caps.min())
    U = np.random.default_rng(seed).random((int(reps), instance.T))
    profits, counts = _lc_batch(np.ascontiguousarray(instance.weights), z, caps, kappa, float(instance.f), U)
    return profits, counts, kappa
