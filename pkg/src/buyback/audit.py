"""Dual certificates for recorded runs.

A trace is replayed against the primal-dual update rules: every allocation
step raises alpha_i and beta_j, and the audit checks per-step ratios,
terminal dual feasibility, and the sandwich OPT <= Dual <= gamma * profit.
beta is always recomputed from the replayed distributions, never taken from
the engine.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._accel import njit
from .kernels import KIND_ALLOCATE, KIND_BUYBACK, beta_exp, exp_sum, insert_atom, remove_bottom
from .model import AllocationDistribution, ledger_from_trace
from .numerics import beta_of
from .offline import opt_matching

ERR_NONE = 0
ERR_PIECE_SUM = 1
ERR_GREEDY = 2
ERR_DIVERGENCE = 3
ERR_ORDER = 4
ERR_STORAGE = 5
_MESSAGES = {
    ERR_PIECE_SUM: "allocated mass differs from the buyback pieces paired with it",
    ERR_GREEDY: "buyback piece is not taken from the lowest held atom",
    ERR_DIVERGENCE: "replayed beta diverges from the water-filling stopping rule (trace and penalty disagree?)",
    ERR_ORDER: "buyback pieces without a matching allocation",
    ERR_STORAGE: "atom storage overflow during replay",
}


class AuditError(RuntimeError):
    pass


@dataclass
class DualCertificate:
    alpha: np.ndarray
    beta: np.ndarray
    gamma_target: float
    cumulative_dual: float
    cumulative_primal: float


@dataclass
class AuditReport:
    feasible: bool
    max_constraint_violation: float
    dual_over_profit: float
    opt_over_dual: float
    per_step_ratio_max: float
    step_ok: bool = True
    dual_covers_opt: bool = True
    gamma_covers_dual: bool = True
    profit: float = 0.0
    dual: float = 0.0
    opt: float = 0.0
    certificate: DualCertificate = field(default=None, repr=False)

    @property
    def passed(self):
        return self.feasible and self.step_ok and self.dual_covers_opt and self.gamma_covers_dual

    def to_dict(self):
        d = {k: v for k, v in asdict(self).items() if k != "certificate"}
        d["passed"] = self.passed
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def piece_increments(dist, pen, w_from, w_to, delta):
    """(d_alpha, d_beta) for moving mass delta from the bottom atom at w_from to w_to."""
    A = pen.tau * exp_sum(dist.W, dist.M, dist.h, dist.c, float(w_from), float(w_to), pen.lam) if w_to > w_from else 0.0
    b0 = beta_of(dist, pen)
    grow = A * math.expm1(delta * pen.loglam)
    return pen.loglam * (w_to - b0 + A) * delta - grow, grow


@njit
def _audit_fractional_core(arrival, node, kind, weight, mass, weights, demand, lam, tau, f, gamma, eps_step, tol):
    T, n = weights.shape
    E = kind.shape[0]
    loglam = math.log(lam)
    width = E + 4
    BW = np.zeros((n, width))
    BM = np.zeros((n, width))
    BM[:, 0] = 1.0
    H = np.zeros(n, dtype=np.int64)
    C = np.ones(n, dtype=np.int64)
    beta = np.zeros(n)
    alpha = np.zeros(T)
    got = np.zeros(n, dtype=np.bool_)
    given = 0.0
    dual = 0.0
    primal = 0.0
    ratio_max = 0.0
    step_excess = -np.inf
    pw = np.empty(width + 1)
    pm = np.empty(width + 1)
    e = 0
    start = 0
    while e < E:
        i = arrival[e]
        j = node[e]
        if kind[e] == KIND_BUYBACK:
            e += 1
            continue
        # allocate event e pairs with the buyback run start..e-1 on the same (i, j)
        w = weight[e]
        m = mass[e]
        total = 0.0
        for p in range(start, e):
            if arrival[p] != i or node[p] != j:
                return alpha, beta, dual, primal, ratio_max, step_excess, ERR_ORDER, p, 0.0
            total += mass[p]
        if abs(total - m) > 1e-12 * max(1.0, m):
            return alpha, beta, dual, primal, ratio_max, step_excess, ERR_PIECE_SUM, e, total - m
        for p in range(start, e):
            wp = weight[p]
            d = mass[p]
            if wp != BW[j, H[j]] or d > BM[j, H[j]] + 1e-12:
                return alpha, beta, dual, primal, ratio_max, step_excess, ERR_GREEDY, p, BW[j, H[j]]
            b0 = beta_exp(BW[j], BM[j], H[j], C[j], lam, tau)
            A = tau * exp_sum(BW[j], BM[j], H[j], C[j], wp, w, lam) if w > wp else 0.0
            grow = A * math.expm1(d * loglam)
            da = loglam * (w - b0 + A) * d - grow
            dd = da + grow
            dp = (w - (1.0 + f) * wp) * d
            alpha[i] += da
            dual += dd
            primal += dp
            excess = dd - gamma * dp
            if excess > step_excess:
                step_excess = excess
            if d > 1e-9 and dp > 0.0 and dd / dp > ratio_max:
                ratio_max = dd / dp
            h, c, k, unfilled = remove_bottom(BW[j], BM[j], H[j], C[j], d, pw, pm)
            H[j] = h
            C[j] = c
            h, c, ok = insert_atom(BW[j], BM[j], H[j], C[j], w, d)
            if not ok:
                return alpha, beta, dual, primal, ratio_max, step_excess, ERR_STORAGE, p, 0.0
            H[j] = h
            C[j] = c
            beta[j] = beta_exp(BW[j], BM[j], H[j], C[j], lam, tau)
        got[j] = True
        given += m
        e += 1
        start = e
        # end of arrival i: the water level must be common to the nodes that took mass
        if e == E or arrival[e] != i:
            lo = np.inf
            hi = -np.inf
            for q in range(n):
                if got[q] and weights[i, q] > BW[q, H[q]]:
                    g = weights[i, q] - beta[q]
                    lo = min(lo, g)
                    hi = max(hi, g)
            level = hi if hi > 0.0 else 0.0
            if hi - lo > tol or lo < -tol:
                return alpha, beta, dual, primal, ratio_max, step_excess, ERR_DIVERGENCE, e - 1, hi - lo
            short = given < demand[i] - 1e-9
            for q in range(n):
                if weights[i, q] <= BW[q, H[q]]:
                    continue
                g = weights[i, q] - beta[q]
                if (not got[q] and g > level + tol) or (short and g > tol):
                    return alpha, beta, dual, primal, ratio_max, step_excess, ERR_DIVERGENCE, e - 1, g - level
            for q in range(n):
                got[q] = False
            given = 0.0
    if start < E:
        return alpha, beta, dual, primal, ratio_max, step_excess, ERR_ORDER, start, 0.0
    return alpha, beta, dual, primal, ratio_max, step_excess, ERR_NONE, -1, 0.0


def _raise(code, at, value):
    raise AuditError(f"{_MESSAGES[code]} (event {at}, value {value:.6g})")


def _finish(instance, trace, alpha, beta, dual, primal, ratio_max, step_excess, gamma, opt):
    w = instance.weights
    scale = max(instance.max_weight, 1e-300)
    eps_feas = 1e-6 * scale
    eps_step = 1e-9 * scale
    viol = float((w - alpha[:, None] - beta[None, :]).max()) if w.size else -np.inf
    profit = ledger_from_trace(trace, instance.f).profit
    if opt is None:
        opt = opt_matching(instance).value
    dual_sum = float(alpha.sum() + beta.sum())
    if abs(dual_sum - dual) > 1e-9 * max(1.0, abs(dual)):
        raise AuditError(f"stepwise dual {dual} and alpha+beta {dual_sum} disagree")
    if np.any(alpha < -1e-9 * scale) or np.any(beta < -1e-9 * scale):
        raise AuditError("negative dual variable")
    cert = DualCertificate(alpha, beta, float(gamma), dual_sum, float(primal))
    return AuditReport(
        feasible=bool(viol <= eps_feas),
        max_constraint_violation=max(viol, 0.0),
        dual_over_profit=dual_sum / profit if profit > 0 else (0.0 if dual_sum == 0 else math.inf),
        opt_over_dual=opt / dual_sum if dual_sum > 0 else (0.0 if opt == 0 else math.inf),
        per_step_ratio_max=float(ratio_max),
        step_ok=bool(step_excess <= eps_step),
        dual_covers_opt=bool(dual_sum >= opt - eps_feas),
        gamma_covers_dual=bool(gamma * profit >= dual_sum - eps_feas),
        profit=float(profit),
        dual=dual_sum,
        opt=float(opt),
        certificate=cert,
    )


def audit_fractional(trace, instance, pen, gamma, opt=None):
    """Replay a fractional trace under ``pen``; raises AuditError on an inconsistent trace."""
    if not np.all(instance.capacities == 1.0):
        raise ValueError("the fractional audit needs unit capacities")
    a, j, k, w, m = trace.columns()
    scale = max(instance.max_weight, 1e-300)
    out = _audit_fractional_core(
        a, j, k, w, m,
        np.ascontiguousarray(instance.weights), instance.demands,
        pen.lam, pen.tau, float(instance.f), float(gamma), 1e-9 * scale, 1e-6 * scale,
    )
    alpha, beta, dual, primal, ratio_max, step_excess, code, at, value = out
    if code != ERR_NONE:
        _raise(code, at, value)
    if len(k) == 0:
        step_excess = 0.0
    return _finish(instance, trace, alpha, beta, dual, primal, ratio_max, step_excess, gamma, opt)


def audit_det(trace, instance, tau, gamma, opt=None):
    """Replay an integral trace: alpha_i = w - tau*w_low, beta_j += tau*(w - w_low)."""
    T, n = instance.weights.shape
    f = instance.f
    alpha = np.zeros(T)
    beta = np.zeros(n)
    held = np.zeros(n)
    dists = [AllocationDistribution() for _ in range(n)]
    dual = primal = ratio_max = 0.0
    step_excess = -np.inf if len(trace) else 0.0
    eps_step = 1e-9 * max(instance.max_weight, 1e-300)
    low = {}
    for e, (i, j, kind, w, m) in enumerate(zip(*(c.tolist() for c in trace.columns()))):
        d = dists[j]
        if kind == KIND_BUYBACK:
            bw, bm = d.bottom()
            if w != bw or m > bm + 1e-12:
                raise AuditError(f"{_MESSAGES[ERR_GREEDY]} (event {e})")
            d.remove_bottom(m)
            low[(i, j)] = low.get((i, j), 0.0) + w * m
            continue
        if abs(m - 1.0) > 1e-12:
            raise AuditError(f"integral trace allocates mass {m} (event {e})")
        w_low = low.pop((i, j), 0.0)
        if abs(w_low - held[j]) > 1e-12 * max(1.0, held[j]):
            raise AuditError(f"buyback of {w_low} but node {j} held {held[j]} (event {e})")
        d.insert(w, m)
        da = w - tau * w_low
        db = tau * (w - w_low)
        alpha[i] += da
        beta[j] += db
        held[j] = w
        dd = da + db
        dp = w - (1.0 + f) * w_low
        dual += dd
        primal += dp
        step_excess = max(step_excess, dd - gamma * dp)
        if dp > 0:
            ratio_max = max(ratio_max, dd / dp)
    if low:
        raise AuditError(_MESSAGES[ERR_ORDER])
    if not np.allclose(beta, tau * held, rtol=1e-12, atol=0.0):
        raise AuditError("beta differs from tau times the held weight")
    return _finish(instance, trace, alpha, beta, dual, primal, ratio_max, step_excess, gamma, opt)


def check_scale_equivariance(algorithm, instance, c, rtol=1e-9):
    """True when scaling all weights by c scales profit and event weights by c and keeps masses."""
    from .engine import run_algorithm, single_resource_canonical_run

    def run(inst):
        if algorithm == "canonical":
            return single_resource_canonical_run(inst.weights[:, 0], inst.f)
        return run_algorithm(algorithm, inst)

    a = run(instance)
    b = run(instance.scaled(c))
    scale = max(abs(a.profit), 1e-300)
    return bool(
        abs(b.profit - c * a.profit) <= rtol * c * scale
        and len(a.trace) == len(b.trace)
        and np.allclose(b.trace.mass, a.trace.mass, rtol=rtol, atol=1e-12)
        and np.allclose(b.trace.weight, c * a.trace.weight, rtol=rtol, atol=0.0)
        and np.array_equal(a.trace.kind, b.trace.kind)
    )
