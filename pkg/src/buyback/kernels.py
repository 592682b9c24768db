"""Hot loops over atom arrays.

An allocation distribution is stored as a window ``W[h:h+c]`` (ascending
weights) and ``M[h:h+c]`` (masses) of two float arrays.  The quantile at
weight ``t`` is the mass of atoms with weight >= t, so the step segment
``(W[k-1], W[k]]`` sits at the suffix level ``M[k] + ... + M[h+c-1]``.

Every function here is compiled with numba unless ``BUYBACK_DISABLE_NUMBA``
is set; ``exp_sum`` and ``beta_exp`` additionally have vectorised numpy
bodies that the interpreted path uses instead of the scalar loops.
"""
import math

import numpy as np

from ._accel import ENABLED, njit

PRUNE = 1e-12

KIND_ALLOCATE = 0
KIND_BUYBACK = 1


# ---------------------------------------------------------------------------
# step-function integrals


@njit
def _exp_sum_loop(W, M, h, c, a, b, lam):
    if b <= a:
        return 0.0
    total = 0.0
    top = W[h + c - 1] if c > 0 else 0.0
    if b > top:
        total += b - max(a, top)
    level = 0.0
    for k in range(h + c - 1, h - 1, -1):
        level += M[k]
        hi = W[k]
        lo = W[k - 1] if k > h else 0.0
        if hi <= a:
            break
        if lo >= b:
            continue
        seg = min(hi, b) - max(lo, a)
        if seg > 0.0:
            total += seg * lam ** level
    return total


@njit
def _beta_exp_loop(W, M, h, c, lam, tau):
    loglam = math.log(lam)
    total = 0.0
    level = 0.0
    for k in range(h + c - 1, h - 1, -1):
        level += M[k]
        lo = W[k - 1] if k > h else 0.0
        seg = W[k] - lo
        if seg > 0.0:
            total += seg * math.expm1(level * loglam)
    return tau * total


def _levels_numpy(W, M, h, c):
    w = W[h:h + c]
    levels = np.cumsum(M[h:h + c][::-1])[::-1]
    lows = np.concatenate(([0.0], w[:-1]))
    return lows, w, levels


def _exp_sum_numpy(W, M, h, c, a, b, lam):
    if b <= a:
        return 0.0
    total = 0.0
    top = W[h + c - 1] if c > 0 else 0.0
    if b > top:
        total += b - max(a, top)
    if c == 0:
        return total
    lows, highs, levels = _levels_numpy(W, M, h, c)
    seg = np.minimum(highs, b) - np.maximum(lows, a)
    seg = np.where(seg > 0.0, seg, 0.0)
    return total + float(np.sum(seg[::-1] * (lam ** levels[::-1])))


def _beta_exp_numpy(W, M, h, c, lam, tau):
    if c == 0:
        return 0.0
    lows, highs, levels = _levels_numpy(W, M, h, c)
    seg = highs - lows
    return tau * float(np.sum((seg * np.expm1(levels * math.log(lam)))[::-1]))


if ENABLED:
    exp_sum = _exp_sum_loop
    beta_exp = _beta_exp_loop
else:
    exp_sum = _exp_sum_numpy
    beta_exp = _beta_exp_numpy

exp_sum.__doc__ = "Exact integral of ``lam ** y(t)`` over ``(a, b]`` for the step quantile y."
beta_exp.__doc__ = "Exact integral of ``tau * (lam ** y(t) - 1)`` over ``(0, inf)``."


# ---------------------------------------------------------------------------
# atom bookkeeping


@njit
def remove_bottom(W, M, h, c, m, pw, pm):
    """Take mass ``m`` off the lowest atoms.

    Removed pieces go to ``pw``/``pm``.  An atom left with mass <= PRUNE is
    dropped and its residue folded into the next atom up.  Returns
    ``(h, c, npieces, unfilled)``.
    """
    rem = m
    k = 0
    while rem > 0.0 and c > 0:
        take = M[h] if M[h] < rem else rem
        pw[k] = W[h]
        pm[k] = take
        k += 1
        M[h] -= take
        rem -= take
        if M[h] <= PRUNE:
            resid = M[h]
            M[h] = 0.0
            h += 1
            c -= 1
            if c > 0:
                M[h] += resid
    return h, c, k, rem


@njit
def insert_atom(W, M, h, c, w, m):
    """Add mass ``m`` at weight ``w``; equal weights merge exactly.

    Returns ``(h, c, ok)``; ``ok`` is False only when the row has no free slot.
    A resulting atom with mass <= PRUNE is folded into its lower neighbour
    (upper when it is the bottom).
    """
    cap = W.shape[0]
    lo = h
    hi = h + c
    while lo < hi:
        mid = (lo + hi) // 2
        if W[mid] < w:
            lo = mid + 1
        else:
            hi = mid
    if lo < h + c and W[lo] == w:
        M[lo] += m
        k = lo
    else:
        if lo == h and h > 0:
            h -= 1
            k = h
        else:
            if h + c >= cap:
                if h == 0:
                    return h, c, False
                for t in range(c):
                    W[t] = W[h + t]
                    M[t] = M[h + t]
                lo -= h
                h = 0
            for t in range(h + c, lo, -1):
                W[t] = W[t - 1]
                M[t] = M[t - 1]
            k = lo
        W[k] = w
        M[k] = m
        c += 1
    if M[k] <= PRUNE and c > 1:
        resid = M[k]
        if k > h:
            M[k - 1] += resid
            for t in range(k, h + c - 1):
                W[t] = W[t + 1]
                M[t] = M[t + 1]
        else:
            M[k + 1] += resid
            h += 1
        c -= 1
    return h, c, True


@njit
def ledger_sums(kind, weight, mass, f):
    """Sequential (collected, refunded, penalty) sums in event order."""
    collected = 0.0
    refunded = 0.0
    penalty = 0.0
    for e in range(kind.shape[0]):
        x = weight[e] * mass[e]
        if kind[e] == KIND_ALLOCATE:
            collected += x
        else:
            refunded += x
            penalty += f * x
    return collected, refunded, penalty


@njit
def per_arrival_profit(arrival, kind, weight, mass, f, T):
    out = np.zeros(T)
    for e in range(kind.shape[0]):
        x = weight[e] * mass[e]
        if kind[e] == KIND_ALLOCATE:
            out[arrival[e]] += x
        else:
            out[arrival[e]] -= (1.0 + f) * x
    return out


# ---------------------------------------------------------------------------
# water-filling core


@njit
def _grow_i(a, n):
    out = np.empty(n, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit
def _grow_f(a, n):
    out = np.empty(n, dtype=a.dtype)
    out[: a.shape[0]] = a
    return out


@njit
def fractional_core(weights, demand, lam, tau, BW, BM, H, C, beta, ev_cap):
    """Exact event-driven water-filling over every arrival.

    ``BW``/``BM``/``H``/``C`` is the per-node atom bank (rows of width >= T+2)
    and ``beta`` the cached dual values; all are updated in place.  Returns
    the event arrays, their count, and the number of phases run.
    """
    T = weights.shape[0]
    n = weights.shape[1]
    loglam = math.log(lam)
    ev_i = np.empty(ev_cap, dtype=np.int64)
    ev_j = np.empty(ev_cap, dtype=np.int64)
    ev_k = np.empty(ev_cap, dtype=np.int8)
    ev_w = np.empty(ev_cap, dtype=np.float64)
    ev_m = np.empty(ev_cap, dtype=np.float64)
    ne = 0
    phases = 0
    pw = np.empty(BW.shape[1] + 1)
    pm = np.empty(BW.shape[1] + 1)
    A = np.zeros(n)
    bm = np.zeros(n)
    mj = np.zeros(n)
    active = np.zeros(n, dtype=np.bool_)
    excluded = np.zeros(n, dtype=np.bool_)
    running_max = 0.0
    for i in range(T):
        for j in range(n):
            if weights[i, j] > running_max:
                running_max = weights[i, j]
        eps = 1e-9 * running_max
        tie = 1e-12 * running_max
        rem = demand[i]
        for j in range(n):
            excluded[j] = False
        guard = 0
        while rem > 1e-12:
            guard += 1
            if guard > 10 * (n + BW.shape[1]) + 100:
                raise RuntimeError("water-filling failed to terminate")
            # water level and active set
            v = -np.inf
            for j in range(n):
                if excluded[j]:
                    continue
                if weights[i, j] <= BW[j, H[j]]:
                    excluded[j] = True
                    continue
                g = weights[i, j] - beta[j]
                if g > v:
                    v = g
            if v <= eps:
                break
            nact = 0
            for j in range(n):
                active[j] = False
                if excluded[j]:
                    continue
                g = weights[i, j] - beta[j]
                if g >= v - tie:
                    active[j] = True
                    nact += 1
                    A[j] = tau * exp_sum(BW[j], BM[j], H[j], C[j], BW[j, H[j]], weights[i, j], lam)
                    bm[j] = BM[j, H[j]]
            phases += 1
            # candidate level drops: e4, e1, e2
            dmin = v
            for j in range(n):
                if active[j]:
                    d1 = A[j] * math.expm1(bm[j] * loglam)
                    if d1 < dmin:
                        dmin = d1
            for j in range(n):
                if active[j] or excluded[j]:
                    continue
                g = weights[i, j] - beta[j]
                if g > eps:
                    d2 = v - g
                    if d2 < dmin:
                        dmin = d2
            # e3: does the demand run out first?
            total = 0.0
            for j in range(n):
                if active[j]:
                    total += math.log1p(dmin / A[j]) / loglam
            finish = False
            if total >= rem:
                finish = True
                if nact == 1:
                    for j in range(n):
                        if active[j]:
                            delta = A[j] * math.expm1(rem * loglam)
                else:
                    delta = 0.0
                    for _ in range(200):
                        fval = -rem
                        fder = 0.0
                        for j in range(n):
                            if active[j]:
                                fval += math.log1p(delta / A[j]) / loglam
                                fder += 1.0 / ((A[j] + delta) * loglam)
                        step = -fval / fder
                        delta += step
                        if step <= 1e-16 * delta:
                            break
                if delta > dmin:
                    delta = dmin
                for j in range(n):
                    if active[j]:
                        m = math.log1p(delta / A[j]) / loglam
                        mj[j] = bm[j] if m > bm[j] else m
            else:
                for j in range(n):
                    if active[j]:
                        d1 = A[j] * math.expm1(bm[j] * loglam)
                        if d1 <= dmin:
                            mj[j] = bm[j]
                        else:
                            m = math.log1p(dmin / A[j]) / loglam
                            mj[j] = bm[j] if m > bm[j] else m
            # apply the phase
            for j in range(n):
                if not active[j] or mj[j] <= 0.0:
                    continue
                m = mj[j]
                if ne + 2 + BW.shape[1] > ev_i.shape[0]:
                    size = 2 * ev_i.shape[0] + 2 * BW.shape[1] + 16
                    ev_i = _grow_i(ev_i, size)
                    ev_j = _grow_i(ev_j, size)
                    ev_k = _grow_i(ev_k, size)
                    ev_w = _grow_f(ev_w, size)
                    ev_m = _grow_f(ev_m, size)
                h, c, npc, unfilled = remove_bottom(BW[j], BM[j], H[j], C[j], m, pw, pm)
                H[j] = h
                C[j] = c
                for p in range(npc):
                    ev_i[ne] = i
                    ev_j[ne] = j
                    ev_k[ne] = KIND_BUYBACK
                    ev_w[ne] = pw[p]
                    ev_m[ne] = pm[p]
                    ne += 1
                h, c, ok = insert_atom(BW[j], BM[j], H[j], C[j], weights[i, j], m)
                if not ok:
                    raise RuntimeError("atom bank row overflow")
                H[j] = h
                C[j] = c
                ev_i[ne] = i
                ev_j[ne] = j
                ev_k[ne] = KIND_ALLOCATE
                ev_w[ne] = weights[i, j]
                ev_m[ne] = m
                ne += 1
                beta[j] += A[j] * math.expm1(m * loglam)
                rem -= m
            if finish:
                rem = 0.0
                break
    return ev_i, ev_j, ev_k, ev_w, ev_m, ne, phases
