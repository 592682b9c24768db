"""Offline optimum: maximum-weight bipartite b-matching with full hindsight."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog


@dataclass
class OptResult:
    value: float
    assignment: list  # (arrival_index, offline_index, mass)


def _integral(caps, demands):
    return np.all(demands == 1.0) and np.all(caps == np.round(caps))


def opt_matching(instance):
    """Optimal matching value; assignment problem when the data is integral, LP otherwise."""
    w = instance.weights
    T, n = w.shape
    if T == 0:
        return OptResult(0.0, [])
    caps = instance.capacities
    if _integral(caps, instance.demands):
        copies = np.minimum(caps.astype(int), T)
        cols = np.repeat(np.arange(n), copies)
        rows, picked = linear_sum_assignment(w[:, cols], maximize=True)
        assignment = [(int(i), int(cols[k]), 1.0) for i, k in zip(rows, picked) if w[i, cols[k]] > 0]
        value = float(sum(w[i, j] for i, j, _ in assignment))
        return OptResult(value, assignment)
    return _opt_lp(w, instance.demands, caps)


def _opt_lp(w, demands, caps):
    T, n = w.shape
    A_rows = np.zeros((T, T * n))
    for i in range(T):
        A_rows[i, i * n:(i + 1) * n] = 1.0
    A_cols = np.zeros((n, T * n))
    for j in range(n):
        A_cols[j, j::n] = 1.0
    res = linprog(
        -w.ravel(),
        A_ub=np.vstack((A_rows, A_cols)),
        b_ub=np.concatenate((demands, caps)),
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise RuntimeError(f"matching LP failed: {res.message}")
    x = res.x.reshape(T, n)
    assignment = [(int(i), int(j), float(x[i, j])) for i, j in zip(*np.nonzero(x > 1e-12))]
    return OptResult(float(-res.fun), assignment)


def opt_single(stream):
    """Keep the largest weight."""
    stream = np.asarray(stream, dtype=float)
    return float(stream.max()) if stream.size else 0.0
