"""Instance generators: adversarial families, continuum grids, the cloud market,
and random corpora.  Every generator is a pure function of its arguments.
"""
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import WeightMatrixInstance


def single_column(stream, f):
    return WeightMatrixInstance.from_matrix(np.asarray(stream, dtype=float).reshape(-1, 1), f)


def gen_greedy_killer(T, f=1.0):
    """w_i = 2**i for i = 1..T on one offline node."""
    return single_column([2.0 ** i for i in range(1, int(T) + 1)], f)


def gen_permutation_lb(K, seed=0, f=0.0, perm=None):
    """K x K instance w_ij = 1/(K-i+1) when pi(j) >= i (1-based), pi a seeded permutation."""
    K = int(K)
    if perm is None:
        perm = np.random.default_rng(seed).permutation(K) + 1
    perm = np.asarray(perm)
    rows = np.arange(1, K + 1)[:, None]
    w = np.where(perm[None, :] >= rows, 1.0 / (K - rows + 1.0), 0.0)
    inst = WeightMatrixInstance.from_matrix(w, f)
    inst.info["perm"] = perm
    return inst


def gen_continuum(T, ratio, w_min=None):
    """Ascending geometric grid T * ratio**-k down to the floor w_min (default T * 1e-4)."""
    T = float(T)
    if ratio <= 1:
        raise ValueError("ratio must exceed 1")
    floor = T * 1e-4 if w_min is None else float(w_min)
    if T <= floor:
        return np.array([T])
    N = int(math.floor(math.log(T / floor) / math.log(ratio) + 1e-9))
    k = np.arange(N, -1, -1, dtype=float)
    out = T * np.power(float(ratio), -k)
    out[-1] = T
    return out


def sample_random_T(T0, size, rng):
    """T with density 1/T^2 on [1, T0) and an atom 1/T0 at T0."""
    u = rng.random(size)
    cut = 1.0 - 1.0 / T0
    return np.where(u < cut, 1.0 / (1.0 - np.minimum(u, cut)), float(T0))


def gen_random_T_continuum(T0, ratio, seed=0, w_min=None):
    T = float(sample_random_T(T0, 1, np.random.default_rng(seed))[0])
    return T, gen_continuum(T, ratio, w_min)


@dataclass
class LowerBoundSequence:
    terms: list
    positive: bool
    failed_at: int = None
    f: float = 0.0
    gamma: float = 0.0


def _exact(x):
    return Fraction(x).limit_denominator(10 ** 12)


def _recurrence(f, gamma, n, w0, z1_factor):
    """z_k = (g+1) z_{k-1} - g(1+f) z_{k-2} in exact rationals; stops at the first z <= 0."""
    fq, gq = _exact(f), _exact(gamma)
    z = [Fraction(w0), z1_factor(gq) * Fraction(w0)]
    if z[1] <= 0:
        return LowerBoundSequence([float(z[0])], False, 1, f, gamma)
    for k in range(2, int(n) + 1):
        nxt = (gq + 1) * z[-1] - gq * (1 + fq) * z[-2]
        if nxt <= 0:
            return LowerBoundSequence([float(t) for t in z], False, k, f, gamma)
        z.append(nxt)
    return LowerBoundSequence([float(t) for t in z[: int(n) + 1]], True, None, f, gamma)


def gen_det_lb_single(f, gamma, n, w0=1.0):
    """Weights w_i = gamma (w_{i-1} - f * sum_{k<=i-2} w_k) for a single resource."""
    return _recurrence(f, gamma, n, w0, lambda g: g)


def gen_det_lb_matching(f, gamma, n, w0=1.0):
    """Two-node family: first arrival (w0, w0), then (z_i, 0) with z_1 = (gamma-1) z_0."""
    return _recurrence(f, gamma, n, w0, lambda g: g - 1)


def det_lb_single_instance(seq):
    return single_column(seq.terms, seq.f)


def det_lb_matching_instance(seq):
    z = seq.terms
    rows = [[z[0], z[0]]] + [[t, 0.0] for t in z[1:]]
    return WeightMatrixInstance.from_matrix(rows, seq.f)


def gen_cloud_market(seed, f=0.0, servers=10, customers=100):
    """Servers of quality q ~ U[0,1]; customer i pays q_j v_i, v cumulative U[0,1] sums;
    a server refuses customers with v_i >= 100 q_j."""
    rng = np.random.default_rng(seed)
    q = rng.random(servers)
    v = np.cumsum(rng.random(customers))
    w = np.where(100.0 * q[None, :] > v[:, None], q[None, :] * v[:, None], 0.0)
    inst = WeightMatrixInstance.from_matrix(w, f)
    inst.info.update(q=q, v=v)
    return inst


def gen_random(n, T, f, seed=0, high=1.0, density=1.0, log_range=0.0, integer=False):
    """Random corpus instance.

    Weights are U[0, high] (or log-uniform over ``log_range`` decades below
    ``high``), each edge kept with probability ``density``; ``integer``
    rounds to whole numbers so ties occur.
    """
    rng = np.random.default_rng(seed)
    if log_range > 0:
        w = high * np.power(10.0, -log_range * rng.random((T, n)))
    else:
        w = high * rng.random((T, n))
    if integer:
        w = np.floor(w)
    if density < 1.0:
        w = np.where(rng.random((T, n)) < density, w, 0.0)
    return WeightMatrixInstance.from_matrix(w, f)


@dataclass
class GeneratorSpec:
    family: str
    params: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text):
        family, _, rest = text.partition(":")
        params = {}
        for item in filter(None, (p.strip() for p in rest.split(","))):
            key, _, val = item.partition("=")
            params[key.strip()] = _number(val.strip())
        if family not in FAMILIES:
            raise ValueError(f"unknown generator family {family!r}; choose from {sorted(FAMILIES)}")
        return cls(family, params)

    def __str__(self):
        return self.family + ":" + ",".join(f"{k}={v}" for k, v in self.params.items())


def _number(s):
    try:
        return int(s)
    except ValueError:
        return float(s)


def _det_single(f, gamma, n, w0=1.0):
    return det_lb_single_instance(gen_det_lb_single(f, gamma, n, w0))


def _det_matching(f, gamma, n, w0=1.0):
    return det_lb_matching_instance(gen_det_lb_matching(f, gamma, n, w0))


def _continuum(T, ratio, f=0.0, w_min=None):
    return single_column(gen_continuum(T, ratio, w_min), f)


def _random_T(T0, ratio, seed=0, f=0.0):
    return single_column(gen_random_T_continuum(T0, ratio, seed)[1], f)


FAMILIES = {
    "greedy-killer": lambda T, f=1.0: gen_greedy_killer(T, f),
    "permutation": lambda K, seed=0, f=0.0: gen_permutation_lb(K, seed, f),
    "continuum": _continuum,
    "random-t": _random_T,
    "det-single": _det_single,
    "det-matching": _det_matching,
    "cloud": lambda seed=0, f=0.0: gen_cloud_market(seed, f),
    "random": lambda n, T, f=0.0, seed=0, **kw: gen_random(n, T, f, seed, **kw),
}


def generate(spec):
    if isinstance(spec, str):
        spec = GeneratorSpec.parse(spec)
    try:
        return FAMILIES[spec.family](**spec.params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {spec.family}: {exc}") from exc
