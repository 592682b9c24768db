"""Instances, allocation distributions, event traces and profit accounting."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import KIND_ALLOCATE, KIND_BUYBACK

KIND_NAMES = {KIND_ALLOCATE: "allocate", KIND_BUYBACK: "buyback"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class Arrival:
    weights: tuple
    demand: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        object.__setattr__(self, "demand", float(self.demand))


class WeightMatrixInstance:
    """n offline nodes with capacities, buyback factor f, and a T x n weight stream."""

    def __init__(self, num_offline, buyback_factor, arrivals=(), capacities=None):
        arrivals = list(arrivals)
        n = int(num_offline)
        for a in arrivals:
            if len(a.weights) != n:
                raise ValueError(f"arrival has {len(a.weights)} weights, expected {n}")
        weights = np.array([a.weights for a in arrivals], dtype=float).reshape(len(arrivals), n)
        demands = np.array([a.demand for a in arrivals], dtype=float)
        self._init(n, buyback_factor, weights, demands, capacities)

    @classmethod
    def from_matrix(cls, weights, f, demands=None, capacities=None):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2:
            raise ValueError("weight matrix must be 2-d (T x n)")
        obj = cls.__new__(cls)
        T = weights.shape[0]
        demands = np.ones(T) if demands is None else np.asarray(demands, dtype=float)
        obj._init(weights.shape[1], f, weights.copy(), demands.copy(), capacities)
        return obj

    def _init(self, n, f, weights, demands, capacities):
        if n < 1:
            raise ValueError("need at least one offline node")
        f = float(f)
        if not (f >= 0 and np.isfinite(f)):
            raise ValueError(f"buyback factor must be >= 0, got {f}")
        caps = np.ones(n) if capacities is None else np.asarray(capacities, dtype=float).copy()
        if caps.shape != (n,) or not np.all(caps > 0) or not np.all(np.isfinite(caps)):
            raise ValueError("capacities must be n positive reals")
        if not np.all(np.isfinite(weights)) or np.any(weights < 0):
            raise ValueError("weights must be finite and nonnegative")
        if demands.shape != (weights.shape[0],) or np.any(demands <= 0) or np.any(demands > 1):
            raise ValueError("demands must lie in (0, 1]")
        self.n = n
        self.f = f
        self.weights = weights
        self.demands = demands
        self.capacities = caps
        # generator metadata; not part of equality or JSON
        self.info = {}

    num_offline = property(lambda self: self.n)
    buyback_factor = property(lambda self: self.f)

    @property
    def T(self):
        return self.weights.shape[0]

    @property
    def arrivals(self):
        return [Arrival(self.weights[i], self.demands[i]) for i in range(self.T)]

    @property
    def max_weight(self):
        return float(self.weights.max()) if self.weights.size else 0.0

    def with_f(self, f):
        return WeightMatrixInstance.from_matrix(self.weights, f, self.demands, self.capacities)

    def scaled(self, c):
        return WeightMatrixInstance.from_matrix(self.weights * c, self.f, self.demands, self.capacities)

    def unit(self):
        return bool(np.all(self.capacities == 1.0) and np.all(self.demands == 1.0))

    def __eq__(self, other):
        return (
            isinstance(other, WeightMatrixInstance)
            and self.n == other.n
            and self.f == other.f
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.demands, other.demands)
            and np.array_equal(self.capacities, other.capacities)
        )

    def __repr__(self):
        return f"WeightMatrixInstance(n={self.n}, T={self.T}, f={self.f})"

    def to_json(self):
        doc = {"n": self.n, "f": self.f}
        if not np.all(self.capacities == 1.0):
            doc["capacities"] = self.capacities.tolist()
        arr = []
        for i in range(self.T):
            a = {"weights": self.weights[i].tolist()}
            if self.demands[i] != 1.0:
                a["demand"] = float(self.demands[i])
            arr.append(a)
        doc["arrivals"] = arr
        return doc

    @classmethod
    def from_json(cls, doc):
        arrivals = [Arrival(a["weights"], a.get("demand", 1.0)) for a in doc["arrivals"]]
        return cls(int(doc["n"]), doc["f"], arrivals, doc.get("capacities"))


def load_instance(path):
    with open(path, encoding="utf-8") as fh:
        return WeightMatrixInstance.from_json(json.load(fh))


def save_instance(inst, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(inst.to_json(), fh)
        fh.write("\n")


class AllocationDistribution:
    """Sorted atoms (weight, mass) of one offline node; starts as all mass at 0."""

    def __init__(self, capacity=1.0, slots=8):
        self.capacity = float(capacity)
        self.W = np.zeros(max(slots, 2))
        self.M = np.zeros(max(slots, 2))
        self.M[0] = self.capacity
        self.h = 0
        self.c = 1

    @classmethod
    def from_atoms(cls, atoms, capacity=None):
        atoms = [(float(w), float(m)) for w, m in atoms]
        ws = [w for w, _ in atoms]
        if any(b <= a for a, b in zip(ws, ws[1:])) or any(m <= 0 for _, m in atoms):
            raise ValueError("atoms need strictly increasing weights and positive masses")
        total = sum(m for _, m in atoms)
        d = cls(capacity if capacity is not None else total, slots=len(atoms) + 2)
        d.c = len(atoms)
        d.W[: d.c] = ws
        d.M[: d.c] = [m for _, m in atoms]
        return d

    @property
    def count(self):
        return self.c

    @property
    def weights(self):
        return self.W[self.h:self.h + self.c].copy()

    @property
    def masses(self):
        return self.M[self.h:self.h + self.c].copy()

    def atoms(self):
        return [(float(w), float(m)) for w, m in zip(self.weights, self.masses)]

    def total_mass(self):
        return float(self.M[self.h:self.h + self.c].sum())

    def bottom(self):
        return float(self.W[self.h]), float(self.M[self.h])

    def _reserve(self):
        if self.c + 1 > self.W.shape[0]:
            size = 2 * self.W.shape[0]
            W = np.zeros(size)
            M = np.zeros(size)
            W[: self.c] = self.W[self.h:self.h + self.c]
            M[: self.c] = self.M[self.h:self.h + self.c]
            self.W, self.M, self.h = W, M, 0

    def remove_bottom(self, m):
        pw = np.empty(self.c + 1)
        pm = np.empty(self.c + 1)
        self.h, self.c, k, _ = kernels.remove_bottom(self.W, self.M, self.h, self.c, float(m), pw, pm)
        return pw[:k], pm[:k]

    def insert(self, w, m):
        self._reserve()
        self.h, self.c, ok = kernels.insert_atom(self.W, self.M, self.h, self.c, float(w), float(m))
        if not ok:
            raise RuntimeError("atom storage full")

    def copy(self):
        d = AllocationDistribution.__new__(AllocationDistribution)
        d.capacity = self.capacity
        d.W = self.W.copy()
        d.M = self.M.copy()
        d.h = self.h
        d.c = self.c
        return d

    def __eq__(self, other):
        return (
            isinstance(other, AllocationDistribution)
            and self.capacity == other.capacity
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.masses, other.masses)
        )

    def __repr__(self):
        return f"AllocationDistribution({self.atoms()})"


def quantile(dist, w):
    """Mass held at weights >= w."""
    ws = dist.weights
    k = np.searchsorted(ws, w, side="left")
    return float(dist.masses[k:].sum())


def bottom_weight(dist):
    return dist.bottom()[0]


@dataclass
class ProfitLedger:
    reward_collected: float = 0.0
    reward_refunded: float = 0.0
    penalty_paid: float = 0.0

    @property
    def profit(self):
        return self.reward_collected - self.reward_refunded - self.penalty_paid

    def to_dict(self):
        return {
            "reward_collected": self.reward_collected,
            "reward_refunded": self.reward_refunded,
            "penalty_paid": self.penalty_paid,
            "profit": self.profit,
        }


class EventTrace:
    """Ordered (arrival_index, offline_index, kind, weight, mass) records."""

    COLUMNS = ("arrival_index", "offline_index", "kind", "weight", "mass")

    def __init__(self, arrival=(), node=(), kind=(), weight=(), mass=()):
        self._cols = (
            np.asarray(arrival, dtype=np.int64),
            np.asarray(node, dtype=np.int64),
            np.asarray(kind, dtype=np.int8),
            np.asarray(weight, dtype=float),
            np.asarray(mass, dtype=float),
        )
        self._pending = []

    def append(self, i, j, kind, w, m):
        self._pending.append((i, j, kind, w, m))

    def _flush(self):
        if self._pending:
            cols = list(zip(*self._pending))
            self._cols = tuple(
                np.concatenate((old, np.asarray(new, dtype=old.dtype))) for old, new in zip(self._cols, cols)
            )
            self._pending = []
        return self._cols

    arrival = property(lambda self: self._flush()[0])
    node = property(lambda self: self._flush()[1])
    kind = property(lambda self: self._flush()[2])
    weight = property(lambda self: self._flush()[3])
    mass = property(lambda self: self._flush()[4])

    def columns(self):
        return self._flush()

    def __len__(self):
        return len(self._cols[0]) + len(self._pending)

    def __eq__(self, other):
        return isinstance(other, EventTrace) and all(
            np.array_equal(a, b) for a, b in zip(self.columns(), other.columns())
        )

    def allocated_mass(self, T, n):
        """z[i, j]: summed allocate masses per (arrival, node)."""
        a, j, k, _, m = self.columns()
        z = np.zeros((T, n))
        sel = k == KIND_ALLOCATE
        np.add.at(z, (a[sel], j[sel]), m[sel])
        return z

    def to_csv(self, path):
        a, j, k, w, m = self.columns()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh)
            out.writerow(self.COLUMNS)
            for row in zip(a.tolist(), j.tolist(), k.tolist(), w.tolist(), m.tolist()):
                out.writerow((row[0], row[1], KIND_NAMES[row[2]], "%.17g" % row[3], "%.17g" % row[4]))

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        try:
            return cls(
                [int(r["arrival_index"]) for r in rows],
                [int(r["offline_index"]) for r in rows],
                [KIND_CODES[r["kind"]] for r in rows],
                [float(r["weight"]) for r in rows],
                [float(r["mass"]) for r in rows],
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed trace file {path}: {exc}") from exc


@dataclass
class RunResult:
    ledger: ProfitLedger
    trace: EventTrace
    final_distributions: list
    per_arrival_profit: np.ndarray
    # "discounted" runs carry price-equivalent events and no distributions
    model: str = "base"
    info: dict = field(default_factory=dict)

    @property
    def profit(self):
        return self.ledger.profit


def ledger_from_trace(trace, f):
    _, _, k, w, m = trace.columns()
    return ProfitLedger(*kernels.ledger_sums(k, w, m, float(f)))


def per_arrival_from_trace(trace, f, T):
    a, _, k, w, m = trace.columns()
    return kernels.per_arrival_profit(a, k, w, m, float(f), int(T))


def allocate_with_buyback(dist, ledger, trace, arrival_index, offline_index, w, m, f=0.0):
    """Move mass m from the lowest held weights to weight w, recording everything."""
    if not m > 0 or not w >= 0:
        raise ValueError(f"need m > 0 and w >= 0, got m={m}, w={w}")
    if m > dist.capacity + 1e-9:
        raise CapacityError(f"mass {m} exceeds capacity {dist.capacity}")
    m = min(float(m), dist.capacity)
    pw, pm = dist.remove_bottom(m)
    for wp, dm in zip(pw.tolist(), pm.tolist()):
        x = wp * dm
        ledger.reward_refunded += x
        ledger.penalty_paid += f * x
        trace.append(arrival_index, offline_index, KIND_BUYBACK, wp, dm)
    dist.insert(w, m)
    ledger.reward_collected += w * m
    trace.append(arrival_index, offline_index, KIND_ALLOCATE, float(w), m)
    return dist


def replay(trace, instance, model="base"):
    """Rebuild final distributions and ledger from a trace.

    Raises ValueError when a buyback does not come from the lowest held atom.
    """
    n = instance.n
    ledger = ledger_from_trace(trace, instance.f)
    if model != "base":
        return [], ledger
    dists = [AllocationDistribution(instance.capacities[j]) for j in range(n)]
    a, j, k, w, m = trace.columns()
    for e in range(len(a)):
        d = dists[j[e]]
        if k[e] == KIND_BUYBACK:
            bw, bm = d.bottom()
            if w[e] != bw or m[e] > bm + 1e-12:
                raise ValueError(
                    f"event {e}: buyback ({w[e]!r}, {m[e]!r}) violates greedy order; bottom atom is ({bw!r}, {bm!r})"
                )
            d.remove_bottom(m[e])
        else:
            d.insert(w[e], m[e])
    return dists, ledger
