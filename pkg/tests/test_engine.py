import math

import numpy as np
import pytest

from buyback import gen
from buyback.engine import (
    det_integral_run,
    fractional_pd_run,
    free_disposal_run,
    greedy_integral_run,
    nonuniform_single_run,
    run_algorithm,
    single_resource_canonical_run,
)
from buyback.kernels import KIND_BUYBACK
from buyback.model import EventTrace, WeightMatrixInstance, quantile, replay
from buyback.numerics import (
    CanonicalParams,
    beta_of,
    canonical_profit,
    det_tau,
    gamma_gen,
    large_f_params,
    matching_params,
    small_f_params,
    w_hat_star,
)
from buyback.offline import opt_matching
from oracles import micro_step

F_VALUES = [0.0, 0.1, (math.e - 2) / 2, 0.5, 1.0, 2.0]


def corpus(count, f, seed0=0):
    out = []
    for k in range(count):
        rng = np.random.default_rng([seed0, k])
        n = int(rng.integers(1, 5))
        T = int(rng.integers(1, 9))
        out.append(gen.gen_random(n, T, f, seed=seed0 * 1000 + k, integer=k % 3 == 0, high=10.0))
    return out


def sub_trace(trace, last_arrival):
    a, j, k, w, m = trace.columns()
    keep = a <= last_arrival
    return EventTrace(a[keep], j[keep], k[keep], w[keep], m[keep])


# fractional


@pytest.mark.parametrize("w", [0.3, 1.0, 17.0])
def test_fractional_single_node_f0(w):
    pen = small_f_params(0.0)
    res = fractional_pd_run(WeightMatrixInstance.from_matrix([[w]], 0.0), pen)
    assert res.trace.allocated_mass(1, 1)[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert res.info["beta"][0] == pytest.approx(w, rel=1e-12)
    assert res.profit == pytest.approx(w, rel=1e-12)


def test_fractional_symmetric_split():
    res = fractional_pd_run(WeightMatrixInstance.from_matrix([[2.0, 2.0]], 0.3), small_f_params(0.3))
    z = res.trace.allocated_mass(1, 2)
    assert abs(z[0, 0] - z[0, 1]) <= 1e-9
    assert z.sum() == pytest.approx(1.0, abs=1e-12)


def test_fractional_greedy_killer_matches_micro_steps():
    inst = gen.gen_greedy_killer(10, 1.0)
    pen = large_f_params(1.0)
    res = fractional_pd_run(inst, pen)
    assert opt_matching(inst).value / res.profit <= gamma_gen(1.0) + 1e-6
    assert micro_step(inst, pen, 10 ** 6) == pytest.approx(res.profit, rel=1e-4)


@pytest.mark.parametrize("f", [0.0, 0.5, 2.0])
def test_fractional_matches_micro_steps_on_small_matchings(f):
    pen = matching_params(f)
    for inst in corpus(4, f, seed0=7):
        res = fractional_pd_run(inst, pen)
        ref = micro_step(inst, pen, 2 * 10 ** 5)
        assert ref == pytest.approx(res.profit, rel=2e-4, abs=1e-4 * inst.max_weight)


def test_fractional_fractional_demands():
    inst = WeightMatrixInstance.from_matrix([[1.0, 2.0], [3.0, 1.0], [2.5, 2.5]], 0.3, demands=[0.4, 0.7, 0.5])
    pen = small_f_params(0.3)
    res = fractional_pd_run(inst, pen)
    z = res.trace.allocated_mass(3, 2)
    assert np.all(z.sum(axis=1) <= inst.demands + 1e-12)
    assert micro_step(inst, pen, 10 ** 5) == pytest.approx(res.profit, rel=1e-3)


def test_fractional_rejects_bad_input():
    inst = WeightMatrixInstance.from_matrix([[1.0]], 0.0)
    with pytest.raises(ValueError):
        fractional_pd_run(inst, type(small_f_params(0))(1.0, 1.0))
    with pytest.raises(ValueError):
        fractional_pd_run(WeightMatrixInstance.from_matrix([[1.0]], 0.0, capacities=[2.0]), small_f_params(0))


@pytest.mark.parametrize("f", F_VALUES)
def test_fractional_replay_and_dual_stopping(f):
    pen = matching_params(f)
    for inst in corpus(15, f, seed0=1):
        res = fractional_pd_run(inst, pen)
        dists, ledger = replay(res.trace, inst)
        assert ledger == res.ledger
        assert all(a == b for a, b in zip(dists, res.final_distributions))
        assert np.all(res.trace.mass > 0)
        z = res.trace.allocated_mass(inst.T, inst.n)
        running = 0.0
        for i in range(inst.T):
            running = max(running, float(inst.weights[i].max()))
            if z[i].sum() >= inst.demands[i] - 1e-12:
                continue
            ds, _ = replay(sub_trace(res.trace, i), inst)
            gaps = [inst.weights[i, j] - beta_of(ds[j], pen) for j in range(inst.n)]
            assert max(gaps) <= 1e-9 * running + 1e-12 * max(1.0, running)


@pytest.mark.parametrize("f", F_VALUES)
def test_fractional_competitive_bound(f):
    pen = matching_params(f)
    for inst in corpus(40, f, seed0=2):
        res = fractional_pd_run(inst, pen)
        opt = opt_matching(inst).value
        if opt > 0:
            assert opt / res.profit <= gamma_gen(f) + 1e-6


def test_fractional_scale_equivariance():
    for inst in corpus(10, 1.0, seed0=3) + [gen.gen_greedy_killer(8, 1.0)]:
        pen = matching_params(inst.f)
        a = fractional_pd_run(inst, pen)
        for c in (7.3, 1e6):
            b = fractional_pd_run(inst.scaled(c), pen)
            assert b.profit == pytest.approx(c * a.profit, rel=1e-9)
            assert len(a.trace) == len(b.trace)
            np.testing.assert_allclose(b.trace.mass, a.trace.mass, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(b.trace.weight, c * a.trace.weight, rtol=1e-9)


def test_canonical_convergence_on_continuum_grid():
    stream = gen.gen_continuum(100.0, 1.001)
    for f in (0.5, 1.0, 2.0):
        wh = w_hat_star(f)
        res = fractional_pd_run(gen.single_column(stream, f), large_f_params(f))
        d = res.final_distributions[0]
        params = CanonicalParams(wh)
        for w in np.linspace(1.0, 100.0, 60):
            assert quantile(d, w) == pytest.approx(params.quantile(wh * w / 100.0), abs=0.01)


# deterministic and greedy


def test_det_examples():
    res = det_integral_run(WeightMatrixInstance.from_matrix([[1.0], [1.5]], 0.0), det_tau(0.0))
    assert res.profit == 1.5
    real = res.trace.weight > 0
    assert list(res.trace.kind[real]) == [0, 1, 0]
    res = det_integral_run(WeightMatrixInstance.from_matrix([[1.0], [2.0]], 1.0), det_tau(1.0))
    assert res.profit == 1.0
    empty = WeightMatrixInstance(2, 0.5)
    assert det_integral_run(empty, det_tau(0.5)).profit == 0.0


def test_det_requires_unit_and_tau():
    with pytest.raises(ValueError):
        det_integral_run(WeightMatrixInstance.from_matrix([[1.0]], 0.0, demands=[0.5]), 1.0)
    with pytest.raises(ValueError):
        det_integral_run(WeightMatrixInstance.from_matrix([[1.0]], 1.0), 1.5)


def test_det_ties_go_to_lowest_index():
    res = det_integral_run(WeightMatrixInstance.from_matrix([[3.0, 3.0, 1.0]], 0.0), 1.0)
    assert res.trace.node[-1] == 0


@pytest.mark.parametrize("T", [1, 2, 5, 10, 20])
def test_greedy_killer_profit_is_two(T):
    assert greedy_integral_run(gen.gen_greedy_killer(T, 1.0)).profit == 2.0


def test_greedy_examples():
    assert greedy_integral_run(WeightMatrixInstance.from_matrix([[1.0], [1.5]], 0.0)).profit == 1.5
    res = greedy_integral_run(WeightMatrixInstance.from_matrix(np.zeros((4, 3)), 0.5))
    assert res.profit == 0.0 and len(res.trace) == 0


@pytest.mark.parametrize("f", F_VALUES)
def test_det_competitive_bound(f):
    from buyback.numerics import gamma_det

    for inst in corpus(40, f, seed0=4):
        res = det_integral_run(inst, det_tau(f))
        opt = opt_matching(inst).value
        if opt > 0:
            assert opt / res.profit <= gamma_det(f) + 1e-6
        dists, ledger = replay(res.trace, inst)
        assert ledger == res.ledger


def test_integral_scale_equivariance():
    for inst in corpus(10, 0.5, seed0=5) + [gen.gen_greedy_killer(12, 1.0)]:
        for run in (lambda x: det_integral_run(x, det_tau(x.f)), greedy_integral_run):
            a = run(inst)
            b = run(inst.scaled(7.3))
            assert b.profit == pytest.approx(7.3 * a.profit, rel=1e-12)
            np.testing.assert_array_equal(a.trace.mass, b.trace.mass)


def test_buybacks_follow_greedy_order():
    for inst in corpus(20, 1.0, seed0=6):
        for name in ("fractional", "det", "greedy", "free-disposal"):
            res = run_algorithm(name, inst)
            replay(res.trace, inst)  # raises on a non-bottom buyback
            assert np.all(res.trace.mass[res.trace.kind == KIND_BUYBACK] > 0)


def test_run_algorithm_unknown():
    with pytest.raises(ValueError):
        run_algorithm("oracle", WeightMatrixInstance(1, 0.0))


# free disposal


def test_free_disposal_examples():
    inst = corpus(1, 0.0, seed0=8)[0]
    assert free_disposal_run(inst).trace == fractional_pd_run(inst, small_f_params(0.0)).trace
    killer = gen.gen_greedy_killer(10, 1.0)
    assert free_disposal_run(killer).profit < fractional_pd_run(killer, large_f_params(1.0)).profit
    single = WeightMatrixInstance.from_matrix([[2.0, 3.0]], 0.0)
    assert free_disposal_run(single).profit == free_disposal_run(single.with_f(2.0)).profit


# single resource


@pytest.mark.parametrize("f", [0.0, 0.1, 0.5, 1.0, 2.0])
def test_canonical_profit_matches_closed_form(f):
    rng = np.random.default_rng(11)
    for _ in range(20):
        stream = rng.random(int(rng.integers(1, 30))) * 50
        res = single_resource_canonical_run(stream, f)
        assert res.profit == pytest.approx(canonical_profit(f, stream.max()), rel=1e-9)
        assert single_resource_canonical_run(stream * 7.3, f).profit == pytest.approx(7.3 * res.profit, rel=1e-9)


def test_canonical_single_weight_ratio():
    from buyback.numerics import lambert_w_minus1

    for f in (0.2, 1.0, 3.0):
        res = single_resource_canonical_run([1.0], f)
        assert 1.0 / res.profit == pytest.approx(-lambert_w_minus1(-1 / (math.e * (1 + f))), rel=1e-9)


def test_canonical_f0_keeps_the_max():
    res = single_resource_canonical_run([3.0, 1.0, 5.0, 4.0], 0.0)
    assert res.profit == 5.0


def test_canonical_non_maxima_emit_nothing():
    res = single_resource_canonical_run([1.0, 0.5, 2.0, 2.0, 1.5], 1.0)
    assert set(res.trace.arrival.tolist()) == {0, 2}


def test_nonuniform_k1_equals_canonical():
    stream = [1.0, 3.0, 2.0, 6.0]
    for f in (0.0, 1.0):
        a = nonuniform_single_run(stream, [1.0] * 4, 1, f)
        b = single_resource_canonical_run(stream, f)
        assert a.profit == pytest.approx(b.profit, rel=1e-12)


def test_nonuniform_unit_demands_close_to_canonical():
    stream = np.random.default_rng(3).random(40) * 10
    for K in (7, 50):
        a = nonuniform_single_run(stream, np.ones(40), K, 1.0)
        b = single_resource_canonical_run(stream, 1.0)
        assert abs(a.profit - b.profit) <= 2 * stream.max() / K


def test_nonuniform_self_convergence():
    stream = np.array([10.0 if i % 2 else 1.0 for i in range(20)]) * np.linspace(1, 3, 20)
    demands = np.full(20, 0.5)
    a = nonuniform_single_run(stream, demands, 1000, 1.0)
    b = nonuniform_single_run(stream, demands, 10000, 1.0)
    assert a.profit == pytest.approx(b.profit, rel=0.01)


def test_nonuniform_rejects_large_demand():
    with pytest.raises(ValueError):
        nonuniform_single_run([1.0], [1.5], 10, 0.0)
