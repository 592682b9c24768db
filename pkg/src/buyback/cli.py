"""Command-line harness: instances, single runs, sweeps, curves, lower bounds, audits.

Exit codes: 0 success, 1 a check failed, 2 usage or input error.
"""
import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from . import __version__, gen
from .audit import AuditError, audit_det, audit_fractional
from .engine import (
    det_integral_run,
    fractional_pd_run,
    free_disposal_run,
    greedy_integral_run,
    single_resource_canonical_run,
)
from .model import EventTrace, WeightMatrixInstance, load_instance, save_instance
from .numerics import (
    F_BREAK_DET,
    F_BREAK_GEN,
    det_tau,
    gamma_det,
    gamma_gen,
    large_f_params,
    matching_params,
)
from .offline import opt_matching, opt_single
from .rounding import (
    ak_profit_batch,
    ak_randomized_single,
    large_capacity_batch,
    large_capacity_round,
    lossless_expectation,
    lossless_round_single,
)

SWEEP_ALGORITHMS = ("fractional", "det", "greedy", "free-disposal")
SIM_ALGORITHMS = SWEEP_ALGORITHMS + ("single-canonical", "lossless-round", "ak-round", "cap-round")
LB_FAMILIES = ("permutation", "continuum", "random-t", "det-single", "det-matching")


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    command: str
    instance: str = None
    gen: str = None
    alg: str = None
    f: float = None
    f_grid: str = None
    reps: int = 20
    seed: int = 0
    out: str = None
    tol: float = 1e-6

    @classmethod
    def from_args(cls, args):
        keys = cls.__dataclass_fields__
        return cls(**{k: getattr(args, k) for k in keys if hasattr(args, k)})

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


# helpers


def replication_seed(master, f_index, rep):
    return int(np.random.SeedSequence([int(master), int(f_index), int(rep)]).generate_state(1)[0])


def parse_grid(text):
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise UsageError(f"--f-grid wants A:B:STEP, got {text!r}")
    if step <= 0 or b < a:
        raise UsageError(f"bad grid {text!r}")
    k = int(math.floor((b - a) / step + 1e-9))
    return [round(a + i * step, 12) for i in range(k + 1)]


def mean_ci95(values):
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    if x.size == 1:
        return float(x[0]), 0.0
    half = stats.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size)
    return float(x.mean()), float(half)


def _fmt(x):
    return f"{x:.12g}"


def _load(args):
    if args.instance and args.gen:
        raise UsageError("give either --instance or --gen, not both")
    if args.instance:
        try:
            inst = load_instance(args.instance)
        except FileNotFoundError:
            raise UsageError(f"no such instance file: {args.instance}")
        except (ValueError, KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read instance {args.instance}: {exc}")
    elif args.gen:
        try:
            inst = gen.generate(args.gen)
        except ValueError as exc:
            raise UsageError(str(exc))
    else:
        raise UsageError("an instance is required: --instance PATH or --gen SPEC")
    if args.f is not None:
        inst = inst.with_f(args.f)
    return inst


def _outdir(args):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    return args.out


def _write(out, name, text):
    if out:
        with open(os.path.join(out, name), "w") as fh:
            fh.write(text)


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _single_stream(inst):
    if inst.n != 1:
        raise UsageError("single-resource algorithms need an instance with one offline node")
    return inst.weights[:, 0]


def cap_plan(inst):
    """Fractional plan for equal integer capacities s: the unit-capacity run with demands 1/s, scaled by s."""
    caps = inst.capacities
    if np.any(caps != caps[0]) or caps[0] < 1:
        raise UsageError("cap-round needs equal capacities >= 1")
    s = float(caps[0])
    unit = WeightMatrixInstance.from_matrix(inst.weights, inst.f, demands=inst.demands / s)
    res = fractional_pd_run(unit, matching_params(inst.f))
    return s * res.trace.allocated_mass(inst.T, inst.n)


# lower-bound helpers


def random_T_expected_ratio(T0, ratio, f, w_min=1e-4):
    """E[OPT]/E[ALG] for the truncated continuum with T ~ 1/T^2 on [1, T0) plus an atom 1/T0.

    One fractional run on the full grid gives every prefix profit; T in
    [g_k, g_{k+1}) sees exactly the grid points up to g_k.
    """
    g = gen.gen_continuum(T0, ratio, w_min)
    pen = large_f_params(f) if f >= F_BREAK_GEN else matching_params(f)
    res = fractional_pd_run(gen.single_column(g, f), pen)
    prefix = np.cumsum(res.per_arrival_profit)

    def below(t):
        return 0.0 if t <= 1.0 else 1.0 - 1.0 / t

    p = np.array([below(g[k + 1]) - below(g[k]) for k in range(len(g) - 1)] + [1.0 / T0])
    e_opt = float(p @ g)
    e_alg = float(p @ prefix)
    return e_opt / e_alg, e_opt, e_alg


def lowerbound_report(family, f, K=100, T=100.0, ratio=1.001, gamma_factor=1.0, n=200, seed=0):
    if family == "permutation":
        inst = gen.gen_permutation_lb(K, seed, f)
        res = fractional_pd_run(inst, matching_params(f))
        opt = sum(1.0 / k for k in range(1, K + 1))
        return {"family": family, "K": K, "f": f, "opt": opt, "alg": res.profit,
                "ratio": opt / res.profit, "bound": gamma_gen(f)}
    if family == "continuum":
        g = gen.gen_continuum(T, ratio)
        res = fractional_pd_run(gen.single_column(g, f), large_f_params(f))
        return {"family": family, "T": T, "grid_ratio": ratio, "f": f, "opt": float(g[-1]),
                "alg": res.profit, "ratio": float(g[-1]) / res.profit, "bound": gamma_gen(f)}
    if family == "random-t":
        r, e_opt, e_alg = random_T_expected_ratio(T, ratio, f)
        return {"family": family, "T0": T, "grid_ratio": ratio, "f": f, "expected_opt": e_opt,
                "expected_alg": e_alg, "ratio": r, "bound": gamma_gen(f)}
    if family in ("det-single", "det-matching"):
        make = gen.gen_det_lb_single if family == "det-single" else gen.gen_det_lb_matching
        gamma = gamma_det(f) * gamma_factor
        seq = make(f, gamma, n)
        return {"family": family, "f": f, "gamma": gamma, "gamma_det": gamma_det(f), "n": n,
                "positive": seq.positive, "failed_at": seq.failed_at}
    raise UsageError(f"unknown family {family!r}; choose from {LB_FAMILIES}")


# SVG


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def svg_plot(series, title, xlabel, ylabel, width=640, height=420):
    """Line chart; ``series`` is a list of (name, xs, ys, dashed)."""
    pad = 56
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.array([0.0, 1.0])
    ys = ys[np.isfinite(ys)]
    x0, x1 = float(xs.min()), float(xs.max()) or 1.0
    y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    sx = lambda x: pad + (x - x0) / (x1 - x0) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{height / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {height / 2})">{ylabel}</text>',
        f'<text x="{pad}" y="{height - pad + 16}" font-size="10" text-anchor="middle">{x0:.3g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" text-anchor="middle">{x1:.3g}</text>',
        f'<text x="{pad - 6}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 6}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for k, (name, sxs, sys_, dashed) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(sxs, sys_) if np.isfinite(y))
        dash = ' stroke-dasharray="6 4"' if dashed else ""
        out.append(f'<polyline class="series" data-name="{name}" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * k}" font-size="10" fill="{color}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# commands


def _simulate_one(inst, alg, seed, reps):
    """Run ``alg``; returns (RunResult or None, summary dict, audit report or None)."""
    if alg not in SIM_ALGORITHMS:
        raise UsageError(f"unknown algorithm {alg!r}; choose from {SIM_ALGORITHMS}")
    f = inst.f
    summary = {"algorithm": alg, "f": f}
    if alg in SWEEP_ALGORITHMS:
        if alg == "fractional":
            pen = matching_params(f)
            res = fractional_pd_run(inst, pen)
            rep = audit_fractional(res.trace, inst, pen, gamma_gen(f))
        elif alg == "free-disposal":
            res, rep = free_disposal_run(inst), None
        elif alg == "det":
            res = det_integral_run(inst, det_tau(f))
            rep = audit_det(res.trace, inst, det_tau(f), gamma_det(f))
        else:
            res, rep = greedy_integral_run(inst), None
        opt = rep.opt if rep is not None else opt_matching(inst).value
        summary.update(profit=res.profit, opt=opt)
        return res, summary, rep
    if alg == "cap-round":
        z = cap_plan(inst)
        res = large_capacity_round(inst, z, seed)
        profits, _, kappa = large_capacity_batch(inst, z, reps, seed)
        summary.update(profit=res.profit, opt=opt_matching(inst).value, kappa=kappa,
                       mean_profit=float(profits.mean()), reps=reps)
        return res, summary, None
    stream = _single_stream(inst)
    opt = opt_single(stream)
    if alg == "single-canonical":
        res = single_resource_canonical_run(stream, f)
    elif alg == "lossless-round":
        pen = matching_params(f)
        frac = fractional_pd_run(inst, pen)
        x = frac.trace.allocated_mass(inst.T, 1)[:, 0]
        res = lossless_round_single(x, stream, f, seed)
        expected, _ = lossless_expectation(x, stream, f)
        summary.update(fractional_profit=frac.profit, expected_profit=expected)
    elif alg == "ak-round":
        res = ak_randomized_single(stream, f, seed)
        p = ak_profit_batch(stream, f, reps, seed)
        se = float(p.std(ddof=1) / math.sqrt(len(p))) if len(p) > 1 else 0.0
        summary.update(mean_profit=float(p.mean()) if len(p) else math.nan, se=se, reps=reps)
    summary.update(profit=res.profit, opt=opt)
    return res, summary, None


def cmd_simulate(args):
    inst = _load(args)
    if args.alg is None:
        raise UsageError("--alg is required")
    out = _outdir(args)
    try:
        res, summary, rep = _simulate_one(inst, args.alg, args.seed, args.reps)
    except AuditError as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        raise UsageError(str(exc))
    opt = summary["opt"]
    summary["gap"] = res.profit / opt if opt > 0 else math.nan
    summary["ledger"] = res.ledger.to_dict()
    status = 0
    if rep is not None:
        summary["audit"] = rep.to_dict()
        _write(out, "audit.json", rep.to_json())
        status = 0 if rep.passed else 1
    if out:
        res.trace.to_csv(os.path.join(out, "trace.csv"))
        _write(out, "result.json", json.dumps(summary, indent=2, sort_keys=True, default=float))
        _write(out, "config.json", ExperimentConfig.from_args(args).to_json())
    _emit(summary)
    return status


def sweep_rows(f_values, reps, seed, servers=10, customers=100):
    """Per (f, algorithm): list of gaps ALG/OPT over replications of the cloud market."""
    gaps = {}
    for fi, f in enumerate(f_values):
        for alg in SWEEP_ALGORITHMS:
            gaps[(f, alg)] = []
        for r in range(reps):
            inst = gen.gen_cloud_market(replication_seed(seed, fi, r), f, servers, customers)
            opt = opt_matching(inst).value
            runs = {
                "fractional": fractional_pd_run(inst, matching_params(f)),
                "det": det_integral_run(inst, det_tau(f)),
                "greedy": greedy_integral_run(inst),
                "free-disposal": free_disposal_run(inst),
            }
            for alg, res in runs.items():
                gaps[(f, alg)].append(res.profit / opt)
    return gaps


def cmd_sweep(args):
    f_values = parse_grid(args.f_grid or "0:3:0.25")
    if args.reps < 0:
        raise UsageError("--reps must be >= 0")
    out = _outdir(args)
    gaps = sweep_rows(f_values, args.reps, args.seed)
    lines = ["f,algorithm,mean_gap,ci95"]
    failures = []
    summary = {}
    for f in f_values:
        for alg in SWEEP_ALGORITHMS:
            vals = gaps[(f, alg)]
            if not vals:
                continue
            mean, half = mean_ci95(vals)
            summary[(f, alg)] = mean
            lines.append(f"{f:g},{alg},{_fmt(mean)},{_fmt(half)}")
            if alg == "fractional" and min(vals) < 1 / gamma_gen(f) - args.tol:
                failures.append(f"fractional gap below 1/gamma_gen at f={f:g}")
            if alg == "det" and min(vals) < 1 / gamma_det(f) - args.tol:
                failures.append(f"det gap below 1/gamma_det at f={f:g}")
    csv_text = "\n".join(lines) + "\n"
    if out:
        _write(out, "sweep.csv", csv_text)
        series = []
        if summary:
            for alg in SWEEP_ALGORITHMS:
                series.append((alg, f_values, [summary[(f, alg)] for f in f_values], False))
        grid = np.linspace(min(f_values), max(f_values), 200)
        series.append(("1/gamma_gen", grid, [1 / gamma_gen(f) for f in grid], True))
        series.append(("1/gamma_det", grid, [1 / gamma_det(f) for f in grid], True))
        _write(out, "sweep.svg", svg_plot(series, "performance gap vs buyback factor", "f", "ALG/OPT"))
        _write(out, "config.json", ExperimentConfig.from_args(args).to_json())
    else:
        sys.stdout.write(csv_text)
    for msg in failures:
        print(msg, file=sys.stderr)
    return 1 if failures else 0


def curves_table(f_max, step):
    fs = [round(i * step, 12) for i in range(int(math.floor(f_max / step + 1e-9)) + 1)]
    return fs, [gamma_gen(f) for f in fs], [gamma_det(f) for f in fs]


def cmd_curves(args):
    if args.step <= 0 or args.f_max < 0:
        raise UsageError("need --step > 0 and --f-max >= 0")
    out = _outdir(args)
    fs, gg, gd = curves_table(args.f_max, args.step)
    text = "f,gamma_gen,gamma_det\n" + "".join(f"{f:g},{_fmt(a)},{_fmt(b)}\n" for f, a, b in zip(fs, gg, gd))
    if out:
        _write(out, "curves.csv", text)
        series = [("fractional", fs, gg, False), ("deterministic", fs, gd, False)]
        svg = svg_plot(series, f"competitive ratio (breaks at {F_BREAK_GEN:.3f} and {F_BREAK_DET:.3f})", "f", "ratio")
        _write(out, "curves.svg", svg)
    else:
        sys.stdout.write(text)
    return 0


def cmd_lowerbound(args):
    f = 0.0 if args.f is None else args.f
    reports = []
    for K in args.K:
        reports.append(lowerbound_report(args.family, f, K=K, T=args.T, ratio=args.ratio,
                                         gamma_factor=args.gamma_factor, n=args.n, seed=args.seed))
        if args.family != "permutation":
            break
    out = _outdir(args)
    _write(out, "lowerbound.json", json.dumps(reports, indent=2, default=float))
    _emit(reports if len(reports) > 1 else reports[0])
    return 0


def cmd_audit(args):
    if not args.trace:
        raise UsageError("--trace is required")
    inst = _load(args)
    try:
        trace = EventTrace.from_csv(args.trace)
    except FileNotFoundError:
        raise UsageError(f"no such trace file: {args.trace}")
    except (ValueError, KeyError) as exc:
        raise UsageError(f"cannot read trace {args.trace}: {exc}")
    alg = args.alg or "fractional"
    f = inst.f
    try:
        if alg == "fractional":
            pen = matching_params(f) if args.lam is None else _pen(args)
            rep = audit_fractional(trace, inst, pen, gamma_gen(f))
        elif alg == "det":
            tau = det_tau(f) if args.tau is None else args.tau
            rep = audit_det(trace, inst, tau, gamma_det(f))
        else:
            raise UsageError("audit supports --alg fractional or det")
    except AuditError as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return 1
    out = _outdir(args)
    _write(out, "audit.json", rep.to_json())
    print(rep.to_json())
    return 0 if rep.passed else 1


def _pen(args):
    from .numerics import PenaltySpec

    if args.tau is None:
        raise UsageError("--lam needs --tau")
    return PenaltySpec(args.lam, args.tau)


def cmd_gen(args):
    if not args.gen:
        raise UsageError("--gen SPEC is required")
    try:
        inst = gen.generate(args.gen)
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.f is not None:
        inst = inst.with_f(args.f)
    out = _outdir(args)
    if out:
        save_instance(inst, os.path.join(out, "instance.json"))
    else:
        print(json.dumps(inst.to_json()))
    return 0


def cmd_opt(args):
    inst = _load(args)
    res = opt_matching(inst)
    _emit({"opt": res.value, "assignment": [list(a) for a in res.assignment]})
    return 0


def cmd_round(args):
    if args.alg not in ("lossless-round", "ak-round", "cap-round"):
        raise UsageError("round needs --alg lossless-round, ak-round or cap-round")
    return cmd_simulate(args)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--instance", metavar="PATH")
    common.add_argument("--gen", metavar="SPEC", help="family:k=v,... e.g. greedy-killer:T=10,f=1")
    common.add_argument("--alg", metavar="NAME")
    common.add_argument("--f", type=float)
    common.add_argument("--f-grid", metavar="A:B:STEP")
    common.add_argument("--reps", type=int, default=20)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--tol", type=float, default=1e-6)

    p = argparse.ArgumentParser(prog="buyback", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run one algorithm on one instance").set_defaults(func=cmd_simulate)
    sub.add_parser("sweep", parents=[common], help="performance gaps on the cloud market over an f grid").set_defaults(func=cmd_sweep)
    c = sub.add_parser("curves", parents=[common], help="competitive ratio curves")
    c.add_argument("--f-max", type=float, default=3.0)
    c.add_argument("--step", type=float, default=0.01)
    c.set_defaults(func=cmd_curves)
    lb = sub.add_parser("lowerbound", parents=[common], help="lower-bound families against their bounds")
    lb.add_argument("--family", choices=LB_FAMILIES, required=True)
    lb.add_argument("--K", type=int, nargs="+", default=[100])
    lb.add_argument("--T", type=float, default=100.0)
    lb.add_argument("--ratio", type=float, default=1.001)
    lb.add_argument("--gamma-factor", type=float, default=1.0)
    lb.add_argument("--n", type=int, default=200)
    lb.set_defaults(func=cmd_lowerbound)
    a = sub.add_parser("audit", parents=[common], help="dual-certificate audit of a trace")
    a.add_argument("--trace", metavar="PATH")
    a.add_argument("--lam", type=float)
    a.add_argument("--tau", type=float)
    a.set_defaults(func=cmd_audit)
    sub.add_parser("gen", parents=[common], help="write a generated instance").set_defaults(func=cmd_gen)
    sub.add_parser("opt", parents=[common], help="offline optimum").set_defaults(func=cmd_opt)
    sub.add_parser("round", parents=[common], help="randomized rounding runs").set_defaults(func=cmd_round)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
