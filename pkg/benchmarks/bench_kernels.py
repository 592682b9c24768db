"""Time the hot kernels with numba and with the plain-Python fallback.

    python3 benchmarks/bench_kernels.py            # both paths, side by side
    python3 benchmarks/bench_kernels.py --single   # current process only, JSON

Each path runs in its own subprocess because the flag is read at import time.
"""
import argparse
import json
import os
import subprocess
import sys
import time


def workloads(scale):
    import numpy as np

    from buyback import gen
    from buyback.audit import audit_fractional
    from buyback.engine import det_integral_run, fractional_pd_run
    from buyback.model import WeightMatrixInstance
    from buyback.numerics import det_tau, gamma_gen, matching_params
    from buyback.rounding import ak_profit_batch, large_capacity_batch

    perm = gen.gen_permutation_lb(60 * scale, 0, 0.0)
    rand = gen.gen_random(8, 40 * scale, 1.0, seed=1, high=10.0)
    pen0, pen1 = matching_params(0.0), matching_params(1.0)
    frac_trace = fractional_pd_run(rand, pen1).trace
    stream = 1.2 ** np.arange(25)
    cap = WeightMatrixInstance.from_matrix(np.full((400, 1), 2.0), 1.0, capacities=[400])
    return {
        "fractional_permutation": lambda: fractional_pd_run(perm, pen0).profit,
        "fractional_random": lambda: fractional_pd_run(rand, pen1).profit,
        "det_random": lambda: det_integral_run(rand, det_tau(1.0)).profit,
        "audit_fractional": lambda: audit_fractional(frac_trace, rand, pen1, gamma_gen(1.0)).dual,
        "ak_batch": lambda: float(ak_profit_batch(stream, 1.0, 2000 * scale, seed=3).mean()),
        "large_capacity_batch": lambda: float(large_capacity_batch(cap, np.ones((400, 1)), 200 * scale, seed=5)[0].mean()),
    }


def run_single(scale, repeat):
    from buyback import _accel

    out = {"numba": _accel.ENABLED, "results": {}}
    for name, fn in workloads(scale).items():
        t0 = time.perf_counter()
        value = fn()  # includes compilation on the numba path
        first = time.perf_counter() - t0
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["results"][name] = {"first": first, "best": best, "value": value}
    return out


def spawn(disable, scale, repeat):
    env = dict(os.environ)
    env.pop("BUYBACK_DISABLE_NUMBA", None)
    if disable:
        env["BUYBACK_DISABLE_NUMBA"] = "1"
    cmd = [sys.executable, os.path.abspath(__file__), "--single", "--scale", str(scale), "--repeat", str(repeat)]
    done = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(done.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--single", action="store_true")
    ap.add_argument("--scale", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if args.single:
        print(json.dumps(run_single(args.scale, args.repeat)))
        return 0
    fast = spawn(False, args.scale, args.repeat)
    slow = spawn(True, args.scale, args.repeat)
    print(f"{'kernel':<24}{'numba s':>10}{'python s':>11}{'speedup':>9}{'jit+1st s':>11}  agree")
    for name, a in fast["results"].items():
        b = slow["results"][name]
        agree = abs(a["value"] - b["value"]) <= 1e-9 * max(1.0, abs(b["value"]))
        print(f"{name:<24}{a['best']:>10.4f}{b['best']:>11.4f}{b['best'] / a['best']:>9.1f}{a['first']:>11.2f}  {agree}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
