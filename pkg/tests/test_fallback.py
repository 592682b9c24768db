import json
import os
import subprocess
import sys

import pytest

SCRIPT = r"""
import json
import numpy as np
from buyback import _accel, gen
from buyback.audit import audit_fractional
from buyback.engine import det_integral_run, fractional_pd_run
from buyback.numerics import det_tau, gamma_gen, matching_params
from buyback.rounding import ak_profit_batch

inst = gen.gen_random(5, 30, 1.0, seed=3, high=10.0)
pen = matching_params(1.0)
res = fractional_pd_run(inst, pen)
print(json.dumps({
    "numba": _accel.ENABLED,
    "frac": res.profit,
    "det": det_integral_run(inst, det_tau(1.0)).profit,
    "dual": audit_fractional(res.trace, inst, pen, gamma_gen(1.0)).dual,
    "ak": ak_profit_batch(1.3 ** np.arange(15), 0.5, 500, seed=1).tolist(),
}))
"""


def _run(disable):
    env = dict(os.environ)
    env.pop("BUYBACK_DISABLE_NUMBA", None)
    if disable:
        env["BUYBACK_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def test_fallback_matches_numba():
    fast, slow = _run(False), _run(True)
    assert slow["numba"] is False
    for key in ("frac", "det", "dual"):
        assert slow[key] == pytest.approx(fast[key], rel=1e-12)
    assert slow["ak"] == pytest.approx(fast["ak"], rel=1e-12)
