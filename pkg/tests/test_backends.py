import json
import os
import subprocess
import sys

import numpy as np

from rvdarwin import _accel

SCRIPT = r"""
import json
import numpy as np
from rvdarwin import _accel, _kernels
from rvdarwin.grid import cic_deposit
rng = np.random.default_rng(0)
src = rng.uniform(-1, 1, (200, 3)); tgt = rng.uniform(-1.5, 1.5, (150, 3))
w = rng.uniform(0.5, 1.5, 200); u = rng.normal(size=(200, 3))
out = [a.tolist() for a in _kernels.full_sum(src, w, u, tgt, 0.1)]
out.append(cic_deposit(src, w, np.full(3, -1.2), 0.1, (25, 25, 25)).tolist())
print(json.dumps({"backend": _accel.backend(), "out": out}))
"""


def _run(flag):
    env = dict(os.environ, RVD_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def test_numpy_fallback_matches_compiled_path():
    slow = _run("0")
    assert slow["backend"] == "numpy"
    fast = _run("1")
    assert fast["backend"] == _accel.backend()
    for a, b in zip(fast["out"], slow["out"]):
        np.testing.assert_allclose(np.array(a), np.array(b), rtol=1e-12, atol=1e-14)
