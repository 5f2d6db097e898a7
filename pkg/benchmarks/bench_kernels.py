"""Time the hot kernels on the numba path and on the pure-numpy fallback.

The fallback is selected at import time, so each backend runs in its own
interpreter (``RVD_NUMBA=0`` for numpy).  Results of the two backends are
compared for agreement as well as speed.

    python benchmarks/bench_kernels.py [--sources 2000] [--targets 2000] [--repeat 3]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from rvdarwin import _accel, _kernels
from rvdarwin.grid import cic_deposit, layout_for

ns, nt, repeat = (int(v) for v in sys.argv[1:4])
rng = np.random.default_rng(0)
src = rng.uniform(-1, 1, (ns, 3))
tgt = rng.uniform(-1.5, 1.5, (nt, 3))
w = rng.uniform(0.5, 1.5, ns)
u = rng.normal(size=(ns, 3)) * 0.3
eps = 0.1
origin, dims = layout_for(src, 0.05)

cases = {
    "scalar_sum": lambda: _kernels.scalar_sum(src, w, tgt, eps),
    "full_sum": lambda: _kernels.full_sum(src, w, u, tgt, eps),
    "cic_deposit": lambda: cic_deposit(src, u, origin, 0.05, dims),
}
out = {"backend": _accel.backend(), "times": {}, "checksums": {}}
for name, fn in cases.items():
    res = fn()  # warm-up (and compilation on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t0)
    arrays = res if isinstance(res, tuple) else (res,)
    out["times"][name] = best
    out["checksums"][name] = [float(np.sum(np.abs(a))) for a in arrays]
print(json.dumps(out))
"""


def run(backend_flag, args):
    env = dict(os.environ, RVD_NUMBA=backend_flag)
    cmd = [sys.executable, "-c", WORKER, str(args.sources), str(args.targets), str(args.repeat)]
    done = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(done.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sources", type=int, default=2000)
    ap.add_argument("--targets", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    t0 = time.perf_counter()
    fast = run("1", args)
    slow = run("0", args)
    print(f"{args.sources} sources x {args.targets} targets, best of {args.repeat}")
    print(f"{'kernel':<14}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}{'max rel diff':>15}")
    for name, tf in fast["times"].items():
        ts = slow["times"][name]
        diffs = [abs(a - b) / max(abs(b), 1e-300) for a, b in zip(fast["checksums"][name], slow["checksums"][name])]
        print(f"{name:<14}{tf:>11.4f}s{ts:>11.4f}s{ts / tf:>9.1f}x{max(diffs):>15.1e}")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
