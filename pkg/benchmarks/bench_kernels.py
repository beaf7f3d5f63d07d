"""Time the Bellman solver and the learner loop under both kernel backends.

Each backend runs in its own interpreter because MUMDP_DISABLE_NUMBA is read
at import time.  Numba timings exclude the first (compiling) call.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--slots 20000]
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
from mumdp import _backend
from mumdp.instances import tiny_b
from mumdp.learning import LearningConfig
from mumdp.mdp import solve_local
from mumdp.sim import run_learner

repeat, slots = int(sys.argv[1]), int(sys.argv[2])
inst = tiny_b()
ms = inst.models()
names = [u.name for u in inst.users]

def solve():
    for m in ms:
        solve_local(m, 0.5, inst.alpha, len(ms), tol=1e-10)

def learn():
    run_learner(ms, names, inst.alpha, LearningConfig(price_updates=True, K=50), slots, 1)

solve(); run_learner(ms, names, inst.alpha, LearningConfig(), 50, 1)
out = {"backend": _backend.BACKEND}
for name, fn in (("solve", solve), ("learn", learn)):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
json.dump(out, sys.stdout)
"""


def run(disable: bool, repeat: int, slots: int) -> dict:
    env = dict(os.environ, MUMDP_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(slots)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--slots", type=int, default=20000)
    args = ap.parse_args()
    fast = run(False, args.repeat, args.slots)
    slow = run(True, args.repeat, args.slots)
    print(f"{'task':<8}{fast['backend']:>12}{slow['backend']:>12}{'speedup':>10}")
    for k in ("solve", "learn"):
        print(f"{k:<8}{fast[k]:>11.4f}s{slow[k]:>11.4f}s{slow[k] / fast[k]:>9.1f}x")


if __name__ == "__main__":
    main()
