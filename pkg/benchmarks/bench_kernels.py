"""Compare the numba kernels with the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py [--repeat N]

Each backend runs in its own subprocess because the backend is chosen from
GTRIDENT_NUMBA at import time.  The first numba call (compilation or cache
load) is timed separately from the steady state.
"""

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from gtrident import _kernels
from gtrident.forward import joint_n_spectral, joint3_exact
from gtrident.identify import recover_all
from gtrident.sampling import random_model, random_binary_tree, rng_for

repeat = int(sys.argv[1])
rng = rng_for(2024)
model, rates, triple = random_model(rng, 4)
tree6 = random_binary_tree(rng, 6)
sym = np.array(rng.normal(size=(8, 8)))
sym = sym + sym.T

cases = {
    "jacobi_eigh 8x8": lambda: _kernels.jacobi_eigh(sym),
    "joint3_exact k=4": lambda: joint3_exact(model, rates, triple),
    "joint_n_spectral n=6": lambda: joint_n_spectral(tree6, model, rates),
    "recover_all k=4": lambda: recover_all(joint3_exact(model, rates, triple)),
}
out = {"backend": _kernels.backend(), "cases": {}}
for name, fn in cases.items():
    t0 = time.perf_counter(); fn(); first = time.perf_counter() - t0
    n = max(1, repeat if "n=6" not in name else repeat // 20)
    t0 = time.perf_counter()
    for _ in range(n):
        fn()
    out["cases"][name] = {"first_s": first, "per_call_s": (time.perf_counter() - t0) / n}
print(json.dumps(out))
"""


def run(flag, repeat):
    env = dict(os.environ, GTRIDENT_NUMBA=flag)
    res = subprocess.run(
        [sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True
    )
    return json.loads(res.stdout)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=200)
    args = parser.parse_args()
    fast = run("1", args.repeat)
    slow = run("0", args.repeat)
    print(f"{'kernel':24s} {'numpy (ms)':>12s} {fast['backend'] + ' (ms)':>12s} {'speed-up':>9s} {'first call (s)':>15s}")
    for name, s in slow["cases"].items():
        f = fast["cases"][name]
        print(
            f"{name:24s} {1e3 * s['per_call_s']:12.4f} {1e3 * f['per_call_s']:12.4f} "
            f"{s['per_call_s'] / f['per_call_s']:9.1f} {f['first_s']:15.3f}"
        )


if __name__ == "__main__":
    main()
