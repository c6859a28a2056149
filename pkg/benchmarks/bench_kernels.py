"""Time the hot kernels under the numba and pure-numpy backends.

Each backend runs in its own interpreter because the choice is fixed at
import time.  Usage: python benchmarks/bench_kernels.py [--n 20000] [--T 500]
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
from pfode import GaussianMixture, MarginalFamily, ScoreField, build_schedule, kernels, theory
from pfode.sampler import flow, initial_draws

n, T, reps = map(int, sys.argv[1:4])
g = GaussianMixture([0.3, 0.7], [[-2.0], [1.5]], [0.25, 0.5])
s = build_schedule(T, 2, 4)
f = ScoreField(MarginalFamily(g, s))
y = initial_draws(n, 1, 0)
t = np.arange(2, T + 1)
x = np.random.default_rng(0).normal(0, 2, (n, 1))

cases = {
    "mixture_eval": lambda: kernels.mixture_eval(x, g.log_weights, g.means, g.variances, True, True),
    "flow_density": lambda: flow(f, s, y, with_density=True),
    "posterior_step_sums": lambda: theory._mc_step_sum(g, s, n, 0, s.beta[t], 0),
}
out = {"backend": kernels.BACKEND}
for name, fn in cases.items():
    fn()  # warm-up, includes compilation
    best = min((lambda t0: (fn(), time.perf_counter() - t0)[1])(time.perf_counter()) for _ in range(reps))
    out[name] = best
print(json.dumps(out))
"""


def run(disable, n, T, reps):
    env = dict(os.environ, PFODE_DISABLE_NUMBA="1" if disable else "0")
    r = subprocess.run([sys.executable, "-c", WORKER, str(n), str(T), str(reps)],
                       env=env, capture_output=True, text=True, check=True)
    return json.loads(r.stdout)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--reps", type=int, default=3)
    a = p.parse_args()
    nb, npy = run(False, a.n, a.T, a.reps), run(True, a.n, a.T, a.reps)
    print(f"n={a.n} T={a.T} best of {a.reps}")
    print(f"{'kernel':<22}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for k in nb:
        if k == "backend":
            continue
        print(f"{k:<22}{nb[k]:>12.4f}{npy[k]:>12.4f}{npy[k] / nb[k]:>9.1f}x")


if __name__ == "__main__":
    main()
