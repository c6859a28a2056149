"""Helper run in a subprocess: evaluate every kernel and save the results."""
import sys

import numpy as np

from pfode import GaussianMixture, MarginalFamily, ScoreField, build_schedule, kernels, theory
from pfode.sampler import flow, initial_draws
from pfode.score_models import lattice_width

out_path, threads = sys.argv[1], int(sys.argv[2])
kernels.set_threads(threads)
g1 = GaussianMixture([0.3, 0.7], [[-2.0], [1.5]], [0.25, 0.5])
g2 = GaussianMixture([0.4, 0.6], [[-1.0, 0.5], [1.2, -0.8]], [0.3, 0.7])
s = build_schedule(150, 2, 4)
x1 = np.random.default_rng(0).normal(0, 2, (9000, 1))
x2 = np.random.default_rng(1).normal(0, 2, (9000, 2))
res = {"backend": np.array(kernels.BACKEND)}
for name, g, x in (("d1", g1, x1), ("d2", g2, x2)):
    lq, sc, h = kernels.mixture_eval(x, g.log_weights, g.means, g.variances, True, True)
    gm, cov = kernels.noise_posterior(x, g.log_weights, g.means, g.variances, 0.3, 0.7)
    res.update({f"{name}_logq": lq, f"{name}_score": sc, f"{name}_hess": h, f"{name}_g": gm, f"{name}_cov": cov})
    f = ScoreField(MarginalFamily(g, s), "smooth_additive", epsilon=0.1, omega=1.0, phases=[0.2] * g.d)
    y, ld = flow(f, s, initial_draws(9000, g.d, 0), with_density=True)
    res[f"{name}_flow"], res[f"{name}_logdet"] = y, ld
    for mode in (0, 1):
        t = np.arange(2, s.T + 1)
        res[f"{name}_sum{mode}"] = np.array(theory._mc_step_sum(g, s, 9000, 0, s.beta[t], mode))
fl = ScoreField(MarginalFamily(g1, s), "floor_lattice", L=lattice_width(s, 75, 1e-3), t0=75)
res["floor_flow"] = flow(fl, s, initial_draws(9000, 1, 0))[0]
np.savez(out_path, **res)
