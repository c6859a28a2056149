import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfode import GaussianMixture, MarginalFamily, ProductMixture, ScoreField, build_schedule
from pfode.sampler import (DegenerateJacobian, flow, initial_draws, jac_phi, phi_map, run_trajectory,
                           sample_batch, transport_grid)
from pfode.score_models import lattice_width

from conftest import fd_jacobian


def affine_oracle(m0, v0, s):
    """For Gaussian data every step is affine, y -> a y + b; compose them in plain Python."""
    a_tot, b_tot = 1.0, 0.0
    for t in range(s.T, 1, -1):
        ab, om = s.alpha_bar[t], s.one_minus_alpha_bar[t]
        var = ab * v0 + om
        # score(y) = -(y - sqrt(ab) m0) / var
        a = (1 - 0.5 * s.beta[t] / var) / math.sqrt(s.alpha[t])
        b = 0.5 * s.beta[t] * math.sqrt(ab) * m0 / var / math.sqrt(s.alpha[t])
        a_tot, b_tot = a * a_tot, a * b_tot + b
    return a_tot, b_tot


@pytest.mark.parametrize("m0,v0", [(0.0, 1.0), (3.0, 1.0), (-1.0, 0.3)])
def test_gaussian_transport_matches_affine_oracle(m0, v0):
    s = build_schedule(300, 2, 4)
    f = ScoreField(MarginalFamily(GaussianMixture.gaussian([m0], v0), s))
    b = sample_batch(f, s, 500, seed=4, with_density=True)
    a, c = affine_oracle(m0, v0, s)
    yT = initial_draws(500, 1, 4)
    np.testing.assert_allclose(b.y1, a * yT + c, rtol=1e-11, atol=1e-12)
    # y1 ~ N(c, a^2)
    ref = -0.5 * ((b.y1[:, 0] - c) / a) ** 2 - math.log(abs(a)) - 0.5 * math.log(2 * math.pi)
    np.testing.assert_allclose(b.log_p1, ref, rtol=1e-11, atol=1e-11)


@pytest.fixture(scope="module", params=["exact", "constant_shift", "smooth_additive"])
def field_1d(request, gmm1):
    s = build_schedule(120, 2, 4)
    fam = MarginalFamily(gmm1, s)
    kw = {"exact": {}, "constant_shift": {"shift": [0.2]},
          "smooth_additive": {"epsilon": 0.1, "omega": 1.5, "phases": [0.3]}}[request.param]
    return ScoreField(fam, request.param, **kw), s


def test_kernel_matches_reference_path(field_1d):
    f, s = field_1d
    yT = initial_draws(40, 1, 2)
    y1, logdet = flow(f, s, yT, with_density=True)
    for i in range(0, 40, 7):
        tr = run_trajectory(f, s, yT[i], with_density=True)
        np.testing.assert_allclose(tr.y1, y1[i], rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(math.fsum(tr.step_logdets), logdet[i], rtol=1e-11, atol=1e-12)
        assert len(tr.points) == s.T


def test_kernel_matches_reference_path_2d(gmm2):
    s = build_schedule(80, 2, 4)
    f = ScoreField(MarginalFamily(gmm2, s), "smooth_additive", epsilon=0.2, omega=1.0, phases=[0.0, 1.0])
    yT = initial_draws(10, 2, 1)
    y1, logdet = flow(f, s, yT, with_density=True)
    for i in range(10):
        tr = run_trajectory(f, s, yT[i], with_density=True)
        np.testing.assert_allclose(tr.y1, y1[i], rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(math.fsum(tr.step_logdets), logdet[i], rtol=1e-11, atol=1e-12)


@given(x=st.lists(st.floats(-5, 5), min_size=4, max_size=4), t=st.integers(2, 80))
def test_map_jacobian_matches_finite_differences(gmm2, x, t):
    s = build_schedule(80, 2, 4)
    f = ScoreField(MarginalFamily(gmm2, s), "smooth_additive", epsilon=0.2, omega=1.0, phases=[0.0, 1.0])
    pts = np.array(x).reshape(2, 2)
    J = jac_phi(f, s, t, pts)
    J_fd = fd_jacobian(lambda y: phi_map(f, s, t, y), pts, h=1e-6)
    assert np.max(np.abs(J - J_fd) / np.maximum(1, np.abs(J))) < 1e-6


def test_product_flow_factorises(gmm1):
    s = build_schedule(100, 2, 4)
    p = ProductMixture.replicate(gmm1, 3)
    fp = ScoreField(MarginalFamily(p, s), "constant_shift", shift=[0.1, 0.0, -0.1])
    y = initial_draws(50, 3, 8)
    out, ld = flow(fp, s, y, with_density=True)
    total = np.zeros(50)
    for j, c in enumerate([0.1, 0.0, -0.1]):
        f1 = ScoreField(MarginalFamily(gmm1, s), "constant_shift", shift=[c])
        o1, l1 = flow(f1, s, y[:, j:j + 1], with_density=True)
        np.testing.assert_array_equal(out[:, j:j + 1], o1)
        total += l1
    np.testing.assert_allclose(ld, total, rtol=1e-14)


def test_partial_flows_compose(field_1d):
    f, s = field_1d
    y = initial_draws(30, 1, 0)
    full, ld = flow(f, s, y, with_density=True)
    mid, ld1 = flow(f, s, y, t_lo=60, with_density=True)
    end, ld2 = flow(f, s, mid, t_hi=59, with_density=True)
    np.testing.assert_array_equal(full, end)
    np.testing.assert_allclose(ld, ld1 + ld2, rtol=1e-13)


def test_batch_determinism_and_prefix(gmm1):
    s = build_schedule(100, 2, 4)
    f = ScoreField(MarginalFamily(gmm1, s))
    a = sample_batch(f, s, 5000, seed=3, with_density=True)
    b = sample_batch(f, s, 5000, seed=3, with_density=True)
    c = sample_batch(f, s, 4200, seed=3, with_density=True)
    np.testing.assert_array_equal(a.y1, b.y1)
    np.testing.assert_array_equal(a.y1[:4200], c.y1)
    np.testing.assert_array_equal(a.log_p1[:4200], c.log_p1)
    assert a.checksums() == b.checksums()
    assert sample_batch(f, s, 10, seed=4).checksums() != a.checksums()[:10]


def test_batch_csv(gmm1):
    s = build_schedule(50, 2, 4)
    f = ScoreField(MarginalFamily(gmm1, s))
    b = sample_batch(f, s, 3, seed=0, with_density=True)
    buf = io.StringIO()
    b.write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "index,y1_0,log_p1,checksum"
    assert float(lines[1].split(",")[1]) == b.y1[0, 0]


def test_exact_score_jacobians_positive(gmm1):
    s = build_schedule(500, 2, 4)
    f = ScoreField(MarginalFamily(gmm1, s))
    b = sample_batch(f, s, 20000, seed=0, with_density=True)
    assert np.all(np.isfinite(b.log_p1))


def test_floor_lattice_density_degenerate(gmm1):
    s = build_schedule(200, 2, 4)
    fam = MarginalFamily(gmm1, s)
    f = ScoreField(fam, "floor_lattice", L=lattice_width(s, 100, 1e-3), t0=100)
    with pytest.raises(DegenerateJacobian) as info:
        sample_batch(f, s, 10, seed=0, with_density=True)
    assert info.value.t == 100
    # without density the sampler runs and lands on the lattice at t0
    y, _ = flow(f, s, initial_draws(100, 1, 0), t_lo=100)
    k = y[:, 0] / f.L
    assert np.max(np.abs(k - np.round(k))) < 1e-6


def test_transport_grid_monotone(gmm1):
    s = build_schedule(200, 2, 4)
    f = ScoreField(MarginalFamily(gmm1, s))
    u, y1, logp = transport_grid(f, s)
    assert np.all(np.diff(y1) > 0)
    # density integrates to one over the mapped grid
    p = np.exp(logp)
    assert np.sum(0.5 * (p[1:] + p[:-1]) * np.diff(y1)) == pytest.approx(1.0, abs=2e-5)


def test_rejects_mismatched_schedule(gmm1):
    f = ScoreField(MarginalFamily(gmm1, build_schedule(100, 2, 4)))
    with pytest.raises(ValueError):
        flow(f, build_schedule(101, 2, 4), np.zeros((1, 1)))
    with pytest.raises(ValueError):
        sample_batch(f, build_schedule(100, 2, 4), 0, 0)
