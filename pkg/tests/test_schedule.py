import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfode.schedule import build_schedule, saturation_step, verify_properties


def reference(T, c0, c1):
    """Plain-Python schedule: beta_1 = T^-c0, beta_t = r min(beta_1 (1+r)^t, 1), r = c1 ln T / T."""
    r = c1 * math.log(T) / T
    b1 = T ** (-c0)
    beta = [b1] + [r * min(b1 * (1 + r) ** t, 1.0) for t in range(2, T + 1)]
    ab, prod = [], 1.0
    for b in beta:
        prod *= 1.0 - b
        ab.append(prod)
    return beta, ab


@pytest.mark.parametrize("T,c0,c1", [(100, 4, 4), (1000, 2, 4), (1000, 4, 4), (4000, 2, 3)])
def test_matches_reference(T, c0, c1):
    s = build_schedule(T, c0, c1)
    beta, ab = reference(T, c0, c1)
    np.testing.assert_allclose(s.beta[1:], beta, rtol=1e-13)
    np.testing.assert_allclose(s.alpha_bar[1:], ab, rtol=1e-10)
    np.testing.assert_allclose(s.one_minus_alpha_bar[1:], 1 - np.array(ab), rtol=0, atol=1e-14)


def test_first_step_and_padding():
    s = build_schedule(1000, 2, 4)
    assert s.beta[1] == 1000.0 ** -2
    assert s.beta[2] == pytest.approx(4 * math.log(1000) / 1000 * 1e-6 * (1 + 4 * math.log(1000) / 1000) ** 2)
    assert len(s.beta) == 1001
    assert s.alpha_bar[0] == 1.0


def test_one_minus_alpha_bar_small_t_precision():
    # 1 - ab_1 = beta_1 ~ 1e-8: cancellation-free computation keeps full relative precision
    s = build_schedule(1000, 2, 4)
    assert s.one_minus_alpha_bar[1] == pytest.approx(s.beta[1], rel=1e-14)


def test_saturation():
    s = build_schedule(1000, 2, 4)
    t = saturation_step(s)
    r = s.rate
    assert s.beta[t] == r
    assert s.beta[t - 1] < r
    assert s.beta[900] == pytest.approx(0.02763102, abs=1e-8)
    assert saturation_step(build_schedule(1000, 4, 4)) == 1001


def test_defaults_do_not_reach_terminal_noise():
    rep = verify_properties(build_schedule(1000, 4, 4), 2.0)
    assert [r.property_id for r in rep.results] == list("abcde")
    assert not rep["d"].passed
    assert all(rep[k].passed for k in "abce")


def test_small_T_flags_a():
    rep = verify_properties(build_schedule(10, 4, 4), 2.0)
    assert not rep["a"].passed and rep["a"].margin < 0
    assert not rep.all_pass


def test_working_schedule_all_pass():
    for T in (250, 1000, 4000):
        assert verify_properties(build_schedule(T, 2, 4), 2.0).all_pass


def test_csv_row_per_property(tmp_path):
    import io
    buf = io.StringIO()
    verify_properties(build_schedule(1000, 2, 4), 2.0).write_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "property_id,pass,margin"
    assert len(lines) == 6


@pytest.mark.parametrize("bad", [dict(T=1), dict(T=10, c1=10), dict(T=100, c0=-1)])
def test_rejects_invalid(bad):
    args = dict(T=100, c0=2, c1=4) | bad
    with pytest.raises(ValueError):
        build_schedule(**args)


@given(T=st.integers(20, 5000), c0=st.floats(0.5, 6), c1=st.floats(0.5, 4))
def test_invariants(T, c0, c1):
    if c1 * math.log(T) / T >= 0.5:
        return
    s = build_schedule(T, c0, c1)
    b = s.beta[1:]
    assert np.all(b > 0) and np.all(b[1:] <= s.rate)
    assert np.all(np.diff(b[1:]) >= 0)
    ab = s.alpha_bar[1:]
    assert np.all(np.diff(ab) <= 0) and np.all(ab > 0)
    assert np.all(np.diff(s.log_alpha_bar[1:]) < 0)
    np.testing.assert_allclose(s.alpha_bar + s.one_minus_alpha_bar, 1.0, atol=1e-15)
    np.testing.assert_allclose(s.alpha[1:], 1 - b, rtol=0, atol=0)
