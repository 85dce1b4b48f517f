import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_cavity import transmission as tr

# converged analytic curve at V0 = 9 E_R, sigma_p = 0.0325 p_R, w_z = 50 um
# (regression values; quadrature change under refinement < 2e-8)
T_AVE_2_4 = 0.6186200184324996


def test_closed_forms():
    assert tr.total_transmission(1.0, True) == 1.0
    assert tr.total_transmission(1.0, False) == 1.0
    assert tr.total_transmission(0.5, True) == pytest.approx(1 / 3, rel=1e-15)
    assert tr.total_transmission(0.5, False) == pytest.approx(1 / 4, rel=1e-15)
    with pytest.raises(ValueError):
        tr.total_transmission(1.5, True)


@given(t=st.floats(0.05, 1.0))
def test_resummation_converges(t):
    assert tr.resummation_partial(t, 2000) == pytest.approx(tr.total_transmission(t, True), rel=1e-10)


def test_allowed_channel_is_transparent(w_z):
    m = tr.mono_transmission(w_z, 0.1, 1.5)
    assert m.T_plus == 1.0 and m.T == 1.0 and m.exponents == ()


def test_exponent_arithmetic(w_z):
    m = tr.mono_transmission(w_z, 9.0, 2.3)
    assert m.T_plus == pytest.approx(math.exp(-2.0 * sum(m.exponents)), rel=1e-15)
    # exponent ln(10)/2 gives T+ = 0.1
    assert math.exp(-2.0 * math.log(10.0) / 2.0) == pytest.approx(0.1, rel=1e-15)


def test_first_gap_lens_is_opaque(w_z, oracles):
    m = tr.mono_transmission(w_z, 9.0, 1.3)
    assert m.T_plus == pytest.approx(oracles["T_plus_9_p1.3"]["T_plus"], rel=1e-6)
    assert m.T_plus < 1e-3


def test_average_of_unity():
    for p_in, s in [(2.4, 0.0325), (1.0, 0.01)]:
        val, _ = tr.averaged_transmission(lambda p: np.ones_like(p), p_in, s, check=False)
        assert val == pytest.approx(1.0, abs=1e-14)
    # window clipped at p = 0 is renormalised, and the clipping is reported
    with pytest.warns(RuntimeWarning, match="truncated"):
        val, _ = tr.averaged_transmission(lambda p: np.ones_like(p), 0.5, 0.2, check=False)
    assert val == pytest.approx(1.0, abs=1e-14)


def test_narrow_window_limit():
    f = lambda p: 0.5 + 0.3 * np.sin(3 * p)
    val, _ = tr.averaged_transmission(f, 1.7, 1e-5)
    assert val == pytest.approx(float(f(np.array(1.7))), abs=1e-8)


def test_window_edges_interpolate():
    p = np.array([0.0, 1.0, 2.0, 3.0])
    t = np.array([0.0, 1.0, 1.0, 0.0])
    assert tr.window_edges(p, t) == pytest.approx([0.5, 2.5])


@settings(max_examples=10, deadline=None)
@given(p=st.floats(1.0, 3.2))
def test_mono_bounds(w_z, p):
    m = tr.mono_transmission(w_z, 9.0, p)
    assert 0.0 <= m.T <= 1.0 and 0.0 <= m.T_plus <= 1.0


def test_centre_switch_points_are_band_edges(w_z):
    cuts = tr.center_switch_momenta(9.0, 1.0, 3.2)
    from lattice_cavity import bloch
    edges = bloch.band_edges(9.0, 5).ravel()
    for c in cuts:
        assert np.min(np.abs(edges - c * c)) < 1e-3


def test_averaged_curve_regression(w_z):
    c = tr.transmission_curve(w_z, 9.0, [2.4], 0.0325)
    assert c.converged
    assert c.T_ave[0] == pytest.approx(T_AVE_2_4, abs=1e-6)
