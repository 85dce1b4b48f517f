import math

import numpy as np
import pytest
from scipy.signal import find_peaks
from hypothesis import given, settings, strategies as st

from lattice_cavity import revival as rv
from lattice_cavity.local_bands import CavityGeometry
from lattice_cavity.units import RB87_MASS


def test_box_law(oracles):
    p = rv.box_revival_times(20e-6, RB87_MASS)
    assert p.T_rev == pytest.approx(oracles["units"]["box_T_rev_20um"], rel=1e-12)
    assert p.T_rev == pytest.approx(0.697, abs=0.001)
    assert p.T_sym / p.T_rev == 0.125
    assert p.T_spec / p.T_rev == 0.5


@given(L=st.floats(1e-7, 1e-3))
def test_box_law_quadratic(L):
    a = rv.box_revival_times(L, RB87_MASS)
    b = rv.box_revival_times(2 * L, RB87_MASS)
    assert b.T_rev == pytest.approx(4 * a.T_rev, rel=1e-12)


@pytest.fixture(scope="module")
def box():
    return rv.BoxWell(100.0, 1023)


def test_box_full_and_specular_revival(box):
    psi = box.gaussian(30.0, 2.4, 5.0)
    f, _ = rv.fidelity_trace(psi, [box.propagate(psi, box.T_rev)])
    assert f[0] == pytest.approx(1.0, abs=1e-10)
    _, c = rv.fidelity_trace(box.mirror(psi), [box.propagate(psi, 0.5 * box.T_rev)])
    assert c[0] == pytest.approx(1.0, abs=1e-10)


def test_box_symmetric_revivals(box):
    psi = box.gaussian(50.0, 0.0, 5.0)
    T = box.T_rev
    t = np.linspace(0.0, 0.55 * T, 2201)
    _, corr = rv.fidelity_trace(psi, [box.propagate(psi, x) for x in t])
    peaks, _ = find_peaks(corr, height=0.99)
    multiples = t[peaks] / (T / 8)
    assert multiples == pytest.approx([1, 2, 3, 4], abs=1e-3)


def test_fidelity_trace_limits():
    a = np.exp(-np.linspace(-5, 5, 200) ** 2).astype(complex)
    b = np.zeros_like(a)
    b[:20] = 1.0
    f, c = rv.fidelity_trace(a, [a, b * (np.abs(a) < 1e-12)])
    assert f[0] == pytest.approx(1.0) and c[0] == pytest.approx(1.0)
    assert f[1] == 0.0
    with pytest.raises(rv.GridMismatchError):
        rv.fidelity_trace(a, [a[:-1]])


def test_detect_cosine_revival():
    T = 100.0
    t = np.linspace(0.0, 1.2 * T, 2401)
    rep = rv.detect_revivals(t, np.cos(np.pi * t / T) ** 2, round_trip=T / 10)
    assert rep.collapse_time is not None and rep.collapse_time < 0.5 * T
    assert rep.T_rev == pytest.approx(T, abs=t[1] - t[0])
    assert rep.quality == pytest.approx(1.0, abs=1e-6)


def test_detect_decay_has_no_revival():
    t = np.linspace(0.0, 100.0, 1001)
    rep = rv.detect_revivals(t, np.exp(-t / 10), round_trip=2.0)
    assert rep.T_rev is None and rep.revival_times == []


def test_detect_ignores_round_trip_returns():
    # a packet returning every round trip with a slowly collapsing envelope
    t = np.linspace(0.0, 300.0, 30001)
    envelope = 0.5 * (1 + np.cos(2 * np.pi * t / 240.0))
    trace = envelope * np.cos(np.pi * t / 5.0) ** 40
    rep = rv.detect_revivals(t, trace, round_trip=10.0)
    assert 40.0 < rep.collapse_time < 120.0
    # T_rev is the first return above threshold, before the envelope maximum
    assert rep.T_rev == pytest.approx(190.0, abs=0.1)
    assert any(abs(x - 240.0) < 0.1 for x in rep.revival_times)
    assert all(b - a >= 10.0 - 1e-9 for a, b in zip(rep.revival_times, rep.revival_times[1:]))


def test_no_collapse_from_truncated_window():
    # returns every round trip with an envelope that never falls below 0.5; the
    # last samples see an incomplete round trip and must not fake a collapse
    t = np.linspace(0.0, 103.0, 10301)
    trace = (0.5 + 0.5 * np.cos(2 * np.pi * t / 200.0) ** 2) * np.cos(np.pi * t / 5.0) ** 40
    rep = rv.detect_revivals(t, trace, round_trip=10.0)
    assert rep.collapse_time is None
    env = rv.envelope_summary(t, trace, 10.0)
    assert env["min"] == pytest.approx(0.5, abs=0.02)


def test_revival_kinds():
    t = np.linspace(0.0, 200.0, 2001)
    trace = np.exp(-((t - 0.0) ** 2) / 2) + np.exp(-((t - 100.0) ** 2) / 2) + np.exp(-((t - 180.0) ** 2) / 2)
    v = np.where(np.abs(t - 100.0) < 5, -1.0, 1.0)
    rep = rv.detect_revivals(t, trace, round_trip=5.0, velocity=v)
    assert rep.revival_kinds == ["specular", "full"]
    assert rep.T_rev == pytest.approx(180.0, abs=0.2)


def test_scaling_fit_exact():
    x = np.array([15.0, 25.0, 35.0, 50.0, 65.0])
    fit = rv.scaling_fit(x, 0.1 * x**2)
    assert fit.exponent == pytest.approx(2.0, abs=1e-12)
    assert fit.quadratic_rms_residual < 1e-12
    with pytest.raises(ValueError):
        rv.scaling_fit(x[:3], x[:3])


def test_linear_fit():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    s, c, r = rv.linear_fit_residual(x, 3 * x + 1)
    assert (s, c) == pytest.approx((3.0, 1.0)) and r < 1e-12


def test_turning_points_and_round_trip():
    t = np.linspace(0.0, 50.0, 5001)
    z = 7.0 * np.sin(2 * np.pi * t / 8.0)
    assert rv.round_trip_time(t, z) == pytest.approx(8.0, abs=0.02)
    assert rv.measured_cavity_length(t, z) == pytest.approx(14.0, abs=1e-3)


def test_effective_mass_free_limit():
    class FreeMap:
        w_z = 400.0
        peak_depth = 0.0

    cav = CavityGeometry(p=2.4, energy=5.76, inner=(-90.0, 90.0), outer=(-140.0, 140.0), gap_strength=1.0)
    pred = rv.effective_mass_prediction(FreeMap, cav, 5.76)
    assert pred.mass_ratio == pytest.approx(1.0, rel=1e-6)
    assert pred.T_rev == pytest.approx(rv.box_revival_times(180.0, 0.5, 1.0).T_rev, rel=1e-6)
    assert pred.reliable
