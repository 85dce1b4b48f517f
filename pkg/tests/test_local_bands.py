import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_cavity import bloch, local_bands as lb


def test_envelope_profile(w_z):
    assert lb.local_depth(0.0, w_z, 9.0) == 9.0
    assert lb.local_depth(w_z, w_z, 9.0) == pytest.approx(9.0 * math.exp(-2.0), rel=1e-14)
    assert lb.local_depth(-3 * w_z, w_z, 9.0) < 1.3e-4 * 9.0
    assert lb.local_depth(3 * w_z, w_z, 9.0) < 1.3e-4 * 9.0


def test_free_space_map(w_z):
    bm = lb.build_band_map(w_z, 0.0, np.linspace(0.1, 3.0, 12), lb.default_z_grid(w_z, 64))
    assert np.all(bm.im_k == 0.0)


@pytest.fixture(scope="module")
def maps(w_z):
    p = np.linspace(0.05, 3.5, 70)
    z = lb.default_z_grid(w_z, 257)
    return lb.build_band_map(w_z, 9.0, p, z), lb.build_band_map(w_z, 15.0, p, z)


def test_map_symmetric(maps):
    bm, _ = maps
    assert np.array_equal(bm.im_k, bm.im_k[::-1])


def test_gap_lenses(maps):
    bm, _ = maps
    gap = bm.im_k > 1e-4
    # gaps are closed regions: nothing at the map edges, something inside
    assert not gap[0].any() and not gap[-1].any()
    assert gap.any()
    assert set(np.unique(bm.re_k[gap])) <= {0.0, 1.0}
    assert np.all(np.isnan(bm.re_k[bm.im_k == 0.0]))


def test_gap_branch_parity():
    # the gap above band n opens at the zone edge for odd n and at the centre for even n
    e = bloch.band_edges(9.0, 4)
    for n in (1, 2, 3):
        mid = 0.5 * (e[n - 1, 1] + e[n, 0])
        re_b, _ = bloch.complex_k(9.0, mid)
        assert float(re_b) == (1.0 if n % 2 else 0.0)


def test_deeper_lattice_has_stronger_gaps(maps):
    bm9, bm15 = maps
    assert bm15.im_k.max() > bm9.im_k.max()
    e9, e15 = bloch.band_edges(9.0, 5), bloch.band_edges(15.0, 5)
    assert np.all(e15[1:, 0] - e15[:-1, 1] > e9[1:, 0] - e9[:-1, 1])


def test_map_requires_free_region(w_z):
    with pytest.raises(ValueError):
        lb.build_band_map(w_z, 9.0, [1.0], np.linspace(-w_z, w_z, 32))


def test_cavity_golden(w_z, oracles):
    ref = oracles["cavity_15_p2.4"]
    cav = lb.cavity_at_energy(w_z, 15.0, 2.4**2)
    assert cav is not None
    assert cav.inner[1] == pytest.approx(ref["inner"], abs=2e-3)
    assert cav.outer[1] == pytest.approx(ref["outer"], abs=2e-3)
    assert cav.L == pytest.approx(2 * ref["inner"], abs=4e-3)


def test_no_cavity_above_gaps(w_z):
    assert lb.cavity_at_energy(w_z, 9.0, 4.0**2) is None


def test_no_cavity_with_gapped_centre(w_z):
    e = bloch.band_edges(9.0, 2)
    assert lb.cavity_at_energy(w_z, 9.0, 0.5 * (e[1, 1] + bloch.band_edges(9.0, 3)[2, 0])) is None


@settings(max_examples=8, deadline=None)
@given(scale=st.floats(0.3, 1.5))
def test_cavity_length_linear_in_waist(w_z, scale):
    a = lb.cavity_at_energy(w_z, 15.0, 2.4**2)
    b = lb.cavity_at_energy(scale * w_z, 15.0, 2.4**2)
    assert b.L == pytest.approx(scale * a.L, abs=4e-3)


@settings(max_examples=15, deadline=None)
@given(p=st.floats(0.3, 3.3))
def test_gap_intervals_match_im_k(w_z, p):
    ivs = lb.gap_intervals(w_z, 9.0, p * p)
    z = np.linspace(0.0, 4 * w_z, 801)
    _, ik = lb.im_k_profile(z, w_z, 9.0, p * p, check=False)
    inside = np.zeros(z.size, bool)
    for a, b in ivs:
        inside |= (z >= a) & (z <= b)
        mid = 0.5 * (a + b)
        assert float(lb.im_k_profile(mid, w_z, 9.0, p * p, check=False)[1]) > 0.0
    # samples outside every interval are in allowed bands
    assert np.all(ik[~inside] < 1e-6)


def test_im_k_integral_quadrature(w_z, oracles):
    ref = oracles["T_plus_9_p1.3"]
    (a, b), = lb.gap_intervals(w_z, 9.0, 1.3**2)
    assert (a, b) == pytest.approx(tuple(ref["intervals"][0]), abs=1e-8)
    assert lb.integrate_im_k(w_z, 9.0, 1.3**2, a, b) == pytest.approx(ref["exponent"], rel=1e-6)


def test_gap_crossings():
    # the canonical trapped energy sits in band IV at the centre and leaves through
    # gap III/IV and then gap II/III; an energy below every gap opening crosses none
    assert lb.count_gap_crossings(15.0, 3.4207) == 2
    assert lb.count_gap_crossings(0.0 + 1e-9, 5.0) == 0
