import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lattice_cavity import bloch


@pytest.mark.parametrize("depth", [3.0, 9.0, 15.0])
def test_band_edges_match_mathieu(depth, oracles):
    ref = np.array(oracles["band_edges"][str(depth)])
    assert np.abs(bloch.band_edges(depth, 4) - ref).max() < 1e-9


def test_free_particle_lowest_eigenvalue():
    assert bloch.diagonalize_bloch(0.0, 0.5, n_bands=1)[0] == pytest.approx(0.25, abs=1e-14)


def test_shallow_gap_width(oracles):
    e = bloch.band_edges(0.1, 2)
    gap = e[1, 0] - e[0, 1]
    assert gap == pytest.approx(oracles["shallow_gap_0.1"], abs=1e-10)
    assert gap == pytest.approx(0.05, rel=0.05)


def test_truncation_guard():
    # the basis grows automatically; only an absurd depth exhausts it
    bloch.diagonalize_bloch(400.0, 0.0, basis_size=11, n_bands=8)
    with pytest.raises(bloch.TruncationError):
        bloch.diagonalize_bloch(1e7, 0.0, n_bands=8)


def test_monodromy_edges_agree_with_diagonalization():
    edges = bloch.band_edges(9.0, 4).ravel()
    mono = bloch.monodromy_band_edges(9.0, -7.0, 11.67)
    assert mono.size == edges.size
    assert np.abs(np.sort(mono) - np.sort(edges)).max() < 1e-6


@settings(max_examples=30, deadline=None)
@given(depth=st.floats(0.0, 15.0), offset=st.floats(-1.0, 20.0))
def test_monodromy_unimodular(depth, offset):
    # energies from 1 E_R below band I upwards, at the finer of the two trace resolutions
    energy = min(bloch.band_edges(depth, 1)[0, 0] + offset, 20.0)
    m = bloch.monodromy(depth, energy, 2 * bloch.MONODROMY_STEPS)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-10)


def test_free_space_has_no_gaps():
    e = np.linspace(0.01, 20.0, 200)
    re_b, im_k = bloch.complex_k(0.0, e)
    assert np.all(im_k == 0.0)
    assert np.all(np.isnan(re_b))


def test_gap_centre_attenuation(oracles):
    g = oracles["gap12_center_9"]
    re_b, im_k = bloch.complex_k(9.0, g["energy"])
    assert float(re_b) == 1.0
    assert float(im_k) == pytest.approx(g["im_k"], rel=1e-8)
    assert float(bloch.monodromy_trace(9.0, g["energy"])) == pytest.approx(g["half_trace"], rel=1e-9)


def test_band_edge_is_marginal():
    edge = bloch.band_edges(9.0, 2)[1, 0]
    h = float(bloch.monodromy_trace(9.0, edge))
    assert abs(h) == pytest.approx(1.0, abs=1e-8)
    assert float(bloch.complex_k(9.0, edge)[1]) < 1e-4


def test_effective_mass_free():
    assert bloch.effective_mass(0.0, 1, 0.3) == pytest.approx(1.0, rel=1e-6)


def test_effective_mass_deep_lattice(oracles):
    m = bloch.effective_mass(15.0, 1, 0.0)
    assert m > 10.0
    assert m == pytest.approx(oracles["tight_binding_mstar_15"], rel=0.05)


def test_effective_mass_negative_near_top():
    assert bloch.effective_mass(9.0, 1, 0.95) < 0.0


def test_group_velocity():
    assert bloch.group_velocity(0.0, 1, 0.4) == pytest.approx(0.4, rel=1e-6)
    for depth in (3.0, 9.0):
        assert abs(bloch.group_velocity(depth, 2, 0.0, dk=1e-4)) < 1e-3
        assert abs(bloch.group_velocity(depth, 2, 1.0, dk=1e-4)) < 1e-3
    v = bloch.group_velocity(9.0, 3, 0.5)
    assert np.isfinite(v) and abs(v) > 0.1


@settings(max_examples=25, deadline=None)
@given(p=st.floats(0.01, 4.5))
def test_free_band_consistent(p):
    band, k = bloch.free_band(p)
    assert bloch.band_energy(0.0, band, k) == pytest.approx(p * p, rel=1e-9, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(depth=st.floats(0.5, 20.0))
def test_bands_fall_with_depth(depth):
    a = bloch.band_edges(depth, 4)
    b = bloch.band_edges(depth + 0.25, 4)
    assert np.all(b < a)


def test_locate_band_in_gap():
    e = bloch.band_edges(9.0, 2)
    assert bloch.locate_band(9.0, 0.5 * (e[0, 1] + e[1, 0])) is None
    band, k = bloch.locate_band(9.0, 0.5 * (e[1, 0] + e[1, 1]))
    assert band == 2 and 0.0 < k < 1.0
