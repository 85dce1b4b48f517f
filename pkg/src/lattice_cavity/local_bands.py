"""Position-dependent band structure of the Gaussian-envelope lattice.

Each position ``z`` is treated as part of an infinite lattice of the local depth
``V0 exp(-2 z^2 / w_z^2)``; a particle of momentum ``p`` keeps its free-space
energy ``E = p^2`` everywhere. Lengths are in ``1/k_L``, momenta in ``p_R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import bloch

KAPPA_MIN = 1e-4
MAP_POINTS = 2048
MAP_HALF_WIDTH = 4.0  # in units of w_z
EDGE_TOL = 1e-3  # z tolerance of refined edges, recoil lengths (~0.1 nm)
MIRROR_SAMPLES = 257  # Im k samples per gap interval when locating kappa_min crossings


def local_depth(z, w_z: float, peak_depth: float):
    """Envelope depth ``V0 exp(-2 z^2 / w_z^2)``; ``z`` and ``w_z`` in the same unit."""
    z = np.asarray(z, dtype=float)
    return peak_depth * np.exp(-2.0 * z**2 / w_z**2)


def default_z_grid(w_z: float, n_points: int = MAP_POINTS, half_width: float = MAP_HALF_WIDTH):
    return np.linspace(-half_width * w_z, half_width * w_z, n_points)


def im_k_profile(z, w_z: float, peak_depth: float, energy: float, check: bool = True):
    """``(re_branch, im_k)`` along ``z`` at fixed energy."""
    depth = local_depth(z, w_z, peak_depth)
    return bloch.complex_k(depth, energy, check=check)


@dataclass(frozen=True)
class LocalBandMap:
    """``im_k[i, j]`` and ``re_k[i, j]`` at ``(z_grid[i], p_grid[j])``."""

    w_z: float
    peak_depth: float
    z_grid: np.ndarray
    p_grid: np.ndarray
    im_k: np.ndarray
    re_k: np.ndarray

    def row(self, p: float):
        """Index of ``p`` in ``p_grid`` or ``None``."""
        hits = np.nonzero(np.isclose(self.p_grid, p, rtol=0.0, atol=1e-12))[0]
        return int(hits[0]) if hits.size else None

    def center_im_k(self, p: float) -> float:
        j = self.row(p)
        if j is not None:
            i0 = int(np.argmin(np.abs(self.z_grid)))
            return float(self.im_k[i0, j])
        _, ik = bloch.complex_k(self.peak_depth, p * p)
        return float(ik)

    def rows(self):
        """``(z, p, im_k, re_branch)`` tuples for CSV export."""
        for j, p in enumerate(self.p_grid):
            for i, z in enumerate(self.z_grid):
                yield z, p, self.im_k[i, j], self.re_k[i, j]


def build_band_map(w_z: float, peak_depth: float, p_grid, z_grid=None) -> LocalBandMap:
    """Evaluate the complex quasimomentum on a ``(z, p)`` grid.

    Only ``z >= 0`` is integrated when the grid is symmetric; the other half is
    mirrored, which makes the ``z -> -z`` symmetry exact.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    if np.any(p_grid <= 0):
        raise ValueError("p_grid must be positive")
    if z_grid is None:
        z_grid = default_z_grid(w_z)
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid.min() > -4.0 * w_z * (1 - 1e-12) or z_grid.max() < 4.0 * w_z * (1 - 1e-12):
        raise ValueError("z_grid must span at least +-4 w_z")

    symmetric = np.allclose(z_grid, -z_grid[::-1], rtol=0.0, atol=1e-12 * w_z)
    if symmetric:
        half = z_grid >= 0.0
        z_eval = z_grid[half]
    else:
        z_eval = z_grid
    energy = p_grid[None, :] ** 2
    depth = local_depth(z_eval, w_z, peak_depth)[:, None]
    try:
        re_k, im_k = bloch.complex_k(depth, energy)
    except bloch.MonodromyError as exc:
        raise bloch.MonodromyError(f"band map at V0={peak_depth}, w_z={w_z}: {exc}") from exc
    if symmetric:
        n_half = z_eval.size
        # grid with an even number of points has no z = 0 node
        mirror = slice(None, None, -1) if z_grid.size % 2 == 0 else slice(None, 0, -1)
        re_k = np.concatenate([re_k[mirror][: z_grid.size - n_half], re_k])
        im_k = np.concatenate([im_k[mirror][: z_grid.size - n_half], im_k])
    return LocalBandMap(w_z=w_z, peak_depth=peak_depth, z_grid=z_grid, p_grid=p_grid,
                        im_k=im_k, re_k=re_k)


# --------------------------------------------------------------------------
# gap intervals along z >= 0 at fixed energy


def _band_edge(depth, band, top):
    """Top (``top=True``) or bottom of a band at the given depth, plane-wave basis."""
    e = bloch.band_edges(depth, band)[band - 1]
    return float(e[1] if top else e[0])


def _depth_root(band, top, energy, d_max):
    """Depth where the band edge equals ``energy`` (``inf`` if above ``d_max``).

    Band energies fall strictly with depth (``dE/dV0 = -<cos^2 z>``), so the
    root is unique.
    """
    f = lambda d: _band_edge(d, band, top) - energy  # noqa: E731
    if f(d_max) > 0.0:
        return math.inf
    if f(0.0) <= 0.0:
        return 0.0
    return brentq(f, 0.0, d_max, xtol=1e-13, rtol=1e-14)


def gap_depth_intervals(peak_depth: float, energy: float) -> list[tuple[float, float]]:
    """Depth intervals ``(d_a, d_b)`` within ``(0, peak_depth]`` in which ``energy`` lies in a gap.

    Gap ``n`` (between bands ``n`` and ``n+1``) closes at zero depth at ``n^2``
    and exists at energy ``E < n^2`` between the depth where the top of band
    ``n`` falls to ``E`` and the depth where the bottom of band ``n+1`` does.
    Below band I (negative energies) the interval starts at zero depth.
    """
    out = []
    if energy < 0.0:
        d_b = _depth_root(1, False, energy, peak_depth)
        out.append((0.0, min(d_b, peak_depth)))
    n = max(1, int(math.floor(math.sqrt(max(energy, 0.0)))) + 1)
    while True:
        d_a = _depth_root(n, True, energy, peak_depth)
        if d_a == math.inf:
            break
        d_b = _depth_root(n + 1, False, energy, peak_depth)
        if d_b > d_a:
            out.append((d_a, min(d_b, peak_depth)))
        n += 1
    return [(a, b) for a, b in out if b > a]


def _z_of_depth(d, w_z, peak_depth):
    if d >= peak_depth:
        return 0.0
    if d <= 0.0:
        return math.inf
    return w_z * math.sqrt(0.5 * math.log(peak_depth / d))


def gap_intervals(w_z: float, peak_depth: float, energy: float,
                  z_max: float | None = None) -> list[tuple[float, float]]:
    """Gap intervals ``(z_a, z_b)`` on ``0 <= z <= z_max`` at fixed energy, ordered outward.

    Built from :func:`gap_depth_intervals` through the envelope; no spatial
    scan, so arbitrarily thin gaps are found. An interval starting at 0 means the
    lattice centre itself lies in a gap; one ending at ``z_max`` is truncated.
    """
    if peak_depth <= 0.0:
        return []
    if z_max is None:
        z_max = MAP_HALF_WIDTH * w_z
    out = []
    for d_a, d_b in gap_depth_intervals(peak_depth, energy):
        za = _z_of_depth(d_b, w_z, peak_depth)
        zb = min(_z_of_depth(d_a, w_z, peak_depth), z_max)
        if zb > za:
            out.append((za, zb))
    return sorted(out)


def integrate_im_k(w_z: float, peak_depth: float, energy: float, a: float, b: float,
                   rtol: float = 1e-4, atol: float = 1e-6, max_order: int = 1024) -> float:
    """``int_a^b Im k dz`` over one gap interval.

    ``Im k`` has square-root edges, so the substitution
    ``z = a + (b - a)(1 - cos t)/2`` is applied before Gauss-Legendre; the order
    doubles until the result changes by less than ``rtol`` (or ``atol``; near
    vanishing gaps ``arccosh`` amplifies round-off in the trace to ~1e-8).
    """
    if b <= a:
        return 0.0

    def quad(order):
        t, wt = np.polynomial.legendre.leggauss(order)
        theta = 0.5 * math.pi * (t + 1.0)
        zz = a + 0.5 * (b - a) * (1.0 - np.cos(theta))
        jac = 0.5 * (b - a) * np.sin(theta) * 0.5 * math.pi
        _, ik = bloch.complex_k(local_depth(zz, w_z, peak_depth), energy, check=False)
        return float(np.sum(wt * jac * ik))

    order = 16
    prev = quad(order)
    while order < max_order:
        order *= 2
        cur = quad(order)
        change = abs(cur - prev)
        if change <= rtol * abs(cur) + atol:
            return cur
        prev = cur
    raise ArithmeticError(
        f"gap quadrature not converged on [{a:.6g}, {b:.6g}] at E={energy:.6g} "
        f"(last change {change:.2e})"
    )


# --------------------------------------------------------------------------
# cavity


@dataclass(frozen=True)
class CavityGeometry:
    """Band-gap cavity at fixed energy; lengths in ``1/k_L``.

    ``inner`` holds the inner mirror edges ``(z_left, z_right)``, ``outer`` the
    far edges of the first mirror on each side.
    """

    p: float
    energy: float
    inner: tuple[float, float]
    outer: tuple[float, float]
    gap_strength: float

    @property
    def L(self) -> float:
        return self.inner[1] - self.inner[0]


def _edge_bisect(f, lo, hi, tol):
    # f(lo) <= 0 < f(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def cavity_at_energy(w_z: float, peak_depth: float, energy: float, kappa_min: float = KAPPA_MIN,
                     z_grid=None, p: float | None = None) -> CavityGeometry | None:
    """Innermost symmetric pair of gap regions with ``Im k > kappa_min`` around an allowed centre.

    Gap intervals come from :func:`gap_intervals`; ``z_grid`` only sets the
    outer extent (default ``4 w_z``). Gaps whose ``Im k`` never exceeds
    ``kappa_min`` are not counted as mirrors.
    """
    z_max = MAP_HALF_WIDTH * w_z if z_grid is None else float(np.max(np.abs(z_grid)))
    _, ik0 = im_k_profile(0.0, w_z, peak_depth, energy)
    if ik0 > kappa_min:
        return None

    def f(zz):
        return float(im_k_profile(zz, w_z, peak_depth, energy, check=False)[1]) - kappa_min

    for a, b in gap_intervals(w_z, peak_depth, energy, z_max=z_max):
        zs = a + (b - a) * 0.5 * (1.0 - np.cos(np.linspace(0.0, np.pi, MIRROR_SAMPLES)))
        _, ik = im_k_profile(zs, w_z, peak_depth, energy, check=False)
        above = np.nonzero(ik > kappa_min)[0]
        if above.size == 0:
            continue
        i1, i2 = int(above[0]), int(above[-1])
        z_in = _edge_bisect(f, zs[i1 - 1], zs[i1], EDGE_TOL) if i1 > 0 else a
        if i2 < zs.size - 1:
            z_out = _edge_bisect(lambda zz: -f(zz), zs[i2], zs[i2 + 1], EDGE_TOL)
        else:
            z_out = b
        return CavityGeometry(
            p=math.sqrt(energy) if p is None and energy > 0 else (p if p is not None else float("nan")),
            energy=energy,
            inner=(-z_in, z_in),
            outer=(-z_out, z_out),
            # strength of the whole gap, not only its part above kappa_min
            gap_strength=integrate_im_k(w_z, peak_depth, energy, a, b),
        )
    return None


def find_cavity(band_map: LocalBandMap, p: float, kappa_min: float = KAPPA_MIN) -> CavityGeometry | None:
    """Cavity seen by a particle of momentum ``p`` (energy ``p^2``) in ``band_map``."""
    if not band_map.p_grid.min() - 1e-12 <= p <= band_map.p_grid.max() + 1e-12:
        raise ValueError(f"p={p} outside the map's momentum range")
    return cavity_at_energy(band_map.w_z, band_map.peak_depth, p * p, kappa_min,
                            z_grid=band_map.z_grid, p=p)


def count_gap_crossings(peak_depth: float, energy: float, n_bands: int = 10, n_depth: int = 2001) -> int:
    """Number of distinct gaps ``energy`` passes through as the depth rises from 0 to ``peak_depth``.

    Uses plane-wave band edges only, independent of the transfer matrix.
    """
    depths = np.linspace(0.0, peak_depth, n_depth)[1:]
    count = 0
    was_in_gap = False
    for d in depths:
        edges = bloch.band_edges(d, n_bands)
        in_gap = bool(np.any((edges[:-1, 1] < energy) & (energy < edges[1:, 0])))
        if in_gap and not was_in_gap:
            count += 1
        was_in_gap = in_gap
    return count
