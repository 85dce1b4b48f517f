"""Band structure of the infinite lattice ``V(x) = -V0 cos^2(x)``.

Two independent routes are provided:

* plane-wave diagonalization of the Bloch Hamiltonian at real quasimomentum
  (:func:`diagonalize_bloch`, :func:`band_edges`);
* the single-period monodromy (transfer) matrix of the stationary equation at
  real energy (:func:`monodromy`, :func:`complex_k`), which also yields the
  imaginary quasimomentum inside the gaps.

Units are recoil units (see :mod:`lattice_cavity.units`): quasimomenta in
``k_L`` (zone edge at 1, reciprocal vector 2), energies in ``E_R``.
Bands are indexed from 1 (I, II, III, ...). The constant ``-V0/2`` offset of
``cos^2`` is kept in every energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.optimize import brentq, minimize_scalar

DEFAULT_BASIS = 31
MAX_BASIS = 301
TRUNCATION_TOL = 1e-10
MONODROMY_STEPS = 1024
MONODROMY_TOL = 1e-8
MAX_MONODROMY_STEPS = 16384
# |tr M|/2 - 1 below this is integration noise, not a gap (Im k < 1.5e-6 k_L)
GAP_FLOOR = 1e-11
THIN_GAP_PROBE = 1e-2  # |tr M|/2 maxima within this of 1 are checked for hidden gaps
EFFECTIVE_MASS_DK = 1e-3


class TruncationError(ArithmeticError):
    """Plane-wave basis did not converge."""


class MonodromyError(ArithmeticError):
    """Transfer-matrix integration failed its step-doubling check."""


class DivergentEffectiveMass(ArithmeticError):
    """Band curvature vanishes, the effective mass is unbounded."""


# --------------------------------------------------------------------------
# plane waves


def bloch_hamiltonian(depth: float, k: float, basis_size: int = DEFAULT_BASIS) -> np.ndarray:
    """Bloch Hamiltonian in the plane-wave basis ``exp(i (k + 2j) x)``, ``|j| <= basis_size//2``."""
    if basis_size % 2 == 0 or basis_size < 11:
        raise ValueError(f"basis_size must be odd and >= 11, got {basis_size}")
    n = basis_size // 2
    j = np.arange(-n, n + 1)
    h = np.diag((k + 2.0 * j) ** 2 - 0.5 * depth)
    off = np.full(basis_size - 1, -0.25 * depth)
    h += np.diag(off, 1) + np.diag(off, -1)
    return h


def _eigs(depth, k, basis_size, n_bands):
    return np.linalg.eigvalsh(bloch_hamiltonian(depth, k, basis_size))[:n_bands]


def diagonalize_bloch(
    depth: float,
    k: float,
    basis_size: int = DEFAULT_BASIS,
    n_bands: int | None = None,
    tol: float = TRUNCATION_TOL,
) -> np.ndarray:
    """Lowest band energies at quasimomentum ``k``, sorted ascending.

    The basis is enlarged by 4 plane waves at a time until the highest returned
    band moves by less than ``tol``.
    """
    if abs(k) > 1.0 + 1e-12:
        raise ValueError(f"quasimomentum must satisfy |k| <= 1, got {k}")
    if n_bands is None:
        n_bands = max(1, basis_size // 4)
    size = max(basis_size, 2 * n_bands + 11)
    if size % 2 == 0:
        size += 1
    current = _eigs(depth, k, size, n_bands)
    while size + 4 <= MAX_BASIS:
        refined = _eigs(depth, k, size + 4, n_bands)
        shift = np.max(np.abs(refined - current))
        current = refined
        size += 4
        if shift < tol:
            return current
    raise TruncationError(
        f"plane-wave basis not converged at depth={depth}, k={k}: shift {shift:.3e} > {tol:.1e}"
    )


def band_energy(depth: float, band: int, k, basis_size: int = DEFAULT_BASIS):
    """Energy of band ``band`` (1-based) at quasimomentum ``k``; ``k`` may lie outside the zone."""
    size = max(basis_size, 2 * band + 11)
    size += 1 - size % 2
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    out = np.array([np.linalg.eigvalsh(bloch_hamiltonian(depth, kk, size))[band - 1] for kk in ks])
    return out[0] if np.ndim(k) == 0 else out


@dataclass(frozen=True)
class BlochBands:
    """Band energies ``energies[i, n]`` at ``k_grid[i]`` for bands ``n = 0..``."""

    depth: float
    k_grid: np.ndarray
    energies: np.ndarray
    basis_size: int

    @classmethod
    def compute(cls, depth: float, k_grid=None, n_bands: int = 6, basis_size: int = DEFAULT_BASIS):
        if k_grid is None:
            k_grid = np.linspace(0.0, 1.0, 101)
        k_grid = np.asarray(k_grid, dtype=float)
        energies = np.array([diagonalize_bloch(depth, k, basis_size, n_bands) for k in k_grid])
        return cls(depth=depth, k_grid=k_grid, energies=energies, basis_size=basis_size)

    def rows(self):
        for i, k in enumerate(self.k_grid):
            for n, e in enumerate(self.energies[i], start=1):
                yield self.depth, k, n, e


def band_edges(depth: float, n_bands: int = 6, basis_size: int = DEFAULT_BASIS) -> np.ndarray:
    """``(n_bands, 2)`` array of ``[bottom, top]`` per band.

    Bands of the ``cos^2`` lattice are monotonic in the reduced zone, so the
    extrema sit at ``k = 0`` and ``k = 1``.
    """
    e0 = diagonalize_bloch(depth, 0.0, basis_size, n_bands)
    e1 = diagonalize_bloch(depth, 1.0, basis_size, n_bands)
    return np.column_stack([np.minimum(e0, e1), np.maximum(e0, e1)])


def merge_intervals(edges: np.ndarray, tol: float = 1e-9) -> list[tuple[float, float]]:
    """Merge touching bands (vanishing gaps) into single allowed intervals."""
    merged: list[list[float]] = []
    for lo, hi in edges:
        if merged and lo - merged[-1][1] <= tol:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(a, b) for a, b in merged]


def allowed_intervals(depth: float, n_bands: int = 6, tol: float = 1e-9) -> list[tuple[float, float]]:
    """Allowed energy intervals of the lowest ``n_bands`` bands; the last one is open-ended physically."""
    return merge_intervals(band_edges(depth, n_bands), tol)


# --------------------------------------------------------------------------
# monodromy matrix


@numba.njit(cache=True)
def _monodromy_kernel(depth, energy, n_steps):
    # y'' = (V - E) y,  V = -depth cos^2 x, x in [0, pi]
    n = depth.size
    out = np.empty((n, 2, 2))
    h = math.pi / n_steps
    c2 = np.empty(2 * n_steps + 1)
    for s in range(2 * n_steps + 1):
        c = math.cos(0.5 * h * s)
        c2[s] = c * c
    for i in range(n):
        d = depth[i]
        e = energy[i]
        y1, p1, y2, p2 = 1.0, 0.0, 0.0, 1.0
        q1 = -d * c2[0] - e
        for s in range(n_steps):
            q0 = q1
            qh = -d * c2[2 * s + 1] - e
            q1 = -d * c2[2 * s + 2] - e
            # classical RK4 on (y, y') for both solutions
            k1y1, k1p1 = p1, q0 * y1
            k1y2, k1p2 = p2, q0 * y2
            k2y1, k2p1 = p1 + 0.5 * h * k1p1, qh * (y1 + 0.5 * h * k1y1)
            k2y2, k2p2 = p2 + 0.5 * h * k1p2, qh * (y2 + 0.5 * h * k1y2)
            k3y1, k3p1 = p1 + 0.5 * h * k2p1, qh * (y1 + 0.5 * h * k2y1)
            k3y2, k3p2 = p2 + 0.5 * h * k2p2, qh * (y2 + 0.5 * h * k2y2)
            k4y1, k4p1 = p1 + h * k3p1, q1 * (y1 + h * k3y1)
            k4y2, k4p2 = p2 + h * k3p2, q1 * (y2 + h * k3y2)
            y1 += h / 6.0 * (k1y1 + 2.0 * k2y1 + 2.0 * k3y1 + k4y1)
            p1 += h / 6.0 * (k1p1 + 2.0 * k2p1 + 2.0 * k3p1 + k4p1)
            y2 += h / 6.0 * (k1y2 + 2.0 * k2y2 + 2.0 * k3y2 + k4y2)
            p2 += h / 6.0 * (k1p2 + 2.0 * k2p2 + 2.0 * k3p2 + k4p2)
        out[i, 0, 0] = y1
        out[i, 0, 1] = y2
        out[i, 1, 0] = p1
        out[i, 1, 1] = p2
    return out


def monodromy(depth, energy, n_steps: int = MONODROMY_STEPS) -> np.ndarray:
    """Single-period transfer matrix ``[[y1, y2], [y1', y2']](pi)``.

    ``depth`` and ``energy`` broadcast against each other; the result has shape
    ``broadcast_shape + (2, 2)``.
    """
    if n_steps < 512:
        raise ValueError("monodromy integration needs at least 512 steps per period")
    d, e = np.broadcast_arrays(np.asarray(depth, dtype=float), np.asarray(energy, dtype=float))
    shape = d.shape
    m = _monodromy_kernel(np.ascontiguousarray(d).ravel(), np.ascontiguousarray(e).ravel(), n_steps)
    return m.reshape(shape + (2, 2))


def monodromy_trace(depth, energy, n_steps: int = MONODROMY_STEPS, check: bool = True):
    """Half-trace ``tr M / 2`` from two integrations (``n_steps`` and ``2 n_steps``).

    The result is their Richardson extrapolation. With ``check`` set, a
    relative disagreement above ``MONODROMY_TOL`` doubles the step count (up
    to ``MAX_MONODROMY_STEPS``) and raises :class:`MonodromyError` if that
    does not help.
    """
    def half_trace(n):
        m = monodromy(depth, energy, n)
        return 0.5 * (m[..., 0, 0] + m[..., 1, 1])

    coarse = half_trace(n_steps)
    while True:
        fine = half_trace(2 * n_steps)
        if not check:
            break
        err = np.abs(fine - coarse) / np.maximum(1.0, np.abs(fine))
        if not np.any(err > MONODROMY_TOL):
            break
        if 2 * n_steps >= MAX_MONODROMY_STEPS:
            bad = np.unravel_index(np.argmax(err), np.shape(err)) if np.ndim(err) else ()
            raise MonodromyError(
                f"transfer-matrix trace not converged (rel. change {np.max(err):.2e} at index {bad}) "
                f"with {2 * n_steps} steps per period"
            )
        n_steps *= 2
        coarse = fine
    return (16.0 * fine - coarse) / 15.0


def complex_k(depth, energy, n_steps: int = MONODROMY_STEPS, check: bool = True):
    """Complex quasimomentum at real energy.

    Returns
    -------
    re_branch : ndarray
        0 (zone centre) or 1 (zone edge, ``k_L``) inside gaps, ``nan`` in allowed bands.
    im_k : ndarray
        Imaginary quasimomentum in units of ``k_L``; exactly 0 in allowed bands.
    """
    half = monodromy_trace(depth, energy, n_steps, check)
    depth_arr = np.broadcast_to(np.asarray(depth, dtype=float), np.shape(half))
    a = np.abs(half)
    gap = (a > 1.0 + GAP_FLOOR) & (depth_arr > 0.0)
    im_k = np.where(gap, np.arccosh(np.maximum(a, 1.0)) / math.pi, 0.0)
    re_branch = np.where(gap, np.where(half > 0, 0.0, 1.0), np.nan)
    return re_branch, im_k


@dataclass(frozen=True)
class ComplexDispersion:
    depth: float
    energy_grid: np.ndarray
    im_k: np.ndarray
    re_k_branch: np.ndarray

    @classmethod
    def compute(cls, depth: float, energy_grid):
        energy_grid = np.asarray(energy_grid, dtype=float)
        re_b, im_k = complex_k(depth, energy_grid)
        return cls(depth=depth, energy_grid=energy_grid, im_k=im_k, re_k_branch=re_b)

    def rows(self):
        for e, ik, rb in zip(self.energy_grid, self.im_k, self.re_k_branch):
            yield self.depth, e, ik, rb


def monodromy_band_edges(depth: float, e_min: float, e_max: float, n_scan: int = 4001,
                         n_steps: int = MONODROMY_STEPS) -> np.ndarray:
    """Energies in ``[e_min, e_max]`` where ``|tr M|/2`` crosses 1, found by bracketing + Brent.

    Gaps narrower than the scan spacing show up as local maxima of ``|tr M|/2``
    just below 1; each is refined by a bounded maximisation and split into its
    two edges when the refined maximum exceeds 1.
    """
    grid = np.linspace(e_min, e_max, n_scan)
    g = np.abs(monodromy_trace(depth, grid, n_steps)) - 1.0

    def f(e):
        return abs(float(monodromy_trace(depth, e, n_steps, check=False))) - 1.0

    edges = []
    for i in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]:
        edges.append(brentq(f, grid[i], grid[i + 1], xtol=1e-13, rtol=1e-14))
    peaks = np.nonzero((g[1:-1] < 0) & (g[1:-1] >= g[:-2]) & (g[1:-1] >= g[2:])
                       & (g[1:-1] > -THIN_GAP_PROBE))[0] + 1
    for i in peaks:
        lo, hi = grid[i - 1], grid[i + 1]
        if any(lo <= e <= hi for e in edges):
            continue
        res = minimize_scalar(lambda e: -f(e), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14})
        if -res.fun > 0.0:
            edges.append(brentq(f, lo, res.x, xtol=1e-13, rtol=1e-14))
            edges.append(brentq(f, res.x, hi, xtol=1e-13, rtol=1e-14))
    return np.sort(np.array(edges))


# --------------------------------------------------------------------------
# band derivatives


def locate_band(depth: float, energy: float, n_bands: int = 10) -> tuple[int, float] | None:
    """Band index and reduced quasimomentum ``k in [0, 1]`` with ``E_n(k) = energy``.

    Returns ``None`` when ``energy`` lies in a gap or below the lowest band.
    """
    edges = band_edges(depth, n_bands)
    for n, (lo, hi) in enumerate(edges, start=1):
        if lo <= energy <= hi:
            if hi - lo < 1e-14:
                return n, 0.0
            e0 = band_energy(depth, n, 0.0)
            k = brentq(lambda kk: band_energy(depth, n, kk) - energy, 0.0, 1.0, xtol=1e-14)
            # endpoints give exact band edges
            if abs(e0 - energy) < 1e-14:
                k = 0.0
            return n, k
    return None


def free_band(p: float) -> tuple[int, float]:
    """Band index and reduced quasimomentum of a free particle of momentum ``p`` (in ``p_R``)."""
    p = abs(p)
    band = int(math.floor(p)) + 1
    k = abs(p - 2.0 * round(p / 2.0))
    return band, k


def group_velocity(depth: float, band: int, k: float, dk: float = EFFECTIVE_MASS_DK) -> float:
    """Group velocity ``dE/dk / hbar`` in units of ``p_R/m`` (centred differences)."""
    e_p, e_m = band_energy(depth, band, np.array([k + dk, k - dk]))
    # x_R/t_R per unit dE/dk, and x_R/t_R = p_R/(2m)
    return 0.5 * (e_p - e_m) / (2.0 * dk)


def _curvature(depth, band, k, dk):
    e_m, e_0, e_p = band_energy(depth, band, np.array([k - dk, k, k + dk]))
    return (e_p - 2.0 * e_0 + e_m) / dk**2


def effective_mass(depth: float, band: int, k: float, dk: float = EFFECTIVE_MASS_DK,
                   curvature_floor: float = 1e-6) -> float:
    """Effective mass ``hbar^2 / (d^2E/dk^2)`` as a multiple of the bare mass.

    Uses centred second differences at ``dk`` and ``dk/2`` combined by one
    Richardson extrapolation.
    """
    c1 = _curvature(depth, band, k, dk)
    c2 = _curvature(depth, band, k, 0.5 * dk)
    curv = (4.0 * c2 - c1) / 3.0
    if abs(curv) < curvature_floor:
        raise DivergentEffectiveMass(
            f"band {band} is flat to {abs(curv):.2e} at k={k}, depth={depth}"
        )
    # free particle: E = k^2 -> curvature 2 -> m*/m = 1
    return 2.0 / curv
