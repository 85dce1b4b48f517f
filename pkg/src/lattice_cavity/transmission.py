"""Analytic transmission of the finite lattice.

Monochromatic transmission follows from the attenuation accumulated inside the
gaps, with incoherent resummation of the multiple reflections between a mirror
pair; wave-packet transmission averages it over a Gaussian momentum
distribution. Momenta are in ``p_R``, lengths in ``1/k_L``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from scipy.optimize import brentq

from . import bloch, local_bands
from .local_bands import KAPPA_MIN, LocalBandMap

QUAD_POINTS = 257
WINDOW_SIGMAS = 5.0
AVERAGE_TOL = 1e-6


@dataclass(frozen=True)
class MonoTransmission:
    """Monochromatic result at one momentum."""

    p: float
    T_plus: float
    T: float
    center_in_band: bool
    n_mirrors: int
    exponents: tuple[float, ...]

    @property
    def R(self) -> float:
        return 1.0 - self.T

    @property
    def multi_gap(self) -> bool:
        return self.n_mirrors >= 2


def total_transmission(T_plus: float, center_in_band: bool) -> float:
    """Full transmission from the one-sided transmission ``T_plus``.

    With an allowed centre the two mirrors are resummed over all round trips,
    ``T_plus / (2 - T_plus)``; otherwise the barrier is crossed once, ``T_plus**2``.
    """
    if not 0.0 <= T_plus <= 1.0:
        raise ValueError(f"T_plus must lie in [0, 1], got {T_plus}")
    if center_in_band:
        return T_plus / (2.0 - T_plus)
    return T_plus * T_plus


def resummation_partial(T_plus: float, n_reflections: int) -> float:
    """Explicit sum of the paths with ``0, 2, ..., 2 n_reflections`` internal reflections."""
    r2 = (1.0 - T_plus) ** 2
    n = np.arange(n_reflections + 1)
    return float(T_plus * T_plus * np.sum(r2**n))


def _exponents(w_z, peak_depth, energy, z_max):
    ivs = local_bands.gap_intervals(w_z, peak_depth, energy, z_max=z_max)
    return ivs, [local_bands.integrate_im_k(w_z, peak_depth, energy, a, b) for a, b in ivs]


def mono_transmission(w_z: float, peak_depth: float, p: float, kappa_min: float = KAPPA_MIN,
                      z_max: float | None = None) -> MonoTransmission:
    """Monochromatic transmission at momentum ``p``.

    Momenta whose energy crosses more than one mirror pair are handled as a
    product of independent cavities and flagged through ``n_mirrors``.
    """
    energy = p * p
    _, ik0 = local_bands.im_k_profile(0.0, w_z, peak_depth, energy)
    center_in_band = bool(ik0 <= kappa_min)
    ivs, expo = _exponents(w_z, peak_depth, energy, z_max)
    total = sum(expo)
    T_plus = math.exp(-2.0 * total)
    if not center_in_band:
        return MonoTransmission(p, T_plus, T_plus * T_plus, False, 0, tuple(expo))
    barrier = sum(e for (a, _), e in zip(ivs, expo) if a == 0.0)
    mirrors = [e for (a, _), e in zip(ivs, expo) if a > 0.0]
    T = math.exp(-4.0 * barrier)
    for e in mirrors:
        t = math.exp(-2.0 * e)
        T *= t / (2.0 - t)
    return MonoTransmission(p, T_plus, T, True, len(mirrors), tuple(expo))


def half_transmission(band_map: LocalBandMap, p: float) -> float:
    """One-sided transmission ``exp(-2 int_0^inf Im k dz)`` through the map's lattice."""
    z_max = float(np.max(np.abs(band_map.z_grid)))
    edge_depth = local_bands.local_depth(z_max, band_map.w_z, band_map.peak_depth)
    if band_map.peak_depth > 0 and edge_depth > 1e-4 * band_map.peak_depth:
        raise ValueError("band map does not reach the free region (local depth at z_max >= 1e-4 V0)")
    _, expo = _exponents(band_map.w_z, band_map.peak_depth, p * p, z_max)
    return math.exp(-2.0 * sum(expo))


def gaussian_window(p_in: float, sigma_p: float, n_points: int = QUAD_POINTS):
    """Quadrature nodes over ``p_in +- 5 sigma_p`` clipped at 0, and kernel values."""
    if not sigma_p > 0:
        raise ValueError("sigma_p must be positive")
    lo = max(0.0, p_in - WINDOW_SIGMAS * sigma_p)
    hi = p_in + WINDOW_SIGMAS * sigma_p
    p = np.linspace(lo, hi, n_points)
    kernel = np.exp(-((p - p_in) / sigma_p) ** 2)
    return p, kernel


def averaged_transmission(T_of_p, p_in: float, sigma_p: float, n_points: int = QUAD_POINTS,
                          check: bool = True) -> tuple[float, float]:
    """Momentum-averaged transmission and its quadrature-doubling difference.

    ``T_of_p`` maps an array of momenta to transmissions. The trapezoid sum is
    renormalised by the kernel sum on the same nodes, so ``T == 1`` gives
    exactly 1 even when the window is clipped at ``p = 0``.
    """
    if p_in <= WINDOW_SIGMAS * sigma_p:
        warnings.warn(f"p_in={p_in} <= {WINDOW_SIGMAS} sigma_p: Gaussian window truncated at p=0",
                      RuntimeWarning, stacklevel=2)

    def trap(n):
        p, kern = gaussian_window(p_in, sigma_p, n)
        t = np.asarray(T_of_p(p), dtype=float)
        return np.trapezoid(t * kern, p) / np.trapezoid(kern, p)

    value = trap(n_points)
    if not check:
        return float(value), float("nan")
    fine = trap(2 * n_points - 1)
    return float(fine), float(abs(fine - value))


class _CachedT:
    def __init__(self, w_z, peak_depth, kappa_min):
        self.args = (w_z, peak_depth)
        self.kappa_min = kappa_min
        self.cache: dict[float, MonoTransmission] = {}

    def mono(self, p):
        key = round(float(p), 12)
        hit = self.cache.get(key)
        if hit is None:
            hit = mono_transmission(*self.args, key, self.kappa_min)
            self.cache[key] = hit
        return hit

    def __call__(self, ps):
        return np.array([self.mono(p).T if p > 0 else 0.0 for p in np.atleast_1d(ps)])


def center_switch_momenta(peak_depth: float, p_lo: float, p_hi: float,
                          kappa_min: float = KAPPA_MIN) -> list[float]:
    """Momenta in ``(p_lo, p_hi)`` where the lattice centre switches between band and gap.

    ``T`` jumps there (resummed mirrors on one side, a single barrier on the
    other), so the momentum average is split at these points.
    """
    if peak_depth <= 0.0:
        return []
    n_bands = int(np.ceil(p_hi)) + 3
    out = []
    for e in bloch.band_edges(peak_depth, n_bands).ravel():
        if e <= 0.0:
            continue
        p0 = math.sqrt(e)
        if not p_lo < p0 < p_hi:
            continue

        def f(p):
            return float(bloch.complex_k(peak_depth, p * p)[1]) - kappa_min

        step = 1e-4
        for side in (-1.0, 1.0):
            q = p0 + side * step
            if f(q) > 0.0:
                a, b = sorted((p0, q))
                out.append(brentq(f, a, b, xtol=1e-14))
                break
    return sorted(set(round(p, 13) for p in out))


def _segment_nodes(breaks, h, refine):
    """Nodes and trapezoid weights per segment, clustered at both ends.

    ``p = a + (b - a)(1 - cos(pi u))/2`` with uniform ``u``: the Jacobian
    vanishes at the ends, which absorbs the square-root onset of a gap at a
    cut. Each segment gets ``refine`` times a base number of intervals with
    mean spacing at most ``h``, so levels are nested.
    """
    out = []
    for a, b in zip(breaks[:-1], breaks[1:]):
        m = refine * max(2, int(math.ceil(0.5 * math.pi * (b - a) / h)))
        u = np.linspace(0.0, 1.0, m + 1)
        p = a + 0.5 * (b - a) * (1.0 - np.cos(np.pi * u))
        w = np.full(m + 1, 1.0 / m)
        w[[0, -1]] *= 0.5
        w *= 0.5 * np.pi * (b - a) * np.sin(np.pi * u)
        p[0], p[-1] = a, b
        out.append((p, w))
    return out


@dataclass
class TransmissionCurve:
    p_grid: np.ndarray
    T_mono: np.ndarray
    T_ave: np.ndarray
    sigma_p: float
    peak_depth: float
    w_z: float
    quadrature_delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multi_gap: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def converged(self) -> bool:
        return bool(np.all(self.quadrature_delta <= AVERAGE_TOL))

    def rows(self):
        for p, tm, ta in zip(self.p_grid, self.T_mono, self.T_ave):
            yield p, tm, ta


def transmission_curve(w_z: float, peak_depth: float, p_grid, sigma_p: float,
                       n_points: int = QUAD_POINTS, kappa_min: float = KAPPA_MIN,
                       check: bool = True) -> TransmissionCurve:
    """Monochromatic and averaged transmission over ``p_grid``.

    All averages share one set of nodes: the momentum axis is cut at the points
    where ``T`` jumps and each piece is integrated with end-clustered trapezoid
    nodes (see :func:`_segment_nodes`), one-sided limits at the cuts. The value
    is the Richardson extrapolation of the spacings ``2h`` and ``h``, with ``h``
    the spacing of an ``n_points`` rule over the 10 sigma window; ``check``
    repeats it at ``h`` and ``h/2`` and reports the change.
    """
    p_grid = np.asarray(p_grid, dtype=float)
    T = _CachedT(w_z, peak_depth, kappa_min)
    mono = [T.mono(p) for p in p_grid]

    half = WINDOW_SIGMAS * sigma_p
    lo = max(0.0, float(p_grid.min()) - half)
    hi = float(p_grid.max()) + half
    cuts = center_switch_momenta(peak_depth, lo, hi, kappa_min)
    breaks = [lo, *cuts, hi]
    eps = 1e-11

    def evaluate(refine):
        segs = _segment_nodes(breaks, h_base, refine)
        vals = []
        for seg, _ in segs:
            q = seg.copy()
            # one-sided limits at the cuts
            if seg[0] in cuts:
                q[0] += eps
            if seg[-1] in cuts:
                q[-1] -= eps
            vals.append(T(q))
        return segs, vals

    def average(segs, vals):
        out = []
        for p_in in p_grid:
            num = den = 0.0
            for (seg, w), t in zip(segs, vals):
                k = w * np.exp(-((seg - p_in) / sigma_p) ** 2)
                num += np.dot(t, k)
                den += k.sum()
            out.append(num / den)
        return np.array(out)

    def richardson(refine):
        # trapezoid error is O(h^2) from the segment ends
        coarse = average(*evaluate(refine))
        fine = average(*evaluate(2 * refine))
        return (4.0 * fine - coarse) / 3.0

    if any(p <= half for p in p_grid):
        warnings.warn(f"p_in <= {WINDOW_SIGMAS} sigma_p: Gaussian window truncated at p=0",
                      RuntimeWarning, stacklevel=2)
    # finest level of the primary estimate has the spacing of an n_points rule
    h_base = 4.0 * half / (n_points - 1)
    ave = richardson(1)
    if check:
        delta = np.abs(richardson(2) - ave)
    else:
        delta = np.full(p_grid.size, np.nan)
    multi = np.array([any(T.cache[k].multi_gap for k in T.cache
                          if abs(k - p) <= half) for p in p_grid])
    return TransmissionCurve(
        p_grid=p_grid,
        T_mono=np.array([m.T for m in mono]),
        T_ave=np.clip(ave, 0.0, 1.0),
        sigma_p=sigma_p,
        peak_depth=peak_depth,
        w_z=w_z,
        quadrature_delta=delta,
        multi_gap=multi,
    )


def window_edges(p, T, level: float = 0.5) -> np.ndarray:
    """Momenta where a sampled curve crosses ``level`` (linear interpolation)."""
    p = np.asarray(p, dtype=float)
    s = np.asarray(T, dtype=float) - level
    idx = np.nonzero(np.sign(s[:-1]) * np.sign(s[1:]) < 0)[0]
    return p[idx] - s[idx] * (p[idx + 1] - p[idx]) / (s[idx + 1] - s[idx])
