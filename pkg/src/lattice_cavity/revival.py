"""Collapse and revival analysis.

Box-well reference laws, a spectral hard-wall propagator used as oracle,
fidelity traces, revival detection, power-law fits and the
effective-mass estimate of the revival time in the band-gap cavity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import maximum_filter1d
from scipy.signal import find_peaks

from . import bloch
from .local_bands import CavityGeometry, local_depth
from .propagator import amplitude_fidelity, coarse_grain, density_correlation
from .units import HBAR

COLLAPSE_THRESHOLD = 0.2
REVIVAL_THRESHOLD = 0.5
V_MIN = 0.01  # p_R/m
SENSITIVITY_LIMIT = 0.2


class GridMismatchError(ValueError):
    pass


# --------------------------------------------------------------------------
# box well


@dataclass(frozen=True)
class BoxWellPrediction:
    L: float
    mass: float
    T_rev: float
    T_spec: float
    T_sym: float


def box_revival_times(L: float, mass: float, hbar: float = HBAR) -> BoxWellPrediction:
    """Revival times of a hard-wall box, ``T_rev = 4 m L^2 / (pi hbar)``.

    SI by default; ``mass=0.5, hbar=1`` gives recoil units.
    """
    if not (L > 0 and mass > 0):
        raise ValueError("L and mass must be positive")
    t = 4.0 * mass * L * L / (math.pi * hbar)
    return BoxWellPrediction(L=L, mass=mass, T_rev=t, T_spec=t / 2.0, T_sym=t / 8.0)


class BoxWell:
    """Hard-wall box ``0 < x < L`` in recoil units (``H = -d^2/dx^2``).

    States live on the interior nodes ``x_j = j L / (n + 1)``; propagation is
    exact in time through the sine transform (eigenvalues ``(n pi / L)^2``).
    """

    def __init__(self, L: float, n_points: int = 2047):
        self.L = L
        self.n_points = n_points
        self.x = L * np.arange(1, n_points + 1) / (n_points + 1)
        self.dx = L / (n_points + 1)
        self.energies = (np.pi * np.arange(1, n_points + 1) / L) ** 2

    def gaussian(self, x0: float, p0: float, sigma_x: float) -> np.ndarray:
        psi = np.exp(-((self.x - x0) ** 2) / (4 * sigma_x**2) + 1j * p0 * self.x)
        return psi / math.sqrt(np.vdot(psi, psi).real * self.dx)

    def propagate(self, psi: np.ndarray, t: float) -> np.ndarray:
        c = sfft.dst(psi.real, type=1) + 1j * sfft.dst(psi.imag, type=1)
        c = c * np.exp(-1j * self.energies * t)
        return sfft.idst(c.real, type=1) + 1j * sfft.idst(c.imag, type=1)

    def mirror(self, psi: np.ndarray) -> np.ndarray:
        return psi[::-1]

    @property
    def T_rev(self) -> float:
        return box_revival_times(self.L, 0.5, 1.0).T_rev


# --------------------------------------------------------------------------
# traces


def fidelity_trace(reference: np.ndarray, states, bin_size: int = 1):
    """Amplitude fidelity and density correlation of each state against ``reference``.

    Densities are block-averaged over ``bin_size`` samples before correlating.
    """
    reference = np.asarray(reference)
    fid, corr = [], []
    rho_ref = coarse_grain(np.abs(reference) ** 2, bin_size)
    for psi in states:
        psi = np.asarray(psi)
        if psi.shape != reference.shape:
            raise GridMismatchError(f"state shape {psi.shape} differs from reference {reference.shape}")
        fid.append(amplitude_fidelity(reference, psi))
        corr.append(density_correlation(rho_ref, coarse_grain(np.abs(psi) ** 2, bin_size)))
    return np.array(fid), np.array(corr)


@dataclass
class RevivalReport:
    times: np.ndarray
    trace: np.ndarray
    collapse_time: float | None
    revival_times: list
    revival_kinds: list
    T_rev: float | None
    quality: float | None
    round_trip: float
    cavity_length_measured: float | None = None
    fidelity: np.ndarray | None = None
    notes: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "collapse_time": self.collapse_time,
            "revival_times": list(map(float, self.revival_times)),
            "revival_kinds": list(self.revival_kinds),
            "T_rev": self.T_rev,
            "quality": self.quality,
            "round_trip": self.round_trip,
            "cavity_length_measured": self.cavity_length_measured,
            "notes": list(self.notes),
        }


def round_trip_envelope(trace, n_rt: int) -> np.ndarray:
    """Forward running maximum ``max(trace[i : i + n_rt + 1])``.

    Only samples with a complete window are returned, so the result is
    ``n_rt`` samples shorter than ``trace``.
    """
    y = np.asarray(trace, dtype=float)
    if y.size <= n_rt:
        return np.empty(0)
    return maximum_filter1d(y, size=n_rt + 1, origin=-(n_rt // 2))[: y.size - n_rt]


def envelope_summary(times, trace, round_trip: float) -> dict | None:
    """Minimum of the round-trip envelope and the largest envelope value after it."""
    t = np.asarray(times, dtype=float)
    n_rt = max(1, int(round(round_trip / float(np.median(np.diff(t))))))
    env = round_trip_envelope(trace, n_rt)
    if env.size == 0:
        return None
    i_min = int(np.argmin(env))
    i_peak = i_min + int(np.argmax(env[i_min:]))
    return {"min": float(env[i_min]), "t_min": float(t[i_min]),
            "peak_after_min": float(env[i_peak]), "t_peak": float(t[i_peak])}


def detect_revivals(times, trace, round_trip: float, collapse_threshold: float = COLLAPSE_THRESHOLD,
                    revival_threshold: float = REVIVAL_THRESHOLD, reference_value: float | None = None,
                    velocity=None, fidelity=None) -> RevivalReport:
    """Collapse time and revival peaks of a fidelity-like trace.

    The trace is compared with thresholds relative to ``reference_value``
    (default: its first sample). Between revivals a trapped packet returns to
    its start once per ``round_trip``, so collapse is read from the forward
    running maximum over one round trip: the first time no return within the
    next round trip exceeds ``collapse_threshold``. Revivals are peaks above
    ``revival_threshold`` after the collapse, at least one round trip apart.

    With ``velocity`` (centre-of-mass velocity per sample) each peak is
    labelled ``"full"`` when the packet moves in the reference direction and
    ``"specular"`` otherwise; ``T_rev`` is then the first full revival.
    Without it every peak counts and ``T_rev`` is the first peak.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(trace, dtype=float)
    if t.size != y.size or t.size < 3:
        raise ValueError("times and trace must have equal length >= 3")
    dt = float(np.median(np.diff(t)))
    ref = float(y[0]) if reference_value is None else float(reference_value)
    notes = []
    n_rt = max(1, int(round(round_trip / dt)))
    if t[-1] - t[0] < 2 * round_trip:
        notes.append("trace shorter than two round trips")
    envelope = round_trip_envelope(y, n_rt)
    below = np.nonzero(envelope < collapse_threshold * ref)[0]
    if below.size == 0:
        return RevivalReport(t, y, None, [], [], None, None, round_trip, fidelity=fidelity,
                             notes=notes + ["no collapse"])
    i_c = int(below[0])
    peaks, props = find_peaks(y, height=revival_threshold * ref, distance=n_rt)
    peaks = peaks[peaks > i_c]
    kinds = []
    if velocity is not None:
        v = np.asarray(velocity, dtype=float)
        v0 = np.sign(v[0]) if v[0] != 0 else 1.0
        kinds = ["full" if np.sign(v[i]) == v0 else "specular" for i in peaks]
        full = [i for i, k in zip(peaks, kinds) if k == "full"]
        first = full[0] if full else None
    else:
        kinds = ["peak"] * len(peaks)
        first = peaks[0] if peaks.size else None
    if first is None:
        notes.append("no revival within the trace")
    return RevivalReport(
        times=t,
        trace=y,
        collapse_time=float(t[i_c]),
        revival_times=[float(t[i]) for i in peaks],
        revival_kinds=kinds,
        T_rev=None if first is None else float(t[first]),
        quality=None if first is None else float(y[first] / ref),
        round_trip=round_trip,
        fidelity=fidelity,
        notes=notes,
    )


def turning_points(times, position, n_round_trips: int = 3):
    """Times and positions of the extrema of a centre-of-mass oscillation.

    Returns the first ``2 n_round_trips`` turning points.
    """
    t = np.asarray(times, dtype=float)
    z = np.asarray(position, dtype=float)
    hi, _ = find_peaks(z)
    lo, _ = find_peaks(-z)
    idx = np.sort(np.concatenate([hi, lo]))[: 2 * n_round_trips]
    return t[idx], z[idx]


def measured_cavity_length(times, position, n_round_trips: int = 3) -> float | None:
    """Distance between the extremal turning points of the first round trips."""
    _, z = turning_points(times, position, n_round_trips)
    if z.size < 2:
        return None
    return float(z.max() - z.min())


def round_trip_time(times, position, n_round_trips: int = 3) -> float | None:
    """Mean period of the centre-of-mass oscillation over the first round trips."""
    t, _ = turning_points(times, position, n_round_trips)
    if t.size < 3:
        return None
    return float(2.0 * np.mean(np.diff(t)))


# --------------------------------------------------------------------------
# scaling


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    prefactor: float
    exponent_stderr: float
    quadratic_prefactor: float
    quadratic_rms_residual: float  # relative

    def predict(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent


def scaling_fit(x, y) -> ScalingFit:
    """Power law ``y = a x^b`` by log-log least squares, plus a fixed ``b = 2`` fit."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4:
        raise ValueError("scaling_fit needs at least 4 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("scaling_fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, res, *_ = np.linalg.lstsq(A, ly, rcond=None)
    b, ln_a = coef
    resid = ly - A @ coef
    dof = max(1, x.size - 2)
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    # fixed exponent: minimise the relative residual y/(c x^2) - 1
    c = float(np.exp(np.mean(ly - 2.0 * lx)))
    rel = y / (c * x**2) - 1.0
    return ScalingFit(
        exponent=float(b),
        prefactor=float(np.exp(ln_a)),
        exponent_stderr=float(math.sqrt(cov[0, 0])),
        quadratic_prefactor=c,
        quadratic_rms_residual=float(np.sqrt(np.mean(rel**2))),
    )


def linear_fit_residual(x, y) -> tuple[float, float, float]:
    """Least-squares line ``y = s x + c``; returns ``(s, c, rms relative residual)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    s, c = np.polyfit(x, y, 1)
    rel = (y - (s * x + c)) / y
    return float(s), float(c), float(np.sqrt(np.mean(rel**2)))


# --------------------------------------------------------------------------
# effective mass


@dataclass(frozen=True)
class EffectiveMassPrediction:
    mass_ratio: float  # <m*/m> weighted by 1/v_g
    T_rev: float  # hbar/E_R
    L: float  # 1/k_L
    band: int
    v_min: float
    sensitivity: float  # relative change when v_min is doubled
    reliable: bool
    excluded_fraction: float


def _local_mass_profile(w_z, peak_depth, energy, z, conserve_energy, center):
    m_rel = np.full(z.size, np.nan)
    v = np.full(z.size, np.nan)
    band = None
    for i, zi in enumerate(z):
        d = float(local_depth(zi, w_z, peak_depth))
        if conserve_energy:
            loc = bloch.locate_band(d, energy) if d > 0 else bloch.free_band(math.sqrt(energy))
            if loc is None:
                continue
            b, k = loc
        else:
            b, k = center
        band = b if band is None else band
        v[i] = abs(bloch.group_velocity(d, b, k))
        try:
            m_rel[i] = bloch.effective_mass(d, b, k)
        except bloch.DivergentEffectiveMass:
            m_rel[i] = np.inf
    return band, m_rel, v


def effective_mass_prediction(band_map, cavity: CavityGeometry, energy: float, v_min: float = V_MIN,
                              n_points: int = 401, conserve_energy: bool = True
                              ) -> EffectiveMassPrediction:
    """Revival time of the cavity from a group-velocity-weighted effective mass.

    ``<m*> = int m*(z)/v_g(z) dz / int 1/v_g(z) dz`` over the cavity interior,
    with the local band at depth ``V0(z)`` and quasimomentum fixed by
    ``energy`` (``conserve_energy``), or held at its central value.
    Points with ``v_g < v_min`` are dropped; the relative change of the result
    when ``v_min`` is doubled is reported as ``sensitivity``.
    ``band_map`` needs ``w_z`` and ``peak_depth`` attributes.
    """
    if cavity is None:
        raise ValueError("no cavity")
    w_z, peak = band_map.w_z, band_map.peak_depth
    z_in = cavity.inner[1]
    z = np.linspace(0.0, z_in, n_points)  # symmetric cavity: half interior
    center = bloch.locate_band(peak, energy) if peak > 0 else bloch.free_band(math.sqrt(energy))
    if center is None:
        raise ValueError("energy not in an allowed band at the cavity centre")
    band, m_rel, v = _local_mass_profile(w_z, peak, energy, z, conserve_energy, center)

    def average(vcut):
        ok = np.isfinite(v) & (v >= vcut) & np.isfinite(m_rel)
        if ok.sum() < 2:
            return math.nan, 1.0
        wgt = np.where(ok, 1.0 / np.where(ok, v, 1.0), 0.0)
        num = np.trapezoid(np.where(ok, m_rel, 0.0) * wgt, z)
        den = np.trapezoid(wgt, z)
        return float(num / den), float(1.0 - ok.mean())

    m_avg, excluded = average(v_min)
    m_2, _ = average(2.0 * v_min)
    sens = abs(m_2 - m_avg) / abs(m_avg) if np.isfinite(m_avg) and m_avg != 0 else math.inf
    L = cavity.L
    T = box_revival_times(L, 0.5 * m_avg, 1.0).T_rev if np.isfinite(m_avg) and m_avg > 0 else math.nan
    reliable = bool(np.isfinite(T) and sens < SENSITIVITY_LIMIT and excluded < 0.5
                    and not np.any(np.isinf(m_rel)))
    return EffectiveMassPrediction(
        mass_ratio=m_avg,
        T_rev=T,
        L=L,
        band=int(center[0]) if band is None else int(band),
        v_min=v_min,
        sensitivity=float(sens),
        reliable=reliable,
        excluded_fraction=excluded,
    )
