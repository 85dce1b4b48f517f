"""Split-operator propagation of a 1D wave packet through the finite lattice.

Dimensionless equation (recoil units, see :mod:`lattice_cavity.units`)::

    i d/dt psi = -d^2/dx^2 psi - V0(t) exp(-2 x^2 / w_z^2) cos^2(x) psi

The grid is periodic; wrap-around is prevented by amplitude masks on the outer
parts of the grid whose removed probability is booked as reflected (left) or
transmitted (right).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from . import bloch, local_bands

DEFAULT_DT = 0.05
POINTS_PER_PERIOD = 16
ABSORBER_FRACTION = 0.1
LATTICE_HALF_WIDTH = 4.0  # w_z
NORM_TOL = 1e-10


class NormDriftError(RuntimeError):
    """Unitary part of a step changed the norm."""


class GridTooSmallError(RuntimeError):
    """Probability reached an absorber before the packet reached the lattice."""


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform periodic grid ``z_min + j dz``, ``j = 0..n_points-1``."""

    z_min: float
    z_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 2 or self.n_points & (self.n_points - 1):
            raise ValueError(f"n_points must be a power of two, got {self.n_points}")
        if not self.z_max > self.z_min:
            raise ValueError("z_max must exceed z_min")
        if self.dz > math.pi / 8.0 * (1 + 1e-12):
            raise ValueError(f"dz={self.dz:.4f} exceeds P/8 = {math.pi / 8:.4f}")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_points

    @property
    def z(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, self.dz)

    @classmethod
    def for_lattice(cls, w_z: float, z0: float = None, sigma_z: float = 0.0,
                    points_per_period: int = POINTS_PER_PERIOD,
                    absorber_fraction: float = ABSORBER_FRACTION,
                    half_width: float = LATTICE_HALF_WIDTH):
        """Smallest power-of-two grid holding the lattice, the initial packet and the absorbers."""
        lo = -half_width * w_z
        hi = half_width * w_z
        if z0 is not None:
            # amplitude tail below 1e-12 needs ~10.6 sigma
            lo = min(lo, z0 - 11.0 * sigma_z)
            hi = max(hi, z0 + 11.0 * sigma_z)
        inner = max(-lo, hi)
        half_box = inner / (1.0 - 2.0 * absorber_fraction)
        dz_max = math.pi / points_per_period
        n = 1 << math.ceil(math.log2(2.0 * half_box / dz_max))
        return cls(-half_box, half_box, n)

    def as_dict(self):
        return {"z_min": self.z_min, "z_max": self.z_max, "n_points": self.n_points, "dz": self.dz}


@dataclass
class WavePacketState:
    grid: SpatialGrid
    psi: np.ndarray
    time: float = 0.0
    absorbed_left: float = 0.0
    absorbed_right: float = 0.0

    def norm(self) -> float:
        return float(np.vdot(self.psi, self.psi).real * self.grid.dz)

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def total_probability(self) -> float:
        return self.norm() + self.absorbed_left + self.absorbed_right

    def copy(self) -> "WavePacketState":
        return replace(self, psi=self.psi.copy())

    def mean_position(self) -> float:
        rho = self.density()
        return float(np.sum(rho * self.grid.z) / np.sum(rho))

    def mean_momentum(self) -> float:
        phi = sfft.fft(self.psi)
        w = np.abs(phi) ** 2
        return float(np.sum(w * self.grid.k) / np.sum(w))

    def width(self) -> float:
        rho = self.density()
        rho = rho / rho.sum()
        z = self.grid.z
        mean = np.sum(rho * z)
        return float(np.sqrt(np.sum(rho * (z - mean) ** 2)))


def save_state(path, state: WavePacketState) -> None:
    """Write a bit-exact checkpoint (``.npz``)."""
    np.savez(
        path,
        psi=state.psi,
        time=np.float64(state.time),
        absorbed=np.array([state.absorbed_left, state.absorbed_right]),
        grid=np.array([state.grid.z_min, state.grid.z_max]),
        n_points=np.int64(state.grid.n_points),
    )


def load_state(path) -> WavePacketState:
    with np.load(path) as f:
        grid = SpatialGrid(float(f["grid"][0]), float(f["grid"][1]), int(f["n_points"]))
        return WavePacketState(grid, f["psi"].copy(), float(f["time"]),
                               float(f["absorbed"][0]), float(f["absorbed"][1]))


def initial_gaussian(grid: SpatialGrid, z0: float, p_in: float, sigma_p: float) -> WavePacketState:
    """Minimum-uncertainty packet with momentum density ``exp(-(p - p_in)^2 / sigma_p^2)``.

    The position density has standard deviation ``1 / (sqrt(2) sigma_p)``.
    """
    if not sigma_p > 0:
        raise ValueError("sigma_p must be positive")
    s = 1.0 / (math.sqrt(2.0) * sigma_p)
    z = grid.z
    if min(z0 - grid.z_min, grid.z_max - z0) < 10.6 * s:
        raise ValueError("Gaussian tail at the grid edge exceeds 1e-12")
    psi = np.exp(-((z - z0) ** 2) / (4.0 * s * s) + 1j * p_in * (z - z0))
    psi /= math.sqrt(np.vdot(psi, psi).real * grid.dz)
    return WavePacketState(grid, psi.astype(np.complex128))


def position_width(sigma_p: float) -> float:
    """Standard deviation of the position density of :func:`initial_gaussian`."""
    return 1.0 / (math.sqrt(2.0) * sigma_p)


@dataclass(frozen=True)
class RampSchedule:
    """Piecewise-linear peak depth; constant before the first and after the last breakpoint."""

    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.breakpoints:
            raise ValueError("schedule needs at least one breakpoint")
        t = [b[0] for b in self.breakpoints]
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("breakpoint times must be strictly increasing")
        if any(b[1] < 0 for b in self.breakpoints):
            raise ValueError("depths must be non-negative")

    @classmethod
    def static(cls, depth: float):
        return cls(((0.0, float(depth)),))

    @classmethod
    def linear(cls, v_start: float, v_end: float, t_start: float, duration: float):
        return cls(((float(t_start), float(v_start)), (float(t_start + duration), float(v_end))))

    def depth(self, t: float) -> float:
        times = [b[0] for b in self.breakpoints]
        depths = [b[1] for b in self.breakpoints]
        return float(np.interp(t, times, depths))

    @property
    def t_end(self) -> float:
        return self.breakpoints[-1][0]

    @property
    def is_static(self) -> bool:
        return len({b[1] for b in self.breakpoints}) == 1

    def shifted(self, dt: float) -> "RampSchedule":
        return RampSchedule(tuple((t + dt, v) for t, v in self.breakpoints))


def lattice_profile(z, w_z: float) -> np.ndarray:
    """Potential per unit peak depth, ``-exp(-2 z^2 / w_z^2) cos^2 z``."""
    return -np.exp(-2.0 * z**2 / w_z**2) * np.cos(z) ** 2


class SplitOperator:
    """Strang splitting ``exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2)`` with absorbing masks.

    The depth of the time-dependent potential is sampled at mid-step.
    ``absorber_fraction = 0`` disables absorption (closed periodic box).
    """

    def __init__(self, grid: SpatialGrid, w_z: float, schedule: RampSchedule, dt: float = DEFAULT_DT,
                 absorber_fraction: float = ABSORBER_FRACTION, absorber_strength: float | None = None,
                 norm_tol: float = NORM_TOL, profile=None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.grid = grid
        self.w_z = w_z
        self.schedule = schedule
        self.dt = dt
        self.norm_tol = norm_tol
        z = grid.z
        self.profile = lattice_profile(z, w_z) if profile is None else np.asarray(profile, dtype=float)
        self.kinetic = np.exp(-1j * grid.k**2 * dt)
        self._depth = None
        self._half_kick = None

        n_abs = int(round(absorber_fraction * grid.n_points))
        self.n_absorber = n_abs
        if n_abs > 0:
            width = n_abs * grid.dz
            if absorber_strength is None:
                # amplitude e-folds ~40 times over both masks at velocity 8 (p = 4 p_R)
                absorber_strength = 20.0 * 8.0 / width
            self.absorber_strength = absorber_strength
            s = (np.arange(n_abs) + 0.5) / n_abs
            ramp = np.exp(-absorber_strength * np.sin(0.5 * np.pi * s) ** 2 * dt)
            self._mask_left = ramp[::-1].copy()
            self._mask_right = ramp.copy()
            self._loss_left = (1.0 - self._mask_left**2) * grid.dz
            self._loss_right = (1.0 - self._mask_right**2) * grid.dz
        else:
            self.absorber_strength = 0.0

    @property
    def inner_region(self) -> tuple[float, float]:
        z = self.grid.z
        n = self.n_absorber
        return (float(z[n]), float(z[-n - 1])) if n else (float(z[0]), float(z[-1]))

    def potential(self, t: float) -> np.ndarray:
        return self.schedule.depth(t) * self.profile

    def _kick(self, depth):
        if depth != self._depth:
            self._depth = depth
            self._half_kick = np.exp(-0.5j * self.dt * depth * self.profile)
        return self._half_kick

    def step(self, state: WavePacketState) -> WavePacketState:
        """Advance ``state`` in place by one time step and return it."""
        return self.advance(state, 1)

    def advance(self, state: WavePacketState, n_steps: int) -> WavePacketState:
        dz = self.grid.dz
        psi = state.psi
        norm = np.vdot(psi, psi).real * dz
        n_abs = self.n_absorber
        for _ in range(n_steps):
            kick = self._kick(self.schedule.depth(state.time + 0.5 * self.dt))
            psi *= kick
            psi = sfft.fft(psi, overwrite_x=True)
            psi *= self.kinetic
            psi = sfft.ifft(psi, overwrite_x=True)
            psi *= kick
            new_norm = np.vdot(psi, psi).real * dz
            if abs(new_norm - norm) > self.norm_tol * max(norm, 1e-300) + 1e-300:
                state.psi = psi
                raise NormDriftError(
                    f"norm changed by {new_norm - norm:.3e} in one step at t={state.time:.6g} "
                    f"(tolerance {self.norm_tol:.1e})"
                )
            if n_abs:
                left = psi[:n_abs]
                right = psi[-n_abs:]
                lost_l = float(np.dot(left.real**2 + left.imag**2, self._loss_left))
                lost_r = float(np.dot(right.real**2 + right.imag**2, self._loss_right))
                left *= self._mask_left
                right *= self._mask_right
                state.absorbed_left += lost_l
                state.absorbed_right += lost_r
                norm = new_norm - lost_l - lost_r
            else:
                norm = new_norm
            state.time += self.dt
        state.psi = psi
        return state

    def energy(self, state: WavePacketState) -> float:
        """``<H>`` per unit norm at the state's time."""
        psi = state.psi
        phi = sfft.fft(psi)
        w_k = np.abs(phi) ** 2
        kin = np.sum(w_k * self.grid.k**2) / np.sum(w_k)
        rho = np.abs(psi) ** 2
        pot = np.sum(rho * self.potential(state.time)) / np.sum(rho)
        return float(kin + pot)


# --------------------------------------------------------------------------
# trapping and adiabaticity


@dataclass(frozen=True)
class TrappingVerdict:
    kind: str  # "quantum" | "classical" | "untrapped"
    band: int | None
    k: float | None
    energy_before: float
    energy_after: float | None
    reason: str


def trapping_condition(p_in: float, depth_before: float, depth_after: float) -> TrappingVerdict:
    """Classify the trap created by raising the depth while the packet sits at the centre.

    The band and quasimomentum at the centre are conserved by an adiabatic ramp;
    trapping is quantum when the shifted energy stays positive and the envelope
    provides a gap on each side at that energy.
    """
    if depth_before < 0 or depth_after < 0:
        raise ValueError("depths must be non-negative")
    energy = p_in * p_in
    if depth_after <= depth_before:
        return TrappingVerdict("untrapped", None, None, energy, None, "depth not increased: no new mirrors")
    if depth_before == 0.0:
        band, k = bloch.free_band(p_in)
    else:
        loc = bloch.locate_band(depth_before, energy)
        if loc is None:
            return TrappingVerdict("untrapped", None, None, energy, None, "centre lies in a gap before the ramp")
        band, k = loc
    e_after = float(bloch.band_energy(depth_after, band, k))
    if e_after < 0.0:
        return TrappingVerdict("classical", band, k, energy, e_after, "energy driven below the free-space zero")
    if local_bands.count_gap_crossings(depth_after, e_after) == 0:
        return TrappingVerdict("untrapped", band, k, energy, e_after, "no gap encloses the centre")
    return TrappingVerdict("quantum", band, k, energy, e_after, "positive energy enclosed by a gap pair")


@dataclass(frozen=True)
class AdiabaticityReport:
    margin: float  # min over the ramp of omega^2 / |d omega / dt|
    t_ramp: float  # total duration of depth changes (t_R)
    t_ramp_min: float  # duration at which the margin would be 1 (t_R)
    t_ramp_max: float  # travel bound (t_R)
    adiabatic: bool
    within_travel_bound: bool

    @property
    def passed(self) -> bool:
        return self.adiabatic and self.within_travel_bound


def adiabaticity_check(schedule: RampSchedule, t_ramp_max: float, required_margin: float = 10.0
                       ) -> AdiabaticityReport:
    """Check ``d omega/dt << omega^2`` for the on-site frequency ``omega = 2 sqrt(V0)``.

    ``t_ramp_max`` is the travel-time bound (in ``hbar/E_R``) on the total ramp
    duration. ``<<`` is read as a factor ``required_margin``.
    """
    margin = math.inf
    t_ramp = 0.0
    t_min = 0.0
    for (t0, v0), (t1, v1) in zip(schedule.breakpoints, schedule.breakpoints[1:]):
        if v1 == v0:
            continue
        rate = abs(v1 - v0) / (t1 - t0)
        v_low = min(v0, v1)
        # omega^2 / |d omega/dt| = 4 V^(3/2) / |dV/dt|, smallest at the shallow end
        seg = 4.0 * v_low**1.5 / rate
        margin = min(margin, seg)
        t_ramp += t1 - t0
        t_min = max(t_min, abs(v1 - v0) / (4.0 * v_low**1.5) if v_low > 0 else math.inf)
    return AdiabaticityReport(
        margin=margin,
        t_ramp=t_ramp,
        t_ramp_min=t_min,
        t_ramp_max=t_ramp_max,
        adiabatic=bool(margin >= required_margin),
        within_travel_bound=bool(t_ramp <= t_ramp_max),
    )


# --------------------------------------------------------------------------
# experiment driver


@dataclass
class ObservableSeries:
    times: list = field(default_factory=list)
    norm_in_cavity: list = field(default_factory=list)
    norm_transmitted: list = field(default_factory=list)
    norm_reflected: list = field(default_factory=list)
    norm_total: list = field(default_factory=list)
    mean_position: list = field(default_factory=list)
    mean_momentum: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    depth: list = field(default_factory=list)
    fidelity: list = field(default_factory=list)
    density_correlation: list = field(default_factory=list)

    def as_arrays(self) -> dict:
        return {k: np.asarray(v) for k, v in self.__dict__.items()}

    def in_flight(self) -> np.ndarray:
        return (np.asarray(self.norm_total) - np.asarray(self.norm_in_cavity))


@dataclass
class Carpet:
    times: list
    z: np.ndarray
    density: list

    def matrix(self) -> np.ndarray:
        return np.asarray(self.density)


@dataclass
class ExperimentResult:
    series: ObservableSeries
    final_state: WavePacketState
    ramp_start: float | None
    reference_time: float | None
    cavity: local_bands.CavityGeometry | None
    carpet: Carpet | None = None
    diagnostics: dict = field(default_factory=dict)


def coarse_grain(values: np.ndarray, factor: int) -> np.ndarray:
    """Block-average ``values`` over ``factor`` samples (trailing remainder dropped)."""
    n = values.size // factor
    return values[: n * factor].reshape(n, factor).mean(axis=1)


def density_correlation(rho_ref: np.ndarray, rho: np.ndarray) -> float:
    """Pearson correlation of two densities, clipped at 0."""
    a = rho_ref - rho_ref.mean()
    b = rho - rho.mean()
    den = math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b)))
    if den == 0.0:
        return 0.0
    return max(0.0, float(np.dot(a, b)) / den)


def amplitude_fidelity(psi_ref: np.ndarray, psi: np.ndarray) -> float:
    """``|<ref|psi>|^2`` for states normalised on the supplied samples."""
    nr = np.vdot(psi_ref, psi_ref).real
    n = np.vdot(psi, psi).real
    if nr == 0.0 or n == 0.0:
        return 0.0
    return float(abs(np.vdot(psi_ref, psi)) ** 2 / (nr * n))


@dataclass
class Trigger:
    """When to start the depth ramp.

    ``mode`` is ``"fixed"`` (ramp times as given), ``"free_flight"`` (centre the
    ramp on the free-flight arrival at ``z = z_target``) or ``"crossing"``
    (start when the packet centre crosses ``z_target``).
    """

    mode: str = "free_flight"
    z_target: float = 0.0


def resolve_schedule(schedule: RampSchedule, trigger: Trigger, z0: float, p_in: float) -> RampSchedule:
    """Absolute schedule for the ``fixed`` and ``free_flight`` triggers.

    ``free_flight`` centres the ramp on the time a free particle of momentum
    ``p_in`` needs from ``z0`` to ``trigger.z_target``.
    """
    if schedule.is_static or trigger.mode == "fixed":
        return schedule
    if trigger.mode != "free_flight":
        raise ValueError(f"trigger {trigger.mode!r} has no precomputed start")
    t_arrive = (trigger.z_target - z0) / (2.0 * p_in)
    duration = schedule.t_end - schedule.breakpoints[0][0]
    return schedule.shifted(t_arrive - 0.5 * duration - schedule.breakpoints[0][0])


def packet_center(state: WavePacketState, window: float) -> float:
    """Mean position within ``+-window`` of the density maximum (one lattice period smoothing)."""
    rho = state.density()
    z = state.grid.z
    n = max(1, int(round(math.pi / state.grid.dz)))
    smooth = np.convolve(rho, np.ones(n) / n, mode="same")
    zc = z[int(np.argmax(smooth))]
    sel = np.abs(z - zc) <= window
    return float(np.sum(rho[sel] * z[sel]) / np.sum(rho[sel]))


def run_experiment(
    w_z: float,
    schedule: RampSchedule,
    p_in: float,
    sigma_p: float,
    z0: float,
    t_final: float,
    grid: SpatialGrid | None = None,
    dt: float = DEFAULT_DT,
    sample_interval: float = 1.0,
    trigger: Trigger | None = None,
    cavity: local_bands.CavityGeometry | None = None,
    carpet_interval: float | None = None,
    carpet_bin: int = 4,
    track_fidelity: bool = False,
    window_padding: float = 0.25,
    initial_state: WavePacketState | None = None,
    progress=None,
) -> ExperimentResult:
    """Propagate a Gaussian packet through the lattice and record observables.

    All arguments are in recoil units. ``schedule`` is interpreted relative to
    the ramp start chosen by ``trigger``; with ``mode="fixed"`` it is absolute.
    When the schedule ramps the depth and no ``cavity`` is given, the cavity is
    derived from the band-shifted energy at the final depth.
    With ``track_fidelity`` the state at the end of the ramp (or at t=0 for a
    static lattice) is the reference for the fidelity and density-correlation
    traces, which are evaluated on the cavity window padded by
    ``window_padding * L``.
    """
    trigger = trigger or Trigger("fixed")
    sigma_z = position_width(sigma_p)
    if grid is None:
        grid = SpatialGrid.for_lattice(w_z, z0, sigma_z)
    if z0 > -3.0 * w_z * (1 - 1e-12):
        raise ValueError("initial position must satisfy z0 <= -3 w_z")
    state = initial_state.copy() if initial_state is not None else initial_gaussian(grid, z0, p_in, sigma_p)
    grid = state.grid
    diagnostics: dict = {"grid": grid.as_dict(), "dt": dt}
    if sigma_z > 0.5 * w_z:
        diagnostics["warning"] = "packet wider than w_z/2: infinite-lattice regime violated"

    depths = [b[1] for b in schedule.breakpoints]
    ramped = not schedule.is_static
    ramp_start = None
    pending = None
    if ramped and trigger.mode == "crossing":
        pending = schedule
        schedule = RampSchedule.static(depths[0])
    elif ramped:
        schedule = resolve_schedule(schedule, trigger, z0, p_in)
        ramp_start = schedule.breakpoints[0][0]

    if cavity is None and ramped:
        verdict = trapping_condition(p_in, depths[0], depths[-1])
        diagnostics["trapping"] = verdict.kind
        if verdict.energy_after is not None and verdict.energy_after > 0:
            cavity = local_bands.cavity_at_energy(w_z, depths[-1], verdict.energy_after)
            diagnostics["energy_after"] = verdict.energy_after
    elif cavity is None:
        cavity = local_bands.cavity_at_energy(w_z, depths[0], p_in * p_in)

    prop = SplitOperator(grid, w_z, schedule, dt)
    z = grid.z
    if cavity is not None:
        # the bound state's evanescent tails sit inside the mirrors: count up to their far edges
        cav_sel = (z >= cavity.outer[0]) & (z <= cavity.outer[1])
        pad = window_padding * cavity.L
        win_sel = (z >= cavity.inner[0] - pad) & (z <= cavity.inner[1] + pad)
    else:
        cav_sel = np.zeros(z.size, dtype=bool)
        win_sel = np.abs(z) <= LATTICE_HALF_WIDTH * w_z
    lattice_sel = np.abs(z) <= LATTICE_HALF_WIDTH * w_z
    bin_n = max(1, int(round(math.pi / grid.dz)))  # one lattice period
    carpet_n = max(1, int(round(carpet_bin * math.pi / grid.dz)))

    series = ObservableSeries()
    carpet = Carpet([], coarse_grain(z, carpet_n), []) if carpet_interval else None
    reference = None
    reference_time = None
    if track_fidelity and not ramped:
        reference_time = state.time

    steps_per_sample = max(1, int(round(sample_interval / dt)))
    steps_per_carpet = max(1, int(round(carpet_interval / dt))) if carpet_interval else None
    n_total = int(math.ceil((t_final - state.time) / dt - 1e-9))
    window = 6.0 * sigma_z
    dz = grid.dz

    def sample():
        rho = np.abs(state.psi) ** 2
        series.times.append(state.time)
        series.norm_in_cavity.append(float(rho[cav_sel].sum() * dz))
        series.norm_transmitted.append(state.absorbed_right)
        series.norm_reflected.append(state.absorbed_left)
        series.norm_total.append(float(rho.sum() * dz))
        sel = win_sel if cavity is not None else lattice_sel
        m = rho[sel].sum()
        series.mean_position.append(float((rho[sel] * z[sel]).sum() / m) if m > 0 else float("nan"))
        series.mean_momentum.append(state.mean_momentum())
        series.energy.append(prop.energy(state))
        series.depth.append(prop.schedule.depth(state.time))
        if reference is not None:
            series.fidelity.append(amplitude_fidelity(reference, state.psi[win_sel]))
            series.density_correlation.append(
                density_correlation(coarse_grain(np.abs(reference) ** 2, bin_n),
                                    coarse_grain(rho[win_sel], bin_n)))
        else:
            series.fidelity.append(float("nan"))
            series.density_correlation.append(float("nan"))

    ref_pending = track_fidelity
    if track_fidelity and not ramped:
        reference = state.psi[win_sel].copy()
        ref_pending = False

    sample()
    step = 0
    absorbed_checked = False
    # the free packet reaches the lattice flank (-2 w_z) here; nothing may have
    # been absorbed yet
    t_grid_check = state.time + max(0.0, (-2.0 * w_z - z0) / (2.0 * p_in)) if initial_state is None else None
    while step < n_total:
        chunk = steps_per_sample - step % steps_per_sample
        if steps_per_carpet:
            chunk = min(chunk, steps_per_carpet - step % steps_per_carpet)
        if ref_pending and ramp_start is not None and pending is None:
            # stop exactly at the ramp end to take the reference
            t_ref = prop.schedule.t_end
            k_ref = int(round((t_ref - state.time) / dt))
            if 0 < k_ref < chunk:
                chunk = k_ref
        chunk = min(chunk, n_total - step)
        prop.advance(state, chunk)
        step += chunk

        if pending is not None:
            zc = packet_center(state, window)
            if zc >= trigger.z_target:
                ramp_start = state.time
                schedule = pending.shifted(state.time - pending.breakpoints[0][0])
                prop.schedule = schedule
                prop._depth = None
                pending = None
        if ref_pending and ramp_start is not None and pending is None \
                and state.time >= prop.schedule.t_end - 1e-9:
            reference = state.psi[win_sel].copy()
            reference_time = state.time
            ref_pending = False
        if t_grid_check is not None and state.time >= t_grid_check:
            t_grid_check = None
            lost = state.absorbed_left + state.absorbed_right
            if lost > 1e-6:
                raise GridTooSmallError(
                    f"{lost:.2e} of the norm absorbed before the packet reached the lattice; enlarge the grid")
        if not absorbed_checked and ramp_start is not None:
            absorbed_checked = True
            diagnostics["absorbed_before_ramp"] = state.absorbed_left + state.absorbed_right
        if step % steps_per_sample == 0 or step == n_total:
            sample()
            if progress is not None:
                progress(state.time, t_final)
        if carpet is not None and step % steps_per_carpet == 0:
            carpet.times.append(state.time)
            carpet.density.append(coarse_grain(np.abs(state.psi) ** 2, carpet_n))

    diagnostics["ramp_start"] = ramp_start
    diagnostics["norm_bookkeeping_error"] = abs(state.total_probability() - 1.0)
    return ExperimentResult(series, state, ramp_start, reference_time, cavity, carpet, diagnostics)


# --------------------------------------------------------------------------
# convergence gates


@dataclass(frozen=True)
class GateResult:
    name: str
    l2: float  # || psi_a - psi_b ||
    l2_phase_aligned: float  # same after removing the global phase
    norm_change: float  # change of the remaining norm
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.l2 < self.tolerance)

    def as_dict(self) -> dict:
        return {"name": self.name, "l2": self.l2, "l2_phase_aligned": self.l2_phase_aligned,
                "norm_change": self.norm_change, "tolerance": self.tolerance, "passed": self.passed}


def refine_state(state: WavePacketState) -> WavePacketState:
    """Same state on a grid with half the spacing (band-limited interpolation)."""
    g = state.grid
    fine = SpatialGrid(g.z_min, g.z_max, 2 * g.n_points)
    phi = sfft.fft(state.psi)
    n = g.n_points
    padded = np.zeros(2 * n, dtype=complex)
    padded[: n // 2] = phi[: n // 2]
    padded[-n // 2:] = phi[-n // 2:]
    psi = sfft.ifft(padded) * 2.0
    return WavePacketState(fine, psi, state.time, state.absorbed_left, state.absorbed_right)


def _compare(name, a: np.ndarray, b: np.ndarray, dz: float, tol: float) -> GateResult:
    diff = a - b
    ov = np.vdot(a, b)
    phase = np.exp(-1j * np.angle(ov)) if ov != 0 else 1.0
    return GateResult(
        name=name,
        l2=float(np.sqrt(np.vdot(diff, diff).real * dz)),
        l2_phase_aligned=float(np.sqrt(np.sum(np.abs(a - b * phase) ** 2) * dz)),
        norm_change=float(abs(np.vdot(a, a).real - np.vdot(b, b).real) * dz),
        tolerance=tol,
    )


def convergence_gates(state: WavePacketState, w_z: float, schedule: RampSchedule, dt: float,
                      horizon: float, tol: float = 1e-6,
                      absorber_fraction: float = ABSORBER_FRACTION) -> list[GateResult]:
    """dt-halving and dz-halving gates over ``horizon`` starting from ``state``.

    The dz gate keeps the physical box and compares on the coarse nodes.
    """
    n = max(1, int(round(horizon / dt)))
    base = SplitOperator(state.grid, w_z, schedule, dt, absorber_fraction).advance(state.copy(), n)
    half = SplitOperator(state.grid, w_z, schedule, 0.5 * dt, absorber_fraction).advance(state.copy(), 2 * n)
    fine0 = refine_state(state)
    fine = SplitOperator(fine0.grid, w_z, schedule, dt, absorber_fraction).advance(fine0, n)
    dz = state.grid.dz
    return [
        _compare("dt", base.psi, half.psi, dz, tol),
        _compare("dz", base.psi, fine.psi[::2], dz, tol),
    ]
