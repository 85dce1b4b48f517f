"""Physical constants, lattice geometry and the recoil unit system.

Everything downstream of this module works in lattice recoil units:

* lengths in ``1/k_L`` (so one lattice period is ``pi``),
* momenta in ``p_R = hbar k_L``,
* energies in ``E_R = p_R**2 / 2m``,
* times in ``hbar / E_R``.

In these units the 1D Hamiltonian reads ``H = -d^2/dx^2 + V(x)``, i.e. ``hbar = 1``
and ``m = 1/2``. SI values only appear at the I/O boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import constants

HBAR = constants.hbar  # J s (CODATA 2018, exact to the digits given)
ATOMIC_MASS_UNIT = constants.physical_constants["atomic mass constant"][0]
RB87_MASS = 86.909180531 * ATOMIC_MASS_UNIT  # kg

SPECIES_MASS = {
    "Rb87": RB87_MASS,
}


@dataclass(frozen=True)
class LatticeGeometry:
    """Lattice derived from two crossing Gaussian beams.

    All lengths are SI (metres). ``lambda_b``, ``theta`` and ``w_b`` are ``None``
    when the lattice was specified directly through its period and axial waist.
    """

    k_L: float
    P: float
    w_z: float
    w_perp: float | None = None
    lambda_b: float | None = None
    theta: float | None = None
    w_b: float | None = None

    @property
    def w_z_recoil(self) -> float:
        """Axial envelope waist in units of ``1/k_L``."""
        return self.w_z * self.k_L

    def to_beams(self) -> tuple[float, float, float]:
        """Recover ``(lambda_b, theta, w_b)`` from the derived fields."""
        if self.w_perp is None:
            raise ValueError("beam parameters need the transverse waist w_perp")
        half = math.atan2(self.w_z, self.w_perp)
        w_b = self.w_z * math.cos(half)
        lambda_b = 2.0 * math.pi * math.sin(half) / self.k_L
        return lambda_b, 2.0 * half, w_b


def lattice_from_beams(lambda_b: float, theta: float, w_b: float) -> LatticeGeometry:
    """Build the lattice formed by two beams of wavelength ``lambda_b`` crossing at ``theta``.

    Parameters
    ----------
    lambda_b : float
        Beam wavelength (m).
    theta : float
        Full crossing angle (rad), ``0 < theta <= pi``.
    w_b : float
        Beam waist (m).
    """
    if not lambda_b > 0:
        raise ValueError(f"lambda_b must be positive, got {lambda_b!r}")
    if not w_b > 0:
        raise ValueError(f"w_b must be positive, got {w_b!r}")
    if not 0.0 < theta <= math.pi:
        raise ValueError(f"theta must lie in (0, pi], got {theta!r} (degenerate lattice)")
    half = 0.5 * theta
    k_b = 2.0 * math.pi / lambda_b
    k_L = k_b * math.sin(half)
    cos_half = math.cos(half)
    # counter-propagating beams: no axial envelope from the beam profile
    w_z = w_b / cos_half if cos_half > 1e-15 else math.inf
    return LatticeGeometry(
        k_L=k_L,
        P=math.pi / k_L,
        w_z=w_z,
        w_perp=w_b / math.sin(half),
        lambda_b=lambda_b,
        theta=theta,
        w_b=w_b,
    )


def lattice_from_period(P: float, w_z: float) -> LatticeGeometry:
    """Lattice given directly by its period ``P`` and axial waist ``w_z`` (both in m)."""
    if not P > 0:
        raise ValueError(f"P must be positive, got {P!r}")
    if not w_z > 0:
        raise ValueError(f"w_z must be positive, got {w_z!r}")
    return LatticeGeometry(k_L=math.pi / P, P=P, w_z=w_z)


@dataclass(frozen=True)
class RecoilUnits:
    """Recoil unit system for an atom of ``mass`` in a lattice of wave number ``k_L``."""

    mass: float
    k_L: float

    @property
    def p_R(self) -> float:
        return HBAR * self.k_L

    @property
    def E_R(self) -> float:
        return self.p_R**2 / (2.0 * self.mass)

    @property
    def t_R(self) -> float:
        return HBAR / self.E_R

    @property
    def x_R(self) -> float:
        return 1.0 / self.k_L

    @property
    def v_R(self) -> float:
        """Recoil velocity ``p_R/m`` (m/s)."""
        return self.p_R / self.mass

    # velocity unit of the dimensionless equations: x_R / t_R = v_R / 2

    def energy_to_si(self, e):
        return e * self.E_R

    def energy_from_si(self, e):
        return e / self.E_R

    def length_to_si(self, x):
        return x * self.x_R

    def length_from_si(self, z):
        return z / self.x_R

    def time_to_si(self, t):
        return t * self.t_R

    def time_from_si(self, t):
        return t / self.t_R

    def velocity_to_si(self, v):
        """Convert a velocity in ``x_R/t_R`` to m/s."""
        return v * self.x_R / self.t_R

    def as_dict(self) -> dict:
        return {
            "mass_kg": self.mass,
            "k_L_per_m": self.k_L,
            "p_R_kg_m_per_s": self.p_R,
            "E_R_J": self.E_R,
            "E_R_over_h_Hz": self.E_R / (2.0 * math.pi * HBAR),
            "t_R_s": self.t_R,
            "x_R_m": self.x_R,
            "v_R_m_per_s": self.v_R,
        }


def recoil_units(geometry: LatticeGeometry, mass: float = RB87_MASS) -> RecoilUnits:
    if not mass > 0:
        raise ValueError(f"mass must be positive, got {mass!r}")
    return RecoilUnits(mass=mass, k_L=geometry.k_L)


@dataclass(frozen=True)
class TransverseGuide:
    """Red-detuned guiding beam of depth ``V_g`` (J) and waist ``w_g`` (m)."""

    V_g: float
    w_g: float
    mass: float = RB87_MASS

    def __post_init__(self):
        if not (self.V_g > 0 and self.w_g > 0 and self.mass > 0):
            raise ValueError("guide depth, waist and mass must be positive")

    @property
    def omega_ho(self) -> float:
        return math.sqrt(4.0 * self.V_g / (self.mass * self.w_g**2))

    @property
    def a_ho(self) -> float:
        return math.sqrt(HBAR / (self.mass * self.omega_ho))


def validate_1d_regime(guide: TransverseGuide, total_energy: float) -> tuple[bool, float]:
    """Check that the packet stays in the transverse ground state.

    Returns ``(ok, margin)`` where ``margin = total_energy / (hbar omega_ho)`` and
    ``ok`` is ``margin < 1``.
    """
    margin = total_energy / (HBAR * guide.omega_ho)
    return bool(margin < 1.0), margin
