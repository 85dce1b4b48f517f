"""Experiment configuration: TOML text with unit-suffixed keys, validated by pydantic.

Key suffixes name the unit: ``_um`` micrometres, ``_nm`` nanometres, ``_ms``
milliseconds, ``_Er`` recoil energies, ``_pr`` recoil momenta, ``_tr`` recoil
times ``hbar/E_R``, ``_wz`` multiples of the envelope waist, ``_deg`` degrees.
"""

from __future__ import annotations

import math
from typing import Literal

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import units

SWEEP_PARAMETERS = ("w_z_um", "V0_Er", "V0_final_Er", "p_in_pr", "sigma_p_pr", "t_ramp_ms")


class ConfigError(ValueError):
    """Invalid configuration; the message lists key paths and expected units."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class Physics(_Section):
    species: str = "Rb87"
    mass_kg: float | None = Field(None, gt=0)
    period_nm: float | None = Field(390.0, gt=0)
    lambda_b_nm: float | None = Field(None, gt=0)
    theta_deg: float | None = Field(None, gt=0, le=180)
    w_b_um: float | None = Field(None, gt=0)
    w_z_um: float | None = Field(50.0, gt=0)
    V0_Er: float = Field(9.0, ge=0)
    guide_depth_Er: float | None = Field(None, gt=0)
    guide_waist_um: float | None = Field(None, gt=0)

    @model_validator(mode="after")
    def _geometry(self):
        beams = (self.lambda_b_nm, self.theta_deg, self.w_b_um)
        if any(b is not None for b in beams) and not all(b is not None for b in beams):
            raise ValueError("beam geometry needs lambda_b_nm, theta_deg and w_b_um together")
        if self.mass_kg is None and self.species not in units.SPECIES_MASS:
            raise ValueError(f"unknown species {self.species!r}; give mass_kg")
        if (self.guide_depth_Er is None) != (self.guide_waist_um is None):
            raise ValueError("guide needs guide_depth_Er and guide_waist_um together")
        return self

    @property
    def uses_beams(self) -> bool:
        return self.lambda_b_nm is not None

    @property
    def mass(self) -> float:
        return self.mass_kg if self.mass_kg is not None else units.SPECIES_MASS[self.species]

    def geometry(self) -> units.LatticeGeometry:
        if self.uses_beams:
            return units.lattice_from_beams(self.lambda_b_nm * 1e-9, math.radians(self.theta_deg),
                                            self.w_b_um * 1e-6)
        return units.lattice_from_period(self.period_nm * 1e-9, self.w_z_um * 1e-6)

    def recoil(self) -> units.RecoilUnits:
        return units.recoil_units(self.geometry(), self.mass)


class WavePacket(_Section):
    p_in_pr: float = Field(2.4, gt=0)
    sigma_p_pr: float = Field(0.0325, gt=0)
    z0_wz: float = Field(-3.0, le=-3.0)


class Schedule(_Section):
    kind: Literal["static", "linear", "breakpoints"] = "static"
    V0_final_Er: float | None = Field(None, ge=0)
    t_ramp_ms: float | None = Field(None, gt=0)
    t_start_ms: float = 0.0
    breakpoints_ms_Er: list[tuple[float, float]] | None = None
    trigger: Literal["fixed", "free_flight", "crossing"] = "free_flight"

    @model_validator(mode="after")
    def _complete(self):
        if self.kind == "linear" and (self.V0_final_Er is None or self.t_ramp_ms is None):
            raise ValueError("linear schedule needs V0_final_Er and t_ramp_ms")
        if self.kind == "breakpoints":
            bp = self.breakpoints_ms_Er
            if not bp:
                raise ValueError("breakpoints schedule needs breakpoints_ms_Er")
            if any(b[0] <= a[0] for a, b in zip(bp, bp[1:])):
                raise ValueError("breakpoint times must be strictly increasing")
            if any(v < 0 for _, v in bp):
                raise ValueError("breakpoint depths must be >= 0")
        return self


class Numerics(_Section):
    dt_tr: float = Field(0.05, gt=0)
    points_per_period: int = Field(16, ge=8)
    absorber_fraction: float = Field(0.1, gt=0, lt=0.5)
    t_final_ms: float | None = Field(None, gt=0)
    sample_interval_ms: float = Field(0.05, gt=0)
    carpet_interval_ms: float | None = Field(0.5, gt=0)
    carpet_bin_periods: int = Field(4, ge=1)
    in_flight_tol: float = Field(1e-3, gt=0)
    gate_horizon_tr: float = Field(100.0, gt=0)
    gate_tol: float = Field(1e-6, gt=0)
    run_gates: bool = False


class Transmission(_Section):
    p_min_pr: float = Field(1.0, gt=0)
    p_max_pr: float = Field(3.2, gt=0)
    n_p: int = Field(23, ge=2)
    quad_points: int = Field(257, ge=9)
    kappa_min: float = Field(1e-4, gt=0)
    tdse: bool = False


class BandMap(_Section):
    p_min_pr: float = Field(0.05, gt=0)
    p_max_pr: float = Field(3.5, gt=0)
    n_p: int = Field(200, ge=2)
    n_z: int = Field(512, ge=16)
    half_width_wz: float = Field(4.0, ge=4.0)


class Revival(_Section):
    collapse_threshold: float = Field(0.2, gt=0, lt=1)
    revival_threshold: float = Field(0.5, gt=0, lt=1)
    v_min_pr: float = Field(0.01, gt=0)
    conserve_energy: bool = True


class Box(_Section):
    L_um: float = Field(20.0, gt=0)
    n_points: int = Field(2047, ge=63)
    x0_frac: float = Field(0.5, gt=0, lt=1)
    p0_pr: float = Field(2.4, ge=0)
    sigma_frac: float = Field(0.05, gt=0, lt=0.25)
    n_periods: float = Field(1.1, gt=0)
    samples_per_period: int = Field(4000, ge=100)


class Sweep(_Section):
    parameter: str
    values: list[float]
    workers: int | None = Field(None, ge=1)

    @model_validator(mode="after")
    def _whitelist(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ValueError(f"sweep parameter {self.parameter!r} not in {SWEEP_PARAMETERS}")
        if not self.values:
            raise ValueError("sweep values must not be empty")
        return self


class Output(_Section):
    directory: str = "output"
    carpet: bool = True
    series_csv: bool = True


class ExperimentConfig(_Section):
    mode: Literal["bandmap", "transmission", "propagate", "revival_sweep", "box_oracle"]
    name: str = "run"
    physics: Physics = Physics()
    wavepacket: WavePacket = WavePacket()
    schedule: Schedule = Schedule()
    numerics: Numerics = Numerics()
    transmission: Transmission = Transmission()
    bandmap: BandMap = BandMap()
    revival: Revival = Revival()
    box: Box = Box()
    sweep: Sweep | None = None
    output: Output = Output()

    @model_validator(mode="after")
    def _mode_requirements(self):
        if self.mode == "revival_sweep" and self.sweep is None:
            raise ValueError("revival_sweep needs a [sweep] section")
        if self.mode == "revival_sweep" and self.schedule.kind == "static":
            raise ValueError("revival_sweep needs a depth ramp in [schedule]")
        return self

    def with_value(self, parameter: str, value: float) -> "ExperimentConfig":
        """Copy with one whitelisted parameter replaced, as a single ``propagate`` run."""
        if parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"sweep parameter {parameter!r} not allowed")
        section = {"w_z_um": "physics", "V0_Er": "physics", "V0_final_Er": "schedule",
                   "p_in_pr": "wavepacket", "sigma_p_pr": "wavepacket", "t_ramp_ms": "schedule"}[parameter]
        data = self.model_dump()
        data[section][parameter] = value
        data["sweep"] = None
        data["mode"] = "propagate"
        return config_from_dict(data)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if err["type"] == "extra_forbidden":
            msg = "unknown key (check spelling and unit suffix)"
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def config_from_dict(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a TOML document; unknown keys are rejected."""
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return config_from_dict(data)


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``section.key=value`` overrides (values parsed as TOML)."""
    data = config.model_dump()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path, raw = item.split("=", 1)
        try:
            value = tomli.loads(f"v = {raw}")["v"]
        except tomli.TOMLDecodeError:
            value = raw
        keys = path.strip().split(".")
        node = data
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {} if node.get(k) is None else node[k]
            node = node[k]
        node[keys[-1]] = value
    return config_from_dict(data)
