"""Run configured experiments and write their artifacts."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import scipy

from . import bloch, local_bands, propagator as prop, revival, transmission
from .config import ConfigError, ExperimentConfig, config_from_dict, parse_config
from .units import RecoilUnits, TransverseGuide, validate_1d_regime

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

NUMERICAL_ERRORS = (prop.NormDriftError, bloch.TruncationError,
                    bloch.MonodromyError, ArithmeticError)

PRESETS = ("bandmap9", "bandmap15", "fig3", "fig4", "fig5", "fig6", "box")
PRESET_ALIASES = {"fig2": "bandmap9"}
BOX_REVIVAL_THRESHOLD = 0.99


class GateFailure(RuntimeError):
    pass


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def load_preset(name: str) -> ExperimentConfig:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("lattice_cavity.presets").joinpath(f"{name}.toml").read_text()
    return parse_config(text)


# --------------------------------------------------------------------------
# derived parameters


@dataclass(frozen=True)
class Setup:
    """Configuration converted to recoil units."""

    units: RecoilUnits
    w_z: float
    V0: float
    p_in: float
    sigma_p: float
    z0: float
    schedule: prop.RampSchedule
    trigger: prop.Trigger
    dt: float
    ms: float  # one millisecond in hbar/E_R

    def um(self, z):
        return np.asarray(z) * self.units.x_R * 1e6

    def to_ms(self, t):
        return np.asarray(t) / self.ms


def derive(config: ExperimentConfig) -> Setup:
    ph = config.physics
    u = ph.recoil()
    geo = ph.geometry()
    w_z = geo.w_z_recoil
    if not math.isfinite(w_z):
        raise ConfigError("physics: counter-propagating beams give an infinite envelope; set w_z_um")
    ms = u.time_from_si(1e-3)
    sc = config.schedule
    V0 = ph.V0_Er
    if sc.kind == "static":
        schedule = prop.RampSchedule.static(V0)
    elif sc.kind == "linear":
        schedule = prop.RampSchedule.linear(V0, sc.V0_final_Er, sc.t_start_ms * ms, sc.t_ramp_ms * ms)
    else:
        schedule = prop.RampSchedule(tuple((t * ms, v) for t, v in sc.breakpoints_ms_Er))
    return Setup(
        units=u, w_z=w_z, V0=V0,
        p_in=config.wavepacket.p_in_pr,
        sigma_p=config.wavepacket.sigma_p_pr,
        z0=config.wavepacket.z0_wz * w_z,
        schedule=schedule,
        trigger=prop.Trigger(sc.trigger if sc.kind != "static" else "fixed"),
        dt=config.numerics.dt_tr,
        ms=ms,
    )


def grid_for(config: ExperimentConfig, setup: Setup) -> prop.SpatialGrid:
    return prop.SpatialGrid.for_lattice(setup.w_z, setup.z0, prop.position_width(setup.sigma_p),
                                        points_per_period=config.numerics.points_per_period,
                                        absorber_fraction=config.numerics.absorber_fraction)


# --------------------------------------------------------------------------
# output helpers


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, data) -> None:
    with open(path, "w") as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True)
        f.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, config: ExperimentConfig, setup: Setup | None, files, gates, summary) -> None:
    manifest = {
        "name": config.name,
        "mode": config.mode,
        "config": config.model_dump(),
        "units": setup.units.as_dict() if setup else None,
        "code_version": code_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "gates": [g.as_dict() for g in gates],
        "outputs": {p.name: _sha256(p) for p in sorted(files)},
        "summary": summary,
    }
    write_json(out / "manifest.json", manifest)


# --------------------------------------------------------------------------
# modes


def run_bandmap(config: ExperimentConfig, setup: Setup, out: Path):
    bm = config.bandmap
    z = local_bands.default_z_grid(setup.w_z, bm.n_z, bm.half_width_wz)
    p = np.linspace(bm.p_min_pr, bm.p_max_pr, bm.n_p)
    band_map = local_bands.build_band_map(setup.w_z, setup.V0, p, z)
    path = out / "bandmap.csv"
    z_um = setup.um(band_map.z_grid)
    write_csv(path, ["z_um", "p_pr", "im_k_kL", "re_branch"],
              ((z_um[i], pp, ik, rb) for j, pp in enumerate(band_map.p_grid)
               for i, (ik, rb) in enumerate(zip(band_map.im_k[:, j], band_map.re_k[:, j]))))
    cav = local_bands.cavity_at_energy(setup.w_z, setup.V0, setup.p_in**2)
    summary = {
        "n_z": int(z.size), "n_p": int(p.size),
        "max_im_k": float(np.nanmax(band_map.im_k)),
        "cavity_at_p_in": None if cav is None else _cavity_dict(cav, setup),
    }
    return summary, [path], []


def _cavity_dict(cav, setup: Setup) -> dict:
    return {
        "p_pr": cav.p, "energy_Er": cav.energy,
        "inner_um": [float(setup.um(z)) for z in cav.inner],
        "outer_um": [float(setup.um(z)) for z in cav.outer],
        "L_um": float(setup.um(cav.L)),
        "gap_strength": cav.gap_strength,
    }


def transmitted_fraction(setup: Setup, p_in: float, grid: prop.SpatialGrid, in_flight_tol: float,
                         absorber_fraction: float) -> dict:
    """Static-lattice TDSE run until less than ``in_flight_tol`` of the norm is left on the grid."""
    s = prop.initial_gaussian(grid, setup.z0, p_in, setup.sigma_p)
    op = prop.SplitOperator(grid, setup.w_z, prop.RampSchedule.static(setup.V0), setup.dt, absorber_fraction)
    t_cross = (grid.z_max - grid.z_min) / (2.0 * p_in)
    t_check = (-2.0 * setup.w_z - setup.z0) / (2.0 * p_in)
    op.advance(s, int(math.ceil(t_check / setup.dt)))
    if s.absorbed_left + s.absorbed_right > 1e-6:
        raise prop.GridTooSmallError("norm absorbed before the packet reached the lattice")
    chunk = int(math.ceil(0.25 * t_cross / setup.dt))
    t_max = 40.0 * t_cross
    while s.norm() >= in_flight_tol and s.time < t_max:
        op.advance(s, chunk)
    return {"p_in": p_in, "T": s.absorbed_right, "R": s.absorbed_left, "in_flight": s.norm(),
            "t_final": s.time}


def _tdse_task(args):
    config_data, p_in = args
    config = config_from_dict(config_data)
    setup = derive(config)
    grid = grid_for(config, setup)
    return transmitted_fraction(setup, p_in, grid, config.numerics.in_flight_tol,
                                config.numerics.absorber_fraction)


def compare_curves(p, t_analytic, t_tdse, edge_margin: float = 0.05) -> dict:
    """Window edges of both curves and their mean absolute deviation away from the edges."""
    ea = transmission.window_edges(p, t_analytic)
    et = transmission.window_edges(p, t_tdse)
    pairs = []
    for e in ea:
        if et.size:
            pairs.append((float(e), float(et[np.argmin(np.abs(et - e))])))
    edges = np.concatenate([ea, et])
    keep = np.array([np.all(np.abs(edges - x) > edge_margin) for x in p]) if edges.size else np.ones(len(p), bool)
    dev = np.abs(np.asarray(t_analytic) - np.asarray(t_tdse))
    return {
        "edges_analytic": ea, "edges_tdse": et,
        "edge_pairs": pairs,
        "max_edge_shift": max((abs(a - b) for a, b in pairs), default=None),
        "edge_count_match": bool(ea.size == et.size),
        "mean_abs_deviation": float(dev[keep].mean()) if keep.any() else None,
        "n_compared": int(keep.sum()),
    }


def run_transmission(config: ExperimentConfig, setup: Setup, out: Path, workers: int):
    tc = config.transmission
    p = np.linspace(tc.p_min_pr, tc.p_max_pr, tc.n_p)
    curve = transmission.transmission_curve(setup.w_z, setup.V0, p, setup.sigma_p, tc.quad_points, tc.kappa_min)
    path = out / "transmission.csv"
    write_csv(path, ["p_in_pr", "T_mono", "T_ave"], curve.rows())
    files = [path]
    summary = {
        "quadrature_converged": curve.converged,
        "max_quadrature_delta": float(np.nanmax(curve.quadrature_delta)),
        "multi_gap_p": [float(x) for x, m in zip(p, curve.multi_gap) if m],
        "window_edges": transmission.window_edges(p, curve.T_ave),
    }
    if tc.tdse:
        data = config.model_dump()
        results = parallel_map(_tdse_task, [(data, float(x)) for x in p], workers,
                               memory_per_task=_grid_memory(config, setup))
        tp = out / "tdse.csv"
        write_csv(tp, ["p_in_pr", "T_tdse", "R_tdse", "in_flight"],
                  ((r["p_in"], r["T"], r["R"], r["in_flight"]) for r in results))
        files.append(tp)
        t_tdse = np.array([r["T"] for r in results])
        summary["comparison"] = compare_curves(p, curve.T_ave, t_tdse)
        summary["tdse_max_in_flight"] = max(r["in_flight"] for r in results)
    return summary, files, []


def _grid_memory(config, setup) -> int:
    n = grid_for(config, setup).n_points
    return 24 * 16 * n + 200 * 2**20


def propagate(config: ExperimentConfig, setup: Setup, out: Path):
    """One propagation with trapping, adiabaticity and revival analysis."""
    nm = config.numerics
    grid = grid_for(config, setup)
    ms = setup.ms
    ramped = not setup.schedule.is_static
    if nm.t_final_ms is not None:
        t_final = nm.t_final_ms * ms
    else:
        t_final = (grid.z_max - setup.z0) / setup.p_in  # twice the free crossing time
    summary: dict = {"grid": grid.as_dict(), "t_final_ms": t_final / ms}

    depths = [b[1] for b in setup.schedule.breakpoints]
    if ramped:
        verdict = prop.trapping_condition(setup.p_in, depths[0], depths[-1])
        summary["trapping"] = asdict(verdict)
        adi = prop.adiabaticity_check(setup.schedule, 2.0 * ms)
        summary["adiabaticity"] = {
            "margin": adi.margin, "t_ramp_ms": adi.t_ramp / ms,
            "t_ramp_min_us": 1e3 * adi.t_ramp_min / ms, "t_ramp_max_ms": adi.t_ramp_max / ms,
            "adiabatic": adi.adiabatic, "within_travel_bound": adi.within_travel_bound,
        }
    ph = config.physics
    if ph.guide_depth_Er is not None:
        guide = TransverseGuide(setup.units.energy_to_si(ph.guide_depth_Er), ph.guide_waist_um * 1e-6, ph.mass)
        ok, margin = validate_1d_regime(guide, setup.units.energy_to_si(setup.p_in**2))
        summary["one_dimensional"] = {"ok": ok, "margin": margin}

    result = prop.run_experiment(
        setup.w_z, setup.schedule, setup.p_in, setup.sigma_p, setup.z0, t_final, grid=grid,
        dt=setup.dt, sample_interval=nm.sample_interval_ms * ms, trigger=setup.trigger,
        carpet_interval=nm.carpet_interval_ms * ms if (nm.carpet_interval_ms and config.output.carpet) else None,
        carpet_bin=nm.carpet_bin_periods, track_fidelity=ramped,
    )
    s = result.series.as_arrays()
    files = []
    if config.output.series_csv:
        path = out / "series.csv"
        write_csv(path, ["t_ms", "norm_cavity", "norm_T", "norm_R", "mean_z_um", "mean_p_pr", "E_Er",
                         "V0_Er", "fidelity", "density_correlation"],
                  zip(setup.to_ms(s["times"]), s["norm_in_cavity"], s["norm_transmitted"],
                      s["norm_reflected"], setup.um(s["mean_position"]), s["mean_momentum"], s["energy"],
                      s["depth"], s["fidelity"], s["density_correlation"]))
        files.append(path)
    if result.carpet is not None:
        path = out / "carpet.npz"
        np.savez_compressed(path, t_ms=setup.to_ms(np.asarray(result.carpet.times)),
                            z_um=setup.um(result.carpet.z), density=result.carpet.matrix())
        files.append(path)
    summary["diagnostics"] = {k: v for k, v in result.diagnostics.items() if k != "grid"}
    summary["final"] = {"T": result.final_state.absorbed_right, "R": result.final_state.absorbed_left,
                        "norm": result.final_state.norm()}
    if result.cavity is not None:
        summary["cavity"] = _cavity_dict(result.cavity, setup)
    if ramped and result.reference_time is not None:
        summary["revival"] = analyse_revival(config, setup, result)
    return summary, files, result


def analyse_revival(config, setup: Setup, result) -> dict:
    rv = config.revival
    s = result.series.as_arrays()
    t = s["times"]
    sel = t >= result.reference_time - 1e-9
    t, corr, fid, zc = t[sel], s["density_correlation"][sel], s["fidelity"][sel], s["mean_position"][sel]
    out: dict = {"reference_time_ms": float(setup.to_ms(result.reference_time))}
    # trapped fraction and 1/e lifetime relative to the ramp end
    ncav = s["norm_in_cavity"][sel]
    out["trapped_at_ramp_end"] = float(ncav[0])
    for t_ms in (40.0, 100.0, 240.0, 300.0):
        tt = result.reference_time + t_ms * setup.ms
        if tt <= t[-1]:
            n_t = float(np.interp(tt, t, ncav))
            out[f"trapped_at_{int(t_ms)}ms"] = n_t
            out[f"trapped_fraction_{int(t_ms)}ms"] = n_t / float(ncav[0]) if ncav[0] > 0 else None
    decayed = np.nonzero(ncav < ncav[0] / math.e)[0]
    out["lifetime_1e_ms"] = float(setup.to_ms(t[decayed[0]] - t[0])) if decayed.size else None

    rt = revival.round_trip_time(t, zc)
    out["round_trip_ms"] = None if rt is None else float(setup.to_ms(rt))
    L_meas = revival.measured_cavity_length(t, zc)
    out["cavity_length_measured_um"] = None if L_meas is None else float(setup.um(L_meas))
    if rt is None:
        out["report"] = None
        return out
    velocity = np.gradient(zc, t)
    rep = revival.detect_revivals(t - t[0], corr, rt, rv.collapse_threshold, rv.revival_threshold,
                                  velocity=velocity, fidelity=fid)
    rep.cavity_length_measured = L_meas
    for key, trace in (("density_correlation", corr), ("fidelity", fid)):
        env = revival.envelope_summary(t - t[0], trace, rt)
        if env is not None:
            for k in ("t_min", "t_peak"):
                env[k + "_ms"] = float(setup.to_ms(env.pop(k)))
        out[f"envelope_{key}"] = env
    d = rep.as_dict()
    for key in ("collapse_time", "T_rev", "round_trip"):
        d[key + "_ms"] = None if d[key] is None else float(setup.to_ms(d.pop(key)))
        d.pop(key, None)
    d["revival_times_ms"] = [float(setup.to_ms(x)) for x in d.pop("revival_times")]
    d["cavity_length_measured_um"] = out["cavity_length_measured_um"]
    d.pop("cavity_length_measured", None)
    out["report"] = d

    cav = result.cavity
    e_after = result.diagnostics.get("energy_after")
    if cav is not None and e_after is not None:
        class _Map:
            w_z = setup.w_z
            peak_depth = setup.schedule.breakpoints[-1][1]
        try:
            pred = revival.effective_mass_prediction(_Map, cav, e_after, rv.v_min_pr,
                                                     conserve_energy=rv.conserve_energy)
            out["effective_mass"] = {
                "mass_ratio": pred.mass_ratio, "T_rev_ms": float(setup.to_ms(pred.T_rev)),
                "L_um": float(setup.um(pred.L)), "band": pred.band, "sensitivity": pred.sensitivity,
                "reliable": pred.reliable, "excluded_fraction": pred.excluded_fraction,
            }
            box = revival.box_revival_times(pred.L, 0.5, 1.0)
            out["bare_mass_T_rev_ms"] = float(setup.to_ms(box.T_rev))
        except (ValueError, bloch.DivergentEffectiveMass) as exc:
            out["effective_mass"] = {"error": str(exc)}
    return out


def run_propagate(config: ExperimentConfig, setup: Setup, out: Path):
    summary, files, _ = propagate(config, setup, out)
    gates = []
    if config.numerics.run_gates:
        gates = run_gates(config, setup)
    return summary, files, gates


def run_gates(config: ExperimentConfig, setup: Setup) -> list[prop.GateResult]:
    """dt/dz gates starting where the free packet reaches the lattice flank."""
    nm = config.numerics
    grid = grid_for(config, setup)
    schedule = setup.schedule
    if not schedule.is_static:
        trig = setup.trigger if setup.trigger.mode != "crossing" else prop.Trigger("free_flight")
        schedule = prop.resolve_schedule(schedule, trig, setup.z0, setup.p_in)
    state = prop.initial_gaussian(grid, setup.z0, setup.p_in, setup.sigma_p)
    t_flank = max(0.0, (-setup.w_z - setup.z0) / (2.0 * setup.p_in))
    op = prop.SplitOperator(grid, setup.w_z, schedule, setup.dt, nm.absorber_fraction)
    op.advance(state, int(round(t_flank / setup.dt)))
    return prop.convergence_gates(state, setup.w_z, schedule, setup.dt, nm.gate_horizon_tr, nm.gate_tol,
                                  nm.absorber_fraction)


def _sweep_task(args):
    config_data, out_dir = args
    config = config_from_dict(config_data)
    setup = derive(config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary, files, _ = propagate(config, setup, out)
    write_manifest(out, config, setup, files, [], summary)
    return summary


def run_revival_sweep(config: ExperimentConfig, setup: Setup, out: Path, workers: int):
    sw = config.sweep
    subs = []
    for i, v in enumerate(sw.values):
        sub = config.with_value(sw.parameter, v)
        subs.append((sub.model_dump(), str(out / f"run_{i:02d}_{sw.parameter}_{v:g}")))
    results = parallel_map(_sweep_task, subs, sw.workers or workers, memory_per_task=_grid_memory(config, setup))
    rows = []
    for v, res in zip(sw.values, results):
        rep = (res.get("revival") or {}).get("report") or {}
        cav = res.get("cavity") or {}
        rows.append({
            "value": v,
            "T_rev_ms": rep.get("T_rev_ms"),
            "L_measured_um": rep.get("cavity_length_measured_um"),
            "L_cavity_um": cav.get("L_um"),
            "trapping": (res.get("trapping") or {}).get("kind"),
        })
    path = out / "sweep.csv"
    write_csv(path, [sw.parameter, "T_rev_ms", "L_measured_um", "L_cavity_um"],
              ((r["value"], r["T_rev_ms"], r["L_measured_um"], r["L_cavity_um"]) for r in rows))
    agg: dict = {"parameter": sw.parameter, "rows": rows}
    xs = np.array([r["value"] for r in rows], dtype=float)
    T = np.array([np.nan if r["T_rev_ms"] is None else r["T_rev_ms"] for r in rows])
    L = np.array([np.nan if r["L_measured_um"] is None else r["L_measured_um"] for r in rows])
    ok = np.isfinite(T)
    if ok.sum() >= 4:
        fit = revival.scaling_fit(xs[ok], T[ok])
        agg["scaling_fit"] = asdict(fit)
    okL = np.isfinite(L)
    if okL.sum() >= 2:
        s_, c_, res_ = revival.linear_fit_residual(xs[okL], L[okL])
        agg["length_fit"] = {"slope": s_, "intercept": c_, "rms_relative_residual": res_}
    agg["T_rev_monotonic_increasing"] = bool(ok.all() and np.all(np.diff(T) > 0))
    agg["L_monotonic_decreasing"] = bool(okL.all() and np.all(np.diff(L) < 0))
    write_json(out / "aggregate.json", agg)
    return agg, [path, out / "aggregate.json"], []


def run_box_oracle(config: ExperimentConfig, setup: Setup, out: Path):
    bx = config.box
    L = setup.units.length_from_si(bx.L_um * 1e-6)
    box = revival.BoxWell(L, bx.n_points)
    pred = revival.box_revival_times(L, 0.5, 1.0)
    T = pred.T_rev
    t = np.linspace(0.0, bx.n_periods * T, int(bx.n_periods * bx.samples_per_period) + 1)
    psi0 = box.gaussian(bx.x0_frac * L, bx.p0_pr, bx.sigma_frac * L)
    states = [box.propagate(psi0, tt) for tt in t]
    fid, corr = revival.fidelity_trace(psi0, states)
    _, mirror_corr = revival.fidelity_trace(box.mirror(psi0), states)
    rt = L / bx.p0_pr if bx.p0_pr > 0 else T / 16
    # the box rephases exactly; fractional revivals (T_rev/4 gives two copies, fidelity 1/2) and the
    # mirror image that drifts back through the start after T_rev/2 (fidelity ~0.95) are skipped
    rep = revival.detect_revivals(t, fid, rt, revival_threshold=BOX_REVIVAL_THRESHOLD)
    i_spec = int(np.argmin(np.abs(t - pred.T_spec)))
    sym0 = box.gaussian(0.5 * L, 0.0, bx.sigma_frac * L)
    ts = np.linspace(0.5 * pred.T_sym, 1.5 * pred.T_sym, 4001)
    fs, _ = revival.fidelity_trace(sym0, [box.propagate(sym0, tt) for tt in ts])
    path = out / "box_trace.csv"
    write_csv(path, ["t_ms", "fidelity", "density_correlation", "mirrored_correlation"],
              zip(setup.to_ms(t), fid, corr, mirror_corr))
    summary = {
        "L_um": bx.L_um,
        "predicted": {k: (float(setup.to_ms(v)) if k.startswith("T") else v) for k, v in asdict(pred).items()},
        "T_rev_measured_ms": None if rep.T_rev is None else float(setup.to_ms(rep.T_rev)),
        "T_rev_quality": rep.quality,
        "specular_mirrored_correlation": float(mirror_corr[i_spec]),
        "T_sym_measured_ms": float(setup.to_ms(ts[int(np.argmax(fs))])),
        "T_sym_peak_fidelity": float(fs.max()),
        "mass_kg": config.physics.mass,
        "T_rev_si_s": revival.box_revival_times(bx.L_um * 1e-6, config.physics.mass).T_rev,
    }
    return summary, [path], []


# --------------------------------------------------------------------------
# parallel map


def available_workers(memory_per_task: int | None = None) -> int:
    n = os.cpu_count() or 1
    if memory_per_task:
        try:
            avail = os.sysconf("SC_AVPHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
            n = max(1, min(n, int(avail // memory_per_task)))
        except (ValueError, OSError, AttributeError):
            pass
    return n


def parallel_map(func, tasks, workers: int | None = None, memory_per_task: int | None = None):
    """Ordered results of ``func`` over ``tasks``; serial when one worker suffices."""
    workers = min(workers or available_workers(memory_per_task), len(tasks)) or 1
    if workers == 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, tasks))


# --------------------------------------------------------------------------
# entry point


def run(config: ExperimentConfig, out_dir: str | os.PathLike | None = None, check_only: bool = False,
        workers: int | None = None) -> int:
    """Execute ``config``; returns the process exit status."""
    out = Path(out_dir or config.output.directory)
    try:
        setup = derive(config)
    except (ConfigError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        log.error("cannot create output directory %s: %s", out, exc)
        return EXIT_IO
    try:
        if check_only:
            gates = run_gates(config, setup)
            summary = {"check_only": True}
            files = []
        else:
            handler = {
                "bandmap": lambda: run_bandmap(config, setup, out),
                "transmission": lambda: run_transmission(config, setup, out, workers),
                "propagate": lambda: run_propagate(config, setup, out),
                "revival_sweep": lambda: run_revival_sweep(config, setup, out, workers),
                "box_oracle": lambda: run_box_oracle(config, setup, out),
            }[config.mode]
            summary, files, gates = handler()
        write_json(out / "summary.json", summary)
        write_manifest(out, config, setup, [*files, out / "summary.json"], gates, summary)
    except (ConfigError, prop.GridTooSmallError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    failed = [g for g in gates if not g.passed]
    for g in gates:
        log.info("gate %s: L2 %.3e (phase aligned %.3e), tolerance %.1e -> %s", g.name, g.l2,
                 g.l2_phase_aligned, g.tolerance, "pass" if g.passed else "FAIL")
    if failed:
        log.error("convergence gate failed: %s", ", ".join(g.name for g in failed))
        return EXIT_NUMERICAL
    return EXIT_OK
