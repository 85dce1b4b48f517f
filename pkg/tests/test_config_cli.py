import json
import subprocess
import sys

import pytest

from lattice_cavity import cli, runner
from lattice_cavity.config import ConfigError, apply_overrides, parse_config

CANONICAL = """
mode = "propagate"
[physics]
w_z_um = 50.0
V0_Er = 9.0
[wavepacket]
p_in_pr = 2.4
sigma_p_pr = 0.0325
[schedule]
kind = "linear"
V0_final_Er = 15.0
t_ramp_ms = 1.0
"""


def test_canonical_config_defaults():
    c = parse_config(CANONICAL)
    assert c.physics.period_nm == 390.0 and c.physics.species == "Rb87"
    assert c.wavepacket.z0_wz == -3.0
    assert c.schedule.trigger == "free_flight"
    assert c.numerics.dt_tr == 0.05 and c.numerics.points_per_period == 16
    assert c.revival.collapse_threshold == 0.2 and c.revival.revival_threshold == 0.5


def test_negative_waist_rejected():
    with pytest.raises(ConfigError, match=r"physics\.w_z_um"):
        parse_config(CANONICAL.replace("w_z_um = 50.0", "w_z_um = -50.0"))


def test_unit_typo_rejected():
    with pytest.raises(ConfigError, match=r"physics\.wz_um: unknown key"):
        parse_config(CANONICAL.replace("w_z_um", "wz_um"))


def test_incomplete_sections_rejected():
    with pytest.raises(ConfigError, match="linear schedule"):
        parse_config(CANONICAL.replace("t_ramp_ms = 1.0", ""))
    with pytest.raises(ConfigError, match="sweep"):
        parse_config(CANONICAL.replace('mode = "propagate"', 'mode = "revival_sweep"'))
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("mode = ")


def test_overrides():
    c = apply_overrides(parse_config(CANONICAL), ["physics.w_z_um=35", 'name="x"'])
    assert c.physics.w_z_um == 35.0 and c.name == "x"
    with pytest.raises(ConfigError):
        apply_overrides(c, ["physics.w_z_um"])


@pytest.mark.parametrize("name", runner.PRESETS + ("fig2",))
def test_presets_load(name):
    c = runner.load_preset(name)
    runner.derive(c)


def test_sweep_copies_are_single_runs():
    c = runner.load_preset("fig5")
    sub = c.with_value("w_z_um", 15.0)
    assert sub.mode == "propagate" and sub.sweep is None and sub.physics.w_z_um == 15.0


def test_cli_config_error_exit(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(CANONICAL.replace("w_z_um", "wz_um"))
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o")]) == runner.EXIT_CONFIG
    assert cli.main(["run", "--preset", "nope"]) == runner.EXIT_CONFIG


def test_cli_io_error_exit(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.toml")]) == runner.EXIT_IO
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["bandmap", "--preset", "bandmap9", "--out", str(blocker / "sub")]) == runner.EXIT_IO


SMALL_MAP = ["--set", "bandmap.n_p=12", "--set", "bandmap.n_z=64"]


def test_bandmap_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["bandmap", "--preset", "bandmap9", "--out", str(a), *SMALL_MAP]) == 0
    assert cli.main(["bandmap", "--preset", "bandmap9", "--out", str(b), *SMALL_MAP]) == 0
    assert (a / "bandmap.csv").read_bytes() == (b / "bandmap.csv").read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma == mb
    assert set(ma["outputs"]) == {"bandmap.csv", "summary.json"}
    assert ma["units"]["t_R_s"] == pytest.approx(4.2179e-5, rel=1e-4)
    assert ma["config"]["physics"]["V0_Er"] == 9.0


def test_transmission_mode_writes_outputs(tmp_path):
    out = tmp_path / "t"
    code = cli.main(["transmission", "--preset", "fig3", "--out", str(out), "--set", "transmission.tdse=false",
                     "--set", "transmission.n_p=2", "--set", "transmission.p_min_pr=2.4",
                     "--set", "transmission.p_max_pr=2.5"])
    assert code == 0
    rows = (out / "transmission.csv").read_text().splitlines()
    assert rows[0] == "p_in_pr,T_mono,T_ave" and len(rows) == 3
    assert "transmission.csv" in json.loads((out / "manifest.json").read_text())["outputs"]


def test_box_oracle_mode(tmp_path):
    out = tmp_path / "box"
    code = cli.main(["box-oracle", "--preset", "box", "--out", str(out), "--set", "box.n_points=511",
                     "--set", "box.samples_per_period=2000"])
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["T_rev_measured_ms"] == pytest.approx(s["predicted"]["T_rev"], rel=1e-3)
    assert s["T_rev_si_s"] == pytest.approx(0.697, abs=1e-3)


def test_check_reports_gate_failure(tmp_path):
    # the 1e-6 dt gate is out of reach at dt = 0.05 (see README); --check must say so via exit 3
    code = cli.main(["propagate", "--preset", "fig4", "--check", "--out", str(tmp_path / "g"),
                     "--set", "physics.w_z_um=15", "--set", "numerics.gate_horizon_tr=20"])
    m = json.loads((tmp_path / "g" / "manifest.json").read_text())
    names = {g["name"]: g for g in m["gates"]}
    assert set(names) == {"dt", "dz"}
    assert code == (runner.EXIT_OK if all(g["passed"] for g in m["gates"]) else runner.EXIT_NUMERICAL)
    loose = cli.main(["propagate", "--preset", "fig4", "--check", "--out", str(tmp_path / "h"),
                      "--set", "physics.w_z_um=15", "--set", "numerics.gate_horizon_tr=20",
                      "--set", "numerics.gate_tol=1.0"])
    assert loose == runner.EXIT_OK


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "lattice_cavity.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "box-oracle" in r.stdout


@pytest.mark.slow
def test_sweep_layout(tmp_path):
    out = tmp_path / "sweep"
    code = cli.main(["revival-sweep", "--preset", "fig5", "--out", str(out), "--workers", "1",
                     "--set", "numerics.t_final_ms=25", "--set", "numerics.carpet_interval_ms=5"])
    assert code == 0
    runs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert len(runs) == 5 and runs[0].startswith("run_00_w_z_um_15")
    for r in runs:
        assert (out / r / "manifest.json").exists() and (out / r / "series.csv").exists()
    agg = json.loads((out / "aggregate.json").read_text())
    assert [row["value"] for row in agg["rows"]] == [15.0, 25.0, 35.0, 50.0, 65.0]
