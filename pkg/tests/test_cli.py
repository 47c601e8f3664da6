import csv
import io
import json

import numpy as np
import pytest

from hsm_casimir.cli import main
from hsm_casimir.config import example_config_path
from hsm_casimir.dielectric import GOLD_DRUDE, eps_imag_axis_drude, write_absorption_csv
from hsm_casimir.lifshitz import ideal_sphere_plate

from conftest import drude_eps_imag


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def manifest(err):
    for line in err.splitlines():
        if line.startswith('{"manifest"'):
            return json.loads(line)["manifest"]
    raise AssertionError("no manifest on stderr")


@pytest.fixture
def drude_csv(tmp_path):
    omega = np.geomspace(1e11, 1e19, 2000)
    path = tmp_path / "drude.csv"
    write_absorption_csv(path, omega, drude_eps_imag(omega))
    return path


@pytest.fixture
def example_cfg():
    cfg = json.loads(example_config_path().read_text())
    return cfg


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


# --------------------------------------------------------------- force

def test_force_ideal(capsys):
    code, out, err = run(capsys, "force", "--sphere", "ideal_metal", "--plate", "ideal_metal",
                         "--radius-um", "100", "--separation-nm", "100")
    assert code == 0
    data = json.loads(out)
    assert set(data) == {"force_pN", "est_error_pN", "node_count"}
    assert data["force_pN"] == pytest.approx(272, abs=2)
    m = manifest(err)
    assert set(m) == {"tool_version", "command_line", "config_digest", "timestamp"}


def test_force_vacuum(capsys):
    code, out, _ = run(capsys, "force", "--sphere", "vacuum", "--plate", "vacuum")
    assert code == 0 and json.loads(out)["force_pN"] == 0


def test_force_gold_bounded(capsys):
    code, out, _ = run(capsys, "force", "--sphere", "gold_drude", "--plate", "gold_drude",
                       "--separation-nm", "100")
    assert code == 0 and 0 < json.loads(out)["force_pN"] < 272


def test_force_global_flag_after_subcommand(capsys):
    a = run(capsys, "--rel-tol", "1e-4", "force", "--sphere", "ideal_metal", "--plate", "ideal_metal")
    b = run(capsys, "force", "--rel-tol", "1e-4", "--sphere", "ideal_metal", "--plate", "ideal_metal")
    assert a[1] == b[1]
    assert manifest(a[2])["config_digest"] == manifest(b[2])["config_digest"]


def test_force_unknown_preset(capsys):
    code, out, err = run(capsys, "force", "--sphere", "unobtainium")
    assert code == 2 and out == "" and "unobtainium" in err


def test_force_bad_geometry(capsys):
    assert run(capsys, "force", "--separation-nm", "-5")[0] == 2


def test_force_convergence_failure(capsys):
    code, out, _ = run(capsys, "force", "--max-subdiv", "16", "--rel-tol", "1e-12",
                       "--abs-tol-pN", "0")
    assert code == 3
    data = json.loads(out)
    assert data["force_pN"] > 0 and data["est_error_pN"] is None


def test_bad_tolerance_is_config_error(capsys):
    assert run(capsys, "force", "--rel-tol", "0.5")[0] == 2


def test_argparse_error_exit(capsys):
    assert run(capsys, "nonsense")[0] == 2


# --------------------------------------------------------------- sweep

def test_sweep_ideal(capsys):
    code, out, _ = run(capsys, "sweep", "--sphere", "ideal_metal", "--plate", "ideal_metal",
                       "--d-min-nm", "70", "--d-max-nm", "400", "--points", "10")
    assert code == 0
    assert out.splitlines()[0] == "separation_nm,force_pN,est_error_pN,node_count"
    data = rows(out)
    assert len(data) == 10
    seps = [float(r["separation_nm"]) for r in data]
    assert seps == sorted(seps)
    for r in data:
        exact = ideal_sphere_plate(100e-6, float(r["separation_nm"]) * 1e-9) * 1e12
        assert float(r["force_pN"]) == pytest.approx(exact, rel=5e-3)


def test_sweep_two_points(capsys):
    code, out, _ = run(capsys, "sweep", "--points", "2", "--spacing", "linear")
    assert code == 0 and len(rows(out)) == 2


@pytest.mark.parametrize("args", [["--points", "1"], ["--d-min-nm", "400", "--d-max-nm", "70"]])
def test_sweep_validation(capsys, args):
    assert run(capsys, "sweep", *args)[0] == 2


def test_sweep_workers_same_output(capsys):
    base = ["sweep", "--points", "6"]
    assert run(capsys, *base)[1] == run(capsys, *base, "--workers", "3")[1]


def test_sweep_nan_sentinel(capsys):
    code, out, _ = run(capsys, "sweep", "--points", "3", "--max-subdiv", "16",
                       "--rel-tol", "1e-12", "--abs-tol-pN", "0")
    assert code == 3
    assert all(r["est_error_pN"] == "nan" for r in rows(out))


def test_output_file(capsys, tmp_path):
    target = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--points", "3", "--output", str(target))
    assert code == 0 and out == ""
    assert target.read_text().startswith("separation_nm,force_pN")


def test_output_directory_missing(capsys, tmp_path):
    assert run(capsys, "sweep", "--output", str(tmp_path / "nope" / "x.csv"))[0] == 2


# --------------------------------------------------------------- ratio

def ratio_column(capsys, lo, hi, points="6"):
    code, out, err = run(capsys, "ratio", "--window-min-um", lo, "--window-max-um", hi,
                         "--points", points)
    assert code == 0
    assert out.splitlines()[0] == "separation_nm,ratio_windowed,ratio_err"
    return np.array([float(r["ratio_windowed"]) for r in rows(out)]), err


def test_ratio_degenerate_window(capsys):
    r, _ = ratio_column(capsys, "1.0", "1.0000001")
    np.testing.assert_allclose(r, 1.0, atol=1e-5)


def test_ratio_ordering(capsys):
    narrow, err = ratio_column(capsys, "0.2", "2.5")
    wide, _ = ratio_column(capsys, "1", "200")
    assert np.all(narrow > wide)
    assert np.all((wide > 0) & (narrow <= 1))
    assert "0.2" in err and "2.5" in err


@pytest.mark.parametrize("model", ["ideal_metal", "vacuum"])
def test_ratio_rejects_non_windowable(capsys, model):
    assert run(capsys, "ratio", "--model", model, "--window-min-um", "1",
               "--window-max-um", "2")[0] == 2


def test_ratio_bad_window(capsys):
    assert run(capsys, "ratio", "--window-min-um", "2", "--window-max-um", "1")[0] == 2


# --------------------------------------------------------------- kk

def test_kk_drude_table(capsys, drude_csv):
    code, out, _ = run(capsys, "kk", "--table", str(drude_csv))
    assert code == 0
    assert out.splitlines()[0] == "xi_rad_per_s,eps"
    data = rows(out)
    assert len(data) == 100
    xi = np.array([float(r["xi_rad_per_s"]) for r in data])
    eps = np.array([float(r["eps"]) for r in data])
    np.testing.assert_allclose(eps, eps_imag_axis_drude(GOLD_DRUDE, xi), rtol=1e-3)
    assert np.all(np.diff(eps) <= 0)


def test_kk_zero_table(capsys, tmp_path):
    path = tmp_path / "zero.csv"
    write_absorption_csv(path, np.geomspace(1e12, 1e17, 50), np.zeros(50))
    code, out, _ = run(capsys, "kk", "--table", str(path), "--points", "5")
    assert code == 0
    assert all(float(r["eps"]) == 1.0 for r in rows(out))


def test_kk_reversed_range(capsys, drude_csv):
    assert run(capsys, "kk", "--table", str(drude_csv), "--xi-min", "1e17", "--xi-max", "1e13")[0] == 2


@pytest.mark.parametrize("flag, value", [("--high-tail", "1.5"), ("--low-tail", "-3"),
                                         ("--low-tail", "wiggly")])
def test_kk_bad_tail(capsys, drude_csv, flag, value):
    assert run(capsys, "kk", "--table", str(drude_csv), flag, value)[0] == 2


def test_kk_missing_table(capsys, tmp_path):
    assert run(capsys, "kk", "--table", str(tmp_path / "missing.csv"))[0] == 2


# --------------------------------------------------------------- calibrate-sim

def test_calibrate_example(capsys):
    code, out, _ = run(capsys, "calibrate-sim", "--example")
    assert code == 0
    rep = json.loads(out)
    assert rep["k"] == pytest.approx(1e9, rel=1e-6)
    assert rep["d0_nm"] == pytest.approx(500, rel=1e-6)
    assert rep["v0_mV"] == pytest.approx(25, rel=1e-6)
    assert len(rep["casimir_points"]) == 10
    for p in rep["casimir_points"]:
        exact = ideal_sphere_plate(100e-6, p["separation_nm"] * 1e-9) * 1e12
        assert p["force_pN"] == pytest.approx(exact, rel=1e-6)


def test_calibrate_seed_changes_scans_not_noiseless_report(capsys, tmp_path, example_cfg):
    reports, scans = [], []
    for seed in ("1", "2"):
        d = tmp_path / seed
        d.mkdir()
        cfg = dict(example_cfg, plan=dict(example_cfg["plan"], noise_sigma=0.0))
        noisy = dict(example_cfg, plan=dict(example_cfg["plan"], noise_sigma=1e-3))
        _, out, _ = run(capsys, "calibrate-sim", str(write_cfg(d, cfg)), "--seed", seed)
        reports.append(out)
        code, _, _ = run(capsys, "calibrate-sim", str(write_cfg(d, noisy, "noisy.json")),
                         "--seed", seed, "--emit-scans", "--output", str(d / "report.json"))
        assert code == 0
        scans.append((d / "scans.csv").read_text())
    assert reports[0] == reports[1]
    assert scans[0] != scans[1]


def test_calibrate_emit_scans(capsys, tmp_path):
    code, _, _ = run(capsys, "calibrate-sim", "--example", "--emit-scans", "--emit-covariance",
                     "--output", str(tmp_path / "report.json"))
    assert code == 0
    assert json.loads((tmp_path / "report.json").read_text())["k"] > 0
    scans = (tmp_path / "scans.csv").read_text().splitlines()
    assert scans[0] == "d_pz_nm,v_bias_V,amplitude" and len(scans) == 1 + 110
    par = (tmp_path / "parabolas.csv").read_text().splitlines()
    assert par[0] == "d_pz_nm,alpha,sigma_alpha,x0_V,sigma_x0_V,beta,sigma_beta"
    assert len(par) == 11
    cov = np.loadtxt(tmp_path / "force_covariance_pN2.csv", delimiter=",")
    assert cov.shape == (10, 10)


def test_calibrate_missing_radius(capsys, tmp_path, example_cfg):
    del example_cfg["truth"]["sphere_radius_um"]
    code, out, err = run(capsys, "calibrate-sim", str(write_cfg(tmp_path, example_cfg)))
    assert code == 2 and out == ""
    assert "truth.sphere_radius_um" in err


def test_calibrate_unknown_key(capsys, tmp_path, example_cfg):
    example_cfg["plan"]["nosie_sigma"] = 1.0
    code, _, err = run(capsys, "calibrate-sim", str(write_cfg(tmp_path, example_cfg)))
    assert code == 2 and "nosie_sigma" in err


def test_calibrate_fit_failure(capsys, tmp_path, example_cfg):
    # Large noise on a tiny electrostatic signal leaves no usable parabolas
    example_cfg["plan"]["noise_sigma"] = 1e3
    example_cfg["plan"]["dpz_values_nm"] = [100, 140, 180, 220, 260]
    code, out, _ = run(capsys, "calibrate-sim", str(write_cfg(tmp_path, example_cfg)),
                       "--emit-scans", "--output", str(tmp_path / "report.json"))
    assert code == 4
    assert "error" in json.loads((tmp_path / "report.json").read_text())
    assert (tmp_path / "scans.csv").exists()


def test_calibrate_table_force_curve(capsys, tmp_path, example_cfg):
    d = np.geomspace(50, 450, 200)
    lines = ["separation_nm,force_pN"] + [f"{x:.17g},{ideal_sphere_plate(100e-6, x * 1e-9) * 1e12:.17g}"
                                          for x in d]
    (tmp_path / "curve.csv").write_text("\n".join(lines) + "\n")
    example_cfg["truth"]["force_curve"] = {"kind": "table", "path": "curve.csv"}
    code, out, _ = run(capsys, "calibrate-sim", str(write_cfg(tmp_path, example_cfg)))
    assert code == 0
    assert json.loads(out)["k"] == pytest.approx(1e9, rel=1e-6)


def test_calibrate_needs_exactly_one_source(capsys):
    assert run(capsys, "calibrate-sim")[0] == 2


# --------------------------------------------------------------- manifest, presets

def test_digest_tracks_options(capsys):
    digests = set()
    for args in (["force"], ["force", "--separation-nm", "101"], ["force", "--rel-tol", "1e-5"],
                 ["force", "--plate", "ideal_metal"], ["force"]):
        digests.add(manifest(run(capsys, *args)[2])["config_digest"])
    assert len(digests) == 4


def test_presets(capsys):
    code, out, _ = run(capsys, "presets")
    listing = json.loads(out)
    assert code == 0
    assert {"gold_drude", "ideal_metal", "vacuum"} <= set(listing)
