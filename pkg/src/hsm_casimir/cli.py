"""Command-line front end.

Data goes to standard output (or ``--output``); the run manifest and log
messages go to standard error. Exit codes: 0 success, 2 configuration error,
3 quadrature convergence failure, 4 fit failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import run_pipeline
from .config import example_config_path, load_calibration_config
from .dielectric import (
    PRESETS, TransparencyWindow, describe_model, eps_imag_axis_kk,
    load_absorption_csv, preset, resolve_model,
)
from .errors import ConfigError, ConvergenceError, DomainError, FitError
from .lifshitz import (
    ForceQuery, Geometry, QuadratureSettings, force_ratio_windowed, lifshitz_sphere_plate,
)

log = logging.getLogger("hsm_casimir")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_FIT = 0, 2, 3, 4


@dataclass(frozen=True)
class RunManifest:
    tool_version: str
    command_line: str
    config_digest: str
    timestamp: str


def config_digest(resolved):
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"), allow_nan=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _manifest(argv, resolved):
    m = RunManifest(
        tool_version=__version__,
        command_line=shlex.join(["hsm-casimir", *argv]),
        config_digest=config_digest(resolved),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    print(json.dumps({"manifest": asdict(m)}, sort_keys=True), file=sys.stderr)
    return m


def _fmt(x):
    return "nan" if not math.isfinite(x) else f"{x:.9g}"


def _settings(args):
    return QuadratureSettings(rel_tol=args.rel_tol, abs_tol=args.abs_tol_pN * 1e-12,
                              max_subdivisions=args.max_subdiv)


def _separations(args):
    if not (0 < args.d_min_nm < args.d_max_nm):
        raise ConfigError("need 0 < --d-min-nm < --d-max-nm")
    if args.points < 2:
        raise ConfigError("--points must be at least 2")
    if args.spacing == "log":
        return np.geomspace(args.d_min_nm, args.d_max_nm, args.points)
    return np.linspace(args.d_min_nm, args.d_max_nm, args.points)


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--rel-tol", type=float, default=default(1e-6),
                        help="relative quadrature tolerance (default 1e-6)")
    parser.add_argument("--abs-tol-pN", type=float, default=default(1e-10),
                        help="absolute quadrature tolerance in pN (default 1e-10)")
    parser.add_argument("--max-subdiv", type=int, default=default(400),
                        help="maximum adaptive subdivisions per integral")
    parser.add_argument("--seed", type=int, default=default(None),
                        help="override the random seed of a calibration plan")
    parser.add_argument("--emit-scans", action="store_true", default=default(False),
                        help="also write scan and parabola CSVs (calibrate-sim)")
    parser.add_argument("--output", default=default(None),
                        help="write data here instead of standard output")
    parser.add_argument("--workers", type=int, default=default(1),
                        help="threads for sweep rows (output order is unaffected)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hsm-casimir",
        description="Casimir forces from dielectric models and calibration-pipeline simulation.")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def geometry_args(p):
        p.add_argument("--radius-um", type=float, default=100.0, help="sphere radius in um")

    def sweep_args(p):
        p.add_argument("--d-min-nm", type=float, default=70.0)
        p.add_argument("--d-max-nm", type=float, default=400.0)
        p.add_argument("--points", type=int, default=20)
        p.add_argument("--spacing", choices=["linear", "log"], default="log")

    p = sub.add_parser("force", parents=[common], help="force at one separation")
    p.add_argument("--sphere", default="gold_drude", help="preset name or model JSON")
    p.add_argument("--plate", default="gold_drude", help="preset name or model JSON")
    geometry_args(p)
    p.add_argument("--separation-nm", type=float, default=100.0)

    p = sub.add_parser("sweep", parents=[common], help="force versus separation CSV")
    p.add_argument("--sphere", default="gold_drude")
    p.add_argument("--plate", default="gold_drude")
    geometry_args(p)
    sweep_args(p)

    p = sub.add_parser("ratio", parents=[common],
                       help="force ratio of a transparency-windowed material to its base")
    p.add_argument("--model", default="gold_drude", help="base model (Drude or tabulated)")
    p.add_argument("--window-min-um", type=float, required=True)
    p.add_argument("--window-max-um", type=float, required=True)
    geometry_args(p)
    sweep_args(p)

    p = sub.add_parser("kk", parents=[common], help="eps(i xi) of an absorption table")
    p.add_argument("--table", required=True, help="CSV with omega_rad_per_s,eps_imag")
    p.add_argument("--xi-min", type=float, default=1e13)
    p.add_argument("--xi-max", type=float, default=1e17)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--low-tail", default="auto",
                   help="auto, drude, linear, zero or a numeric exponent")
    p.add_argument("--high-tail", default="3",
                   help="decay exponent n of eps'' ~ omega^-n (> 2), or zero")

    p = sub.add_parser("calibrate-sim", parents=[common],
                       help="simulate the calibration and extraction pipeline")
    p.add_argument("config", nargs="?", help="calibration config JSON")
    p.add_argument("--example", action="store_true", help="use the shipped example config")
    p.add_argument("--emit-covariance", action="store_true",
                   help="also write the full force covariance matrix")

    sub.add_parser("presets", parents=[common], help="list built-in material presets")
    return parser


class _Output:
    """Buffers data so nothing is written when validation fails mid-way."""

    def __init__(self, path):
        self.path = path
        self.buf = io.StringIO()

    def write(self, text):
        self.buf.write(text)

    def flush_out(self):
        if self.path is None:
            sys.stdout.write(self.buf.getvalue())
            sys.stdout.flush()
        else:
            with open(self.path, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.buf.getvalue())


def _check_output(args):
    if args.output is not None:
        parent = Path(args.output).resolve().parent
        if not parent.is_dir():
            raise ConfigError(f"output directory {parent} does not exist")


def _tolerances(args):
    return {"rel_tol": args.rel_tol, "abs_tol_pN": args.abs_tol_pN, "max_subdiv": args.max_subdiv}


def _force_row(geometry, sphere, plate, settings):
    try:
        r = lifshitz_sphere_plate(ForceQuery(geometry, sphere, plate, settings))
        return r.force, r.est_error, r.node_count, True
    except ConvergenceError as exc:
        log.warning("d=%.4g m: %s", geometry.separation, exc)
        return exc.best, math.nan, exc.node_count, False


def cmd_force(args, argv, out):
    settings = _settings(args)
    sphere, plate = resolve_model(args.sphere), resolve_model(args.plate)
    geo = Geometry(args.radius_um * 1e-6, args.separation_nm * 1e-9)
    _manifest(argv, {"command": "force", "sphere": describe_model(sphere),
                     "plate": describe_model(plate), "radius_um": args.radius_um,
                     "separation_nm": args.separation_nm, **_tolerances(args)})
    if geo.pfa_warning:
        log.warning("separation/radius > 0.01: proximity-force approximation is doubtful")
    force, err, nodes, ok = _force_row(geo, sphere, plate, settings)
    out.write(json.dumps({"force_pN": force * 1e12,
                          "est_error_pN": err * 1e12 if ok else None,
                          "node_count": nodes}) + "\n")
    return EXIT_OK if ok else EXIT_CONVERGENCE


def _map(args, fn, items):
    if args.workers > 1:
        with ThreadPoolExecutor(args.workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def cmd_sweep(args, argv, out):
    settings = _settings(args)
    sphere, plate = resolve_model(args.sphere), resolve_model(args.plate)
    seps = _separations(args)
    radius = args.radius_um * 1e-6
    Geometry(radius, seps[0] * 1e-9)
    _manifest(argv, {"command": "sweep", "sphere": describe_model(sphere),
                     "plate": describe_model(plate), "radius_um": args.radius_um,
                     "separations_nm": seps.tolist(), **_tolerances(args)})
    rows = _map(args, lambda d: _force_row(Geometry(radius, d * 1e-9), sphere, plate, settings),
                seps)
    out.write("separation_nm,force_pN,est_error_pN,node_count\n")
    for d, (force, err, nodes, _) in zip(seps, rows):
        out.write(f"{_fmt(d)},{_fmt(force * 1e12)},{_fmt(err * 1e12)},{nodes}\n")
    return EXIT_OK if all(r[3] for r in rows) else EXIT_CONVERGENCE


def cmd_ratio(args, argv, out):
    settings = _settings(args)
    base = resolve_model(args.model)
    window = TransparencyWindow(args.window_min_um * 1e-6, args.window_max_um * 1e-6)
    if base.is_ideal_metal or base.is_vacuum:
        raise ConfigError(f"cannot window a {base.variant} model")
    seps = _separations(args)
    radius = args.radius_um * 1e-6
    _manifest(argv, {"command": "ratio", "base": describe_model(base),
                     "window_um": [args.window_min_um, args.window_max_um],
                     "radius_um": args.radius_um, "separations_nm": seps.tolist(),
                     **_tolerances(args)})
    log.info("transparency window %.6g-%.6g um applied to %s",
             args.window_min_um, args.window_max_um, base.variant)

    def row(d):
        try:
            r, e = force_ratio_windowed(base, window, Geometry(radius, d * 1e-9), settings,
                                        return_error=True)
            return r, e, True
        except ConvergenceError as exc:
            log.warning("d=%.4g nm: %s", d, exc)
            return math.nan, math.nan, False

    rows = _map(args, row, seps)
    out.write("separation_nm,ratio_windowed,ratio_err\n")
    for d, (r, e, _) in zip(seps, rows):
        out.write(f"{_fmt(d)},{_fmt(r)},{_fmt(e)}\n")
    return EXIT_OK if all(r[2] for r in rows) else EXIT_CONVERGENCE


def _tail_rule(text):
    try:
        return float(text)
    except ValueError:
        return text


def cmd_kk(args, argv, out):
    if not (0 < args.xi_min < args.xi_max):
        raise ConfigError("need 0 < --xi-min < --xi-max")
    if args.points < 2:
        raise ConfigError("--points must be at least 2")
    table = load_absorption_csv(args.table, low_tail=_tail_rule(args.low_tail),
                                high_tail=_tail_rule(args.high_tail))
    xi = np.geomspace(args.xi_min, args.xi_max, args.points)
    _manifest(argv, {"command": "kk", "omega": table.omega.tolist(),
                     "eps_imag": table.eps_imag.tolist(), "low_tail": table.low_tail,
                     "high_tail": table.high_tail, "xi": xi.tolist()})
    eps = eps_imag_axis_kk(table, xi)
    out.write("xi_rad_per_s,eps\n")
    for x, e in zip(xi, eps):
        out.write(f"{_fmt(x)},{_fmt(e)}\n")
    return EXIT_OK


def _report(result):
    return {
        "k": result.k,
        "sigma_k": result.sigma_k,
        "d0_nm": result.d0 * 1e9,
        "sigma_d0_nm": result.sigma_d0 * 1e9,
        "v0_mV": result.v0 * 1e3,
        "sigma_v0_mV": result.sigma_v0 * 1e3,
        "casimir_points": [
            {"separation_nm": p.separation * 1e9,
             "sigma_separation_nm": p.sigma_separation * 1e9,
             "force_pN": p.force * 1e12,
             "sigma_force_pN": p.sigma_force * 1e12}
            for p in result.casimir_points
        ],
    }


def _write_scans(directory, records, parabolas):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "scans.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("d_pz_nm,v_bias_V,amplitude\n")
        for r in records:
            fh.write(f"{_fmt(r.d_pz * 1e9)},{_fmt(r.v_bias)},{_fmt(r.amplitude)}\n")
    with open(directory / "parabolas.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("d_pz_nm,alpha,sigma_alpha,x0_V,sigma_x0_V,beta,sigma_beta\n")
        for p in parabolas:
            fh.write(",".join(_fmt(v) for v in (p.d_pz * 1e9, p.alpha, p.sigma_alpha, p.x0,
                                                p.sigma_x0, p.beta, p.sigma_beta)) + "\n")


def cmd_calibrate_sim(args, argv, out):
    if args.example == bool(args.config):
        raise ConfigError("give exactly one of a config path or --example")
    path = example_config_path() if args.example else Path(args.config)
    truth, plan, fit_options, resolved = load_calibration_config(
        path, settings=_settings(args), seed=args.seed)
    _manifest(argv, {"command": "calibrate-sim", **resolved, **_tolerances(args)})
    scan_dir = Path(args.output).resolve().parent if args.output else Path.cwd()
    try:
        result = run_pipeline(truth, plan, weighted=fit_options["weighted"],
                              mode=fit_options["mode"])
    except FitError as exc:
        log.error("fit failed: %s", exc)
        diag = exc.diagnostics
        if args.emit_scans and diag.get("records"):
            _write_scans(scan_dir, diag["records"], diag.get("parabolas", []))
        out.write(json.dumps({"error": str(exc), "parabolas_fitted": len(diag.get("parabolas", []))})
                  + "\n")
        return EXIT_FIT
    out.write(json.dumps(_report(result), indent=2) + "\n")
    if args.emit_scans:
        _write_scans(scan_dir, result.records, result.parabolas)
    if args.emit_covariance:
        cov = result.force_covariance() * 1e24
        with open(scan_dir / "force_covariance_pN2.csv", "w", encoding="utf-8", newline="") as fh:
            for row in cov:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    return EXIT_OK


def cmd_presets(args, argv, out):
    _manifest(argv, {"command": "presets"})
    listing = {name: describe_model(preset(name)) for name in sorted(PRESETS)}
    listing["example_calibration_config"] = str(example_config_path())
    out.write(json.dumps(listing, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {
    "force": cmd_force,
    "sweep": cmd_sweep,
    "ratio": cmd_ratio,
    "kk": cmd_kk,
    "calibrate-sim": cmd_calibrate_sim,
    "presets": cmd_presets,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    out = _Output(args.output)
    try:
        _check_output(args)
        code = COMMANDS[args.command](args, argv, out)
    except (ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    out.flush_out()
    return code


if __name__ == "__main__":
    sys.exit(main())
