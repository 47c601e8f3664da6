"""JSON configuration for calibration simulations.

Values at this boundary are in nm, um, mV and pN; everything returned is SI.
Errors name the offending field as a dotted path.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .calibration import GroundTruth, ScanPlan
from .dielectric import describe_model, model_from_dict
from .errors import ConfigError, DomainError
from .lifshitz import ForceQuery, Geometry, QuadratureSettings, lifshitz_sphere_plate

_TRUTH_KEYS = {"k", "d0_nm", "v0_mV", "sphere_radius_um", "force_curve"}
_PLAN_KEYS = {"dpz_values_nm", "vbias_values_V", "noise_sigma", "rng_seed"}
_FIT_KEYS = {"weighted", "mode"}


def example_config_path():
    return Path(str(resources.files("hsm_casimir") / "data" / "calibration_example.json"))


def _section(cfg, key, allowed, path, required=True):
    if key not in cfg:
        if required:
            raise ConfigError(f"{path}.{key}: missing")
        return {}
    sec = cfg[key]
    if not isinstance(sec, dict):
        raise ConfigError(f"{path}.{key}: expected an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"{path}.{key}: unknown keys {sorted(unknown)}")
    return sec


def _number(sec, key, path):
    if key not in sec:
        raise ConfigError(f"{path}.{key}: missing")
    val = sec[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number")
    return float(val)


def _numbers(sec, key, path):
    if key not in sec:
        raise ConfigError(f"{path}.{key}: missing")
    val = sec[key]
    if not isinstance(val, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        raise ConfigError(f"{path}.{key}: expected a list of numbers")
    return [float(v) for v in val]


class TableForceCurve:
    """Force curve interpolated log-log from a ``separation_nm,force_pN`` CSV."""

    def __init__(self, path):
        path = Path(path)
        try:
            with open(path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read force table {path}: {exc}") from None
        header = [h.strip() for h in rows[0]] if rows else []
        if header[:2] != ["separation_nm", "force_pN"]:
            raise ConfigError(f"{path}: header must start with separation_nm,force_pN")
        try:
            data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r])
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data.shape[0] < 2 or np.any(np.diff(data[:, 0]) <= 0) or np.any(data <= 0):
            raise ConfigError(f"{path}: need >= 2 rows, ascending positive separations and forces")
        self.path = path
        self.log_d = np.log(data[:, 0] * 1e-9)
        self.log_f = np.log(data[:, 1] * 1e-12)

    def __call__(self, separation):
        x = np.log(np.asarray(separation, dtype=float))
        if np.any(x < self.log_d[0] - 1e-12) or np.any(x > self.log_d[-1] + 1e-12):
            raise DomainError(f"separation outside the range of force table {self.path}")
        return np.exp(np.interp(x, self.log_d, self.log_f))


class LifshitzForceCurve:
    """Force curve computed on demand with the same material on sphere and plate."""

    def __init__(self, model, sphere_radius, settings):
        self.model = model
        self.sphere_radius = sphere_radius
        self.settings = settings

    def __call__(self, separation):
        seps = np.atleast_1d(np.asarray(separation, dtype=float))
        out = [lifshitz_sphere_plate(ForceQuery(Geometry(self.sphere_radius, d), self.model,
                                                self.model, self.settings)).force
               for d in seps]
        return np.array(out).reshape(np.shape(separation))


def load_calibration_config(path, settings=None, seed=None):
    """Parse a calibration config file.

    Returns ``(truth, plan, fit_options, resolved)`` where ``resolved`` is a
    JSON-able dict of the fully resolved configuration (used for digests).
    """
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected an object")
    unknown = set(cfg) - {"truth", "plan", "fit"}
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    settings = settings or QuadratureSettings()

    t = _section(cfg, "truth", _TRUTH_KEYS, "config")
    radius = _number(t, "sphere_radius_um", "truth") * 1e-6
    fc = t.get("force_curve")
    if not isinstance(fc, dict):
        raise ConfigError("truth.force_curve: missing or not an object")
    kind = fc.get("kind")
    if kind == "lifshitz":
        if set(fc) - {"kind", "model"}:
            raise ConfigError(f"truth.force_curve: unknown keys {sorted(set(fc) - {'kind', 'model'})}")
        if "model" not in fc:
            raise ConfigError("truth.force_curve.model: missing")
        model = model_from_dict(fc["model"], base_dir=path.parent, path="truth.force_curve.model")
        curve = LifshitzForceCurve(model, radius, settings)
        curve_desc = {"kind": "lifshitz", "model": describe_model(model)}
    elif kind == "table":
        if set(fc) - {"kind", "path"}:
            raise ConfigError(f"truth.force_curve: unknown keys {sorted(set(fc) - {'kind', 'path'})}")
        if "path" not in fc:
            raise ConfigError("truth.force_curve.path: missing")
        table_path = Path(fc["path"])
        if not table_path.is_absolute():
            table_path = path.parent / table_path
        curve = TableForceCurve(table_path)
        curve_desc = {"kind": "table", "log_d": curve.log_d.tolist(), "log_f": curve.log_f.tolist()}
    else:
        raise ConfigError(f"truth.force_curve.kind: expected 'lifshitz' or 'table', got {kind!r}")

    truth = GroundTruth(
        k=_number(t, "k", "truth"),
        d0=_number(t, "d0_nm", "truth") * 1e-9,
        v0=_number(t, "v0_mV", "truth") * 1e-3,
        sphere_radius=radius,
        force_curve=curve,
    )

    p = _section(cfg, "plan", _PLAN_KEYS, "config")
    rng_seed = p.get("rng_seed", 0)
    if isinstance(rng_seed, bool) or not isinstance(rng_seed, int):
        raise ConfigError("plan.rng_seed: expected an integer")
    if seed is not None:
        rng_seed = seed
    plan = ScanPlan(
        dpz_values=[v * 1e-9 for v in _numbers(p, "dpz_values_nm", "plan")],
        vbias_values=_numbers(p, "vbias_values_V", "plan"),
        noise_sigma=_number(p, "noise_sigma", "plan") if "noise_sigma" in p else 0.0,
        rng_seed=rng_seed,
    )
    if max(plan.dpz_values) >= truth.d0:
        raise ConfigError("plan.dpz_values_nm: every value must be below truth.d0_nm")

    f = _section(cfg, "fit", _FIT_KEYS, "config", required=False)
    fit_options = {"weighted": bool(f.get("weighted", True)),
                   "mode": f.get("mode", "simultaneous")}
    if fit_options["mode"] not in ("simultaneous", "separate"):
        raise ConfigError(f"fit.mode: unknown mode {fit_options['mode']!r}")

    resolved = {
        "truth": {"k": truth.k, "d0": truth.d0, "v0": truth.v0,
                  "sphere_radius": truth.sphere_radius, "force_curve": curve_desc},
        "plan": {"dpz_values": list(plan.dpz_values), "vbias_values": list(plan.vbias_values),
                 "noise_sigma": plan.noise_sigma, "rng_seed": plan.rng_seed},
        "fit": fit_options,
    }
    return truth, plan, fit_options, resolved
