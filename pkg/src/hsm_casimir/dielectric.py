"""Dielectric functions on the imaginary frequency axis.

Every finite model is characterised by its absorption spectrum eps''(omega)
on the real axis; the value consumed by the force integral is

    eps(i xi) = 1 + (2/pi) * int_0^inf omega eps''(omega) / (omega^2 + xi^2) domega.

The Drude model has a closed form for this transform. Tabulated spectra are
transformed numerically, with power-law tails outside the sampled range, and a
transparency window zeroes eps'' on a band of wavelengths before the transform.
"""

from __future__ import annotations

import csv
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import ConfigError, DomainError, TailConfigError
from .quadrature import integrate_batch

__all__ = [
    "wavelength_to_omega", "omega_to_wavelength",
    "DrudeParameters", "AbsorptionTable", "TransparencyWindow",
    "DielectricModel", "Vacuum", "IdealMetal", "Drude", "Tabulated", "Windowed",
    "eps_imag_axis_drude", "eps_imag_axis_kk", "apply_window", "evaluate",
    "GOLD_DRUDE", "PRESETS", "preset", "load_absorption_csv", "write_absorption_csv",
    "model_from_dict", "describe_model", "load_model", "resolve_model",
]

KK_REL_TOL = 1e-8
KK_ABS_TOL = 1e-8
_CACHE_LIMIT = 1_000_000


def wavelength_to_omega(wavelength):
    """Angular frequency (rad/s) of light with vacuum wavelength in meters."""
    return 2.0 * np.pi * SPEED_OF_LIGHT / np.asarray(wavelength, dtype=float)


def omega_to_wavelength(omega):
    return 2.0 * np.pi * SPEED_OF_LIGHT / np.asarray(omega, dtype=float)


def _check_xi(xi):
    xi = np.asarray(xi, dtype=float)
    if np.any(~np.isfinite(xi)) or np.any(xi < 0):
        raise DomainError("imaginary frequency must be finite and non-negative")
    if np.any(xi == 0):
        raise DomainError("diverges at zero imaginary frequency")
    return xi


@dataclass(frozen=True)
class DrudeParameters:
    """Plasma frequency and relaxation rate, both in rad/s."""

    plasma_frequency: float
    relaxation_rate: float

    def __post_init__(self):
        if not (self.plasma_frequency > 0 and math.isfinite(self.plasma_frequency)):
            raise ConfigError("plasma_frequency must be positive and finite")
        if not (self.relaxation_rate >= 0 and math.isfinite(self.relaxation_rate)):
            raise ConfigError("relaxation_rate must be non-negative and finite")


#: Gold-like Drude parameters. A configurable stand-in, not measured data.
GOLD_DRUDE = DrudeParameters(plasma_frequency=1.37e16, relaxation_rate=5.3e13)


def eps_imag_axis_drude(params, xi):
    """Closed-form Drude permittivity 1 + wp^2 / (xi (xi + gamma)) at imaginary frequency."""
    xi = _check_xi(xi)
    wp, gamma = params.plasma_frequency, params.relaxation_rate
    out = 1.0 + (wp / xi) * (wp / (xi + gamma))
    return out if out.ndim else float(out)


_LOW_TAILS = {"drude": -1.0, "linear": 1.0, "zero": None}


@dataclass(frozen=True, eq=False)
class AbsorptionTable:
    """Sampled eps''(omega) with power-law extrapolation on both sides.

    ``low_tail`` is ``"drude"`` (eps'' ~ 1/omega, metals), ``"linear"``
    (eps'' ~ omega, insulators), ``"zero"``, ``"auto"`` (pick drude or
    linear from the slope of the first two samples) or a numeric exponent q
    with eps'' ~ omega**q. ``high_tail`` is the decay exponent n with
    eps'' ~ omega**-n, or ``"zero"``. The integral converges only for q > -2
    and n > 2 (finite oscillator strength); other rules are rejected.

    The cutoff factors bound the numerically integrated tails at
    ``low_cutoff * min(omega_1, xi)`` and ``high_cutoff * max(omega_N, xi)``.
    """

    omega: np.ndarray
    eps_imag: np.ndarray
    low_tail: object = "auto"
    high_tail: object = 3.0
    low_cutoff: float = 1e-8
    high_cutoff: float = 1e6

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float)
        eps = np.array(self.eps_imag, dtype=float)
        if omega.ndim != 1 or omega.shape != eps.shape:
            raise ConfigError("omega and eps_imag must be 1-D arrays of equal length")
        if omega.size < 2:
            raise ConfigError("absorption table needs at least 2 samples")
        if not np.all(np.isfinite(omega)) or not np.all(np.isfinite(eps)):
            raise ConfigError("absorption table contains non-finite values")
        if omega[0] <= 0 or np.any(np.diff(omega) <= 0):
            raise ConfigError("table frequencies must be positive and strictly increasing")
        if np.any(eps < 0):
            raise ConfigError("eps_imag must be non-negative")
        omega.setflags(write=False)
        eps.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "eps_imag", eps)
        object.__setattr__(self, "low_tail", self._resolve_low(self.low_tail))
        object.__setattr__(self, "high_tail", self._resolve_high(self.high_tail))
        if not (0 < self.low_cutoff < 1) or not (self.high_cutoff > 1):
            raise ConfigError("low_cutoff must be in (0, 1) and high_cutoff > 1")

    def _resolve_low(self, rule):
        if isinstance(rule, str):
            if rule == "auto":
                e0, e1 = self.eps_imag[:2]
                if e0 > 0 and e1 > 0:
                    slope = math.log(e1 / e0) / math.log(self.omega[1] / self.omega[0])
                    return "drude" if slope <= -0.5 else "linear"
                return "linear"
            if rule not in _LOW_TAILS:
                raise ConfigError(f"unknown low-tail rule {rule!r}")
            return rule
        q = float(rule)
        if not q > -2:
            raise TailConfigError(
                f"low tail omega**{q} makes the transform diverge at omega -> 0 (need exponent > -2)")
        return q

    def _resolve_high(self, rule):
        if isinstance(rule, str):
            if rule != "zero":
                raise ConfigError(f"unknown high-tail rule {rule!r}")
            return rule
        n = float(rule)
        if not n > 2:
            raise TailConfigError(
                f"high tail omega**-{n} decays too slowly (need decay faster than omega**-2)")
        return n

    @property
    def low_exponent(self):
        return _LOW_TAILS[self.low_tail] if isinstance(self.low_tail, str) else self.low_tail

    @property
    def high_exponent(self):
        return None if self.high_tail == "zero" else -self.high_tail

    def __call__(self, omega):
        """eps''(omega) including the tails."""
        omega = np.asarray(omega, dtype=float)
        w, e = self.omega, self.eps_imag
        lnw = np.log(w)
        x = np.log(np.maximum(omega, np.finfo(float).tiny))
        out = np.interp(x, lnw, e)

        # log-log interpolation where both neighbours are positive
        idx = np.clip(np.searchsorted(lnw, x) - 1, 0, w.size - 2)
        pos = (e[idx] > 0) & (e[idx + 1] > 0)
        if np.any(pos):
            le = np.log(np.where(e > 0, e, 1.0))
            frac = (x - lnw[idx]) / (lnw[idx + 1] - lnw[idx])
            loglog = np.exp(le[idx] + frac * (le[idx + 1] - le[idx]))
            out = np.where(pos, loglog, out)

        with np.errstate(divide="ignore", over="ignore"):
            q = self.low_exponent
            low = 0.0 if q is None else e[0] * (omega / w[0]) ** q
            out = np.where(omega < w[0], low, out)
            n = self.high_exponent
            high = 0.0 if n is None else e[-1] * (omega / w[-1]) ** n
            out = np.where(omega > w[-1], high, out)
        return out


@dataclass(frozen=True)
class TransparencyWindow:
    """Band of vacuum wavelengths (meters) on which the material absorbs nothing."""

    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        if not (0 < self.lambda_min < self.lambda_max) or not math.isfinite(self.lambda_max):
            raise ConfigError("transparency window needs 0 < lambda_min < lambda_max")

    @property
    def omega_range(self):
        """(omega_low, omega_high) in rad/s."""
        return (float(wavelength_to_omega(self.lambda_max)),
                float(wavelength_to_omega(self.lambda_min)))


class DielectricModel:
    """Base class; subclasses implement ``_evaluate`` on a 1-D array of xi > 0."""

    variant = "abstract"
    is_ideal_metal = False
    is_vacuum = False
    cached = False

    def evaluate(self, xi):
        """eps(i xi) for scalar or array xi > 0."""
        xi = _check_xi(xi)
        flat = np.atleast_1d(xi).ravel()
        out = self._lookup(flat) if self.cached else self._evaluate(flat)
        out = out.reshape(np.shape(xi))
        return out if out.ndim else float(out)

    def eps_imag(self, omega):
        raise TypeError(f"{self.variant} model has no absorption spectrum")

    def _evaluate(self, xi):
        raise NotImplementedError

    def _lookup(self, xi):
        cache, lock = self._cache_state()
        out = np.empty_like(xi)
        with lock:
            hits = np.array([cache.get(v, np.nan) for v in xi.tolist()])
        missing = np.isnan(hits)
        out[~missing] = hits[~missing]
        if np.any(missing):
            todo = np.unique(xi[missing])
            vals = self._evaluate(todo)
            with lock:
                if len(cache) > _CACHE_LIMIT:
                    cache.clear()
                cache.update(zip(todo.tolist(), vals.tolist()))
            out[missing] = vals[np.searchsorted(todo, xi[missing])]
        return out

    def _cache_state(self):
        state = self.__dict__.get("_cache")
        if state is None:
            state = ({}, threading.Lock())
            object.__setattr__(self, "_cache", state)
        return state


@dataclass(frozen=True, eq=False)
class Vacuum(DielectricModel):
    variant = "vacuum"
    is_vacuum = True

    def _evaluate(self, xi):
        return np.ones_like(xi)

    def eps_imag(self, omega):
        return np.zeros_like(np.asarray(omega, dtype=float))


@dataclass(frozen=True, eq=False)
class IdealMetal(DielectricModel):
    """Perfect reflector; evaluation returns ``inf`` as a flag only."""

    variant = "ideal_metal"
    is_ideal_metal = True

    def _evaluate(self, xi):
        return np.full_like(xi, np.inf)


@dataclass(frozen=True, eq=False)
class Drude(DielectricModel):
    params: DrudeParameters = GOLD_DRUDE
    variant = "drude"

    def _evaluate(self, xi):
        return eps_imag_axis_drude(self.params, xi)

    def eps_imag(self, omega):
        omega = np.asarray(omega, dtype=float)
        wp, g = self.params.plasma_frequency, self.params.relaxation_rate
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (wp * wp * g) / (omega * (omega * omega + g * g))
        return np.where(omega > 0, out, 0.0) if g > 0 else np.zeros_like(omega)

    def _kinks(self):
        g = self.params.relaxation_rate
        return np.array([np.log(g)]) if g > 0 else np.empty(0)


@dataclass(frozen=True, eq=False)
class Tabulated(DielectricModel):
    table: AbsorptionTable = field(default=None)
    variant = "tabulated"
    cached = True

    def __post_init__(self):
        if not isinstance(self.table, AbsorptionTable):
            raise ConfigError("Tabulated model needs an AbsorptionTable")

    def _evaluate(self, xi):
        return 1.0 + _kk_transform(self.table, xi)

    def eps_imag(self, omega):
        return self.table(omega)

    def _kinks(self):
        return np.log(self.table.omega)


@dataclass(frozen=True, eq=False)
class Windowed(DielectricModel):
    base: DielectricModel = None
    window: TransparencyWindow = None
    variant = "windowed"
    cached = True

    def __post_init__(self):
        if not isinstance(self.base, (Drude, Tabulated)):
            raise TypeError("only Drude or Tabulated models can be windowed, got "
                            f"{getattr(self.base, 'variant', type(self.base).__name__)}")
        if not isinstance(self.window, TransparencyWindow):
            raise ConfigError("Windowed model needs a TransparencyWindow")

    def eps_imag(self, omega):
        omega = np.asarray(omega, dtype=float)
        lo, hi = self.window.omega_range
        inside = (omega >= lo) & (omega <= hi)
        return np.where(inside, 0.0, self.base.eps_imag(omega))

    def _evaluate(self, xi):
        # Transform of the windowed spectrum = base transform minus the
        # contribution of the removed band.
        lo, hi = self.window.omega_range
        removed = _kk_band(self.base.eps_imag, xi, np.log(lo), np.log(hi), self.base._kinks())
        return np.maximum(1.0, self.base.evaluate(xi) - removed)


def apply_window(base, window):
    """Make ``base`` fully transparent on ``window``; raises TypeError for vacuum/ideal metal."""
    return Windowed(base=base, window=window)


def evaluate(model, xi):
    """eps(i xi) of any model; ``inf`` flags an ideal metal."""
    return model.evaluate(xi)


def eps_imag_axis_kk(table, xi):
    """Numerical Kramers-Kronig transform of a tabulated absorption spectrum."""
    xi = _check_xi(xi)
    out = 1.0 + _kk_transform(table, np.atleast_1d(xi).ravel()).reshape(np.shape(xi))
    return out if out.ndim else float(out)


def _kk_integrand(eps_imag):
    # Integrand in s = ln(omega): omega^2 eps''(omega) / (omega^2 + xi^2).
    def integrand(xi, s):
        w = np.exp(s)
        r = xi / w
        return eps_imag(w) / (1.0 + r * r)
    return integrand


def _kk_band(eps_imag, xi, s_lo, s_hi, kinks, rel_tol=KK_REL_TOL, abs_tol=KK_ABS_TOL):
    """(2/pi) * int over ln(omega) in [s_lo, s_hi] for every xi."""
    if s_hi <= s_lo:
        return np.zeros_like(xi)
    n_panel = max(8, int(math.ceil((s_hi - s_lo) / math.log(10.0))) * 2)
    base = np.linspace(s_lo, s_hi, n_panel + 1)
    kinks = kinks[(kinks > s_lo) & (kinks < s_hi)]
    lnxi = np.log(xi)[:, None] + np.array([-1.0, 0.0, 1.0])[None, :]
    lnxi = np.clip(lnxi, s_lo, s_hi)
    bp = np.sort(np.hstack([np.broadcast_to(base, (xi.size, base.size)),
                            np.broadcast_to(kinks, (xi.size, kinks.size)), lnxi]), axis=1)
    f = _kk_integrand(eps_imag)
    res = integrate_batch(lambda o, s: f(xi[o], s), bp, rel_tol, abs_tol * math.pi / 2,
                          max_subdiv=bp.shape[1] + 400)
    return (2.0 / math.pi) * res.value


def _kk_transform(table, xi):
    """eps(i xi) - 1 for a tabulated spectrum, including its tails."""
    w = table.omega
    if not np.any(table.eps_imag > 0):
        return np.zeros_like(xi)
    s1, sN = math.log(w[0]), math.log(w[-1])
    lo_edge = np.log(np.minimum(w[0], xi) * table.low_cutoff)
    hi_edge = np.log(np.maximum(w[-1], xi) * table.high_cutoff)
    if table.low_exponent is None:
        lo_edge = np.full_like(xi, s1)
    if table.high_exponent is None:
        hi_edge = np.full_like(xi, sN)
    lnw = np.log(w)

    # per-xi breakpoints: decades through each tail, the samples, and ln(xi) +- 1
    n_dec = 24
    low_bp = lo_edge[:, None] + (s1 - lo_edge)[:, None] * np.linspace(0, 1, n_dec)[None, :]
    high_bp = sN + (hi_edge - sN)[:, None] * np.linspace(0, 1, n_dec)[None, :]
    near = np.clip(np.log(xi)[:, None] + np.array([-1.0, 0.0, 1.0])[None, :],
                   lo_edge[:, None], hi_edge[:, None])
    bp = np.sort(np.hstack([low_bp, np.broadcast_to(lnw, (xi.size, lnw.size)), high_bp, near]),
                 axis=1)

    f = _kk_integrand(table)
    out = np.empty_like(xi)
    # keep each call near a million nodes
    step = max(1, 60_000 // bp.shape[1])
    for lo in range(0, xi.size, step):
        sl = slice(lo, lo + step)
        x = xi[sl]
        res = integrate_batch(lambda o, s: f(x[o], s), bp[sl], KK_REL_TOL,
                              KK_ABS_TOL * math.pi / 2, max_subdiv=bp.shape[1] + 400)
        out[sl] = (2.0 / math.pi) * res.value
    return out


# ---------------------------------------------------------------- presets & IO

PRESETS = {
    "gold_drude": lambda: Drude(GOLD_DRUDE),
    "ideal_metal": IdealMetal,
    "vacuum": Vacuum,
}


def preset(name):
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def load_absorption_csv(path, **tails):
    """Read a ``omega_rad_per_s,eps_imag`` or ``wavelength_um,eps_imag`` CSV."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read absorption table {path}: {exc}") from None
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in row] for row in rows[1:] if row], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1:] != (2,):
        raise ConfigError(f"{path}: expected two columns")
    if header == ["omega_rad_per_s", "eps_imag"]:
        omega, eps = data[:, 0], data[:, 1]
        if np.any(np.diff(omega) <= 0):
            raise ConfigError(f"{path}: omega column must be strictly increasing")
    elif header == ["wavelength_um", "eps_imag"]:
        if np.any(data[:, 0] <= 0):
            raise ConfigError(f"{path}: wavelengths must be positive")
        omega = wavelength_to_omega(data[:, 0] * 1e-6)
        order = np.argsort(omega)
        omega, eps = omega[order], data[order, 1]
    else:
        raise ConfigError(f"{path}: unrecognised header {','.join(header)!r}")
    return AbsorptionTable(omega, eps, **tails)


def write_absorption_csv(path, omega, eps_imag):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("omega_rad_per_s,eps_imag\n")
        for w, e in zip(omega, eps_imag):
            fh.write(f"{w:.17g},{e:.17g}\n")


_MODEL_KEYS = {
    "variant", "plasma_frequency_rad_per_s", "relaxation_rate_rad_per_s", "table_path",
    "window_lambda_min_um", "window_lambda_max_um", "base", "low_tail", "high_tail_exponent",
}


def model_from_dict(data, base_dir=".", path="model"):
    """Build a model from a preset-file mapping (or a preset name)."""
    if isinstance(data, str):
        return preset(data)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object or preset name")
    unknown = set(data) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")

    def need(key):
        if key not in data:
            raise ConfigError(f"{path}.{key}: missing")
        return data[key]

    def number(key):
        val = need(key)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{path}.{key}: expected a number")
        return float(val)

    variant = need("variant")
    if variant == "vacuum":
        return Vacuum()
    if variant == "ideal_metal":
        return IdealMetal()
    if variant == "drude":
        return Drude(DrudeParameters(number("plasma_frequency_rad_per_s"),
                                     number("relaxation_rate_rad_per_s")))
    if variant == "tabulated":
        tails = {}
        if "low_tail" in data:
            tails["low_tail"] = data["low_tail"]
        if "high_tail_exponent" in data:
            tails["high_tail"] = data["high_tail_exponent"]
        table_path = Path(need("table_path"))
        if not table_path.is_absolute():
            table_path = Path(base_dir) / table_path
        return Tabulated(load_absorption_csv(table_path, **tails))
    if variant == "windowed":
        base = model_from_dict(need("base"), base_dir, path + ".base")
        window = TransparencyWindow(number("window_lambda_min_um") * 1e-6,
                                    number("window_lambda_max_um") * 1e-6)
        try:
            return Windowed(base, window)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}.variant: unknown variant {variant!r}")


def describe_model(model):
    """JSON-able description of a model; tabulated spectra are inlined."""
    if isinstance(model, (Vacuum, IdealMetal)):
        return {"variant": model.variant}
    if isinstance(model, Drude):
        return {"variant": "drude",
                "plasma_frequency_rad_per_s": model.params.plasma_frequency,
                "relaxation_rate_rad_per_s": model.params.relaxation_rate}
    if isinstance(model, Windowed):
        return {"variant": "windowed", "base": describe_model(model.base),
                "window_lambda_min_um": model.window.lambda_min * 1e6,
                "window_lambda_max_um": model.window.lambda_max * 1e6}
    if isinstance(model, Tabulated):
        return {"variant": "tabulated",
                "omega_rad_per_s": model.table.omega.tolist(),
                "eps_imag": model.table.eps_imag.tolist(),
                "low_tail": model.table.low_tail,
                "high_tail_exponent": model.table.high_tail}
    raise TypeError(f"cannot serialise {model!r}")


def load_model(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load model file {path}: {exc}") from None
    return model_from_dict(data, base_dir=path.parent, path=path.name)


def resolve_model(name_or_path):
    """Preset name or path to a JSON preset file."""
    if name_or_path in PRESETS:
        return preset(name_or_path)
    return load_model(name_or_path)
