"""Sphere-plate Casimir and electrostatic forces.

The Lifshitz force is evaluated in the scaled variables

    t = 2 d xi / c,    u = p t,

which turn the sphere-plate double integral into

    F = (hbar c R / (16 pi d^3)) * int_0^inf dt int_t^inf du  u * sum_pol -ln(1 - r1 r2 exp(-u)).

The exponential sets the scale of both variables, so the u integral is
truncated after a fixed number of e-foldings and both levels are integrated
adaptively. All forces are returned as attraction magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT, epsilon_0 as EPSILON_0, hbar as HBAR

from .dielectric import DielectricModel, apply_window
from .errors import ConfigError, ConvergenceError
from .quadrature import integrate_batch

__all__ = [
    "Geometry", "QuadratureSettings", "ForceQuery", "ForceResult",
    "ideal_plate_pressure", "ideal_plate_energy", "ideal_sphere_plate",
    "derjaguin_sphere_plate", "reflection_coefficients",
    "lifshitz_sphere_plate", "lifshitz_sphere_plate_grid",
    "force_ratio_windowed", "electrostatic_sphere_plate",
]

PFA_WARNING_RATIO = 0.01


@dataclass(frozen=True)
class Geometry:
    sphere_radius: float
    separation: float

    def __post_init__(self):
        if not (self.sphere_radius > 0 and self.separation > 0):
            raise ConfigError("sphere radius and separation must be positive")
        if not (math.isfinite(self.sphere_radius) and math.isfinite(self.separation)):
            raise ConfigError("sphere radius and separation must be finite")

    @property
    def pfa_warning(self):
        """True when d/R is large enough to doubt the proximity-force approximation."""
        return self.separation / self.sphere_radius > PFA_WARNING_RATIO


@dataclass(frozen=True)
class QuadratureSettings:
    """Tolerances for :func:`lifshitz_sphere_plate`.

    ``abs_tol`` is in newtons. ``p_cutoff_decay`` is the number of e-foldings
    of exp(-2 p d xi / c) kept before the integral is truncated.
    """

    rel_tol: float = 1e-6
    abs_tol: float = 1e-22
    max_subdivisions: int = 400
    p_cutoff_decay: float = 40.0

    def __post_init__(self):
        if not (0 < self.rel_tol <= 1e-2):
            raise ConfigError("rel_tol must lie in (0, 1e-2]")
        if not self.abs_tol >= 0:
            raise ConfigError("abs_tol must be non-negative")
        if int(self.max_subdivisions) != self.max_subdivisions or self.max_subdivisions < 16:
            raise ConfigError("max_subdivisions must be an integer >= 16")
        if not self.p_cutoff_decay >= 20:
            raise ConfigError("p_cutoff_decay must be >= 20")


@dataclass(frozen=True)
class ForceQuery:
    geometry: Geometry
    material_sphere: DielectricModel
    material_plate: DielectricModel
    settings: QuadratureSettings = field(default_factory=QuadratureSettings)


@dataclass(frozen=True)
class ForceResult:
    force: float
    est_error: float
    node_count: int


def ideal_plate_pressure(separation):
    """Casimir pressure pi^2 hbar c / (240 d^4) between perfect mirrors, in Pa."""
    d = np.asarray(separation, dtype=float)
    if np.any(d <= 0):
        raise ConfigError("separation must be positive")
    out = math.pi**2 * HBAR * SPEED_OF_LIGHT / (240.0 * d**4)
    return out if out.ndim else float(out)


def ideal_plate_energy(separation):
    """Magnitude of the ideal-mirror interaction energy per unit area, J/m^2."""
    d = np.asarray(separation, dtype=float)
    if np.any(d <= 0):
        raise ConfigError("separation must be positive")
    out = math.pi**2 * HBAR * SPEED_OF_LIGHT / (720.0 * d**3)
    return out if out.ndim else float(out)


def derjaguin_sphere_plate(sphere_radius, plate_energy_per_area, separation,
                           second_radius=math.inf):
    """Proximity-force conversion 2 pi R_eff |u(d)|.

    ``second_radius`` is the curvature radius of the other body; the default
    (infinite) is a flat plate, so R_eff = R.
    """
    if not (sphere_radius > 0 and separation > 0 and second_radius > 0):
        raise ConfigError("radii and separation must be positive")
    if math.isinf(second_radius):
        r_eff = sphere_radius
    else:
        r_eff = sphere_radius * second_radius / (sphere_radius + second_radius)
    return 2.0 * math.pi * r_eff * abs(plate_energy_per_area(separation))


def ideal_sphere_plate(sphere_radius, separation):
    """pi^3 hbar c R / (360 d^3): perfect mirrors in the proximity-force limit."""
    d = np.asarray(separation, dtype=float)
    out = math.pi**3 * HBAR * SPEED_OF_LIGHT * sphere_radius / (360.0 * d**3)
    return out if out.ndim else float(out)


def electrostatic_sphere_plate(sphere_radius, gap, v_bias, v_residual=0.0):
    """eps0 pi R (V_bias + V_0)^2 / gap, the sphere-plate electrostatic attraction."""
    gap = np.asarray(gap, dtype=float)
    if np.any(gap <= 0):
        raise ConfigError("gap must be positive")
    v = np.asarray(v_bias, dtype=float) + v_residual
    out = EPSILON_0 * math.pi * sphere_radius * v * v / gap
    return out if np.ndim(out) else float(out)


def reflection_coefficients(eps, p):
    """TE and TM reflection factors (s-p)/(s+p) and (s-p eps)/(s+p eps).

    s = sqrt(eps - 1 + p^2). Both are written in a cancellation-free form so
    that eps -> 1 and p -> inf stay accurate. ``eps = inf`` gives the perfect
    mirror values (+1, -1).
    """
    eps = np.asarray(eps, dtype=float)
    p = np.asarray(p, dtype=float)
    ideal = np.isinf(eps)
    e = np.where(ideal, 2.0, eps)
    em1 = e - 1.0
    s = np.sqrt(em1 + p * p)
    r_te = em1 / (s + p) ** 2
    r_tm = -em1 * (p * p * (e + 1.0) - 1.0) / (s + p * e) ** 2
    r_te = np.where(ideal, 1.0, r_te)
    r_tm = np.where(ideal, -1.0, r_tm)
    return r_te, r_tm


def _log_terms(eps1, eps2, t, u):
    # -u * [ln(1 - rTE1 rTE2 e^-u) + ln(1 - rTM1 rTM2 e^-u)], non-negative
    p = u / t
    te1, tm1 = reflection_coefficients(eps1, p)
    te2, tm2 = reflection_coefficients(eps2, p)
    x = np.exp(-u)
    return -u * (np.log1p(-te1 * te2 * x) + np.log1p(-tm1 * tm2 * x))


def _truncation_bound(cut):
    # |ln(1 - r r' e^-u)| <= -ln(1 - e^-u) <= e^-u / (1 - e^-u) for |r r'| <= 1
    return 2.0 * math.exp(-cut) * (cut * cut + 2 * cut + 2) / (1.0 - math.exp(-cut))


def _prefactor(geometry):
    d = geometry.separation
    return HBAR * SPEED_OF_LIGHT * geometry.sphere_radius / (16.0 * math.pi * d**3)


def _eps_on_nodes(model, xi):
    if model.is_ideal_metal:
        return np.full_like(xi, np.inf)
    return model.evaluate(xi)


def lifshitz_sphere_plate(query):
    """Lifshitz sphere-plate force for arbitrary (possibly dissimilar) materials.

    Raises
    ------
    ConvergenceError
        When either quadrature level runs out of subdivisions; the exception
        carries the best estimate.
    """
    geo, st = query.geometry, query.settings
    m1, m2 = query.material_sphere, query.material_plate
    if m1.is_vacuum or m2.is_vacuum:
        return ForceResult(0.0, 0.0, 0)

    pref = _prefactor(geo)
    cut = float(st.p_cutoff_decay)
    xi_scale = SPEED_OF_LIGHT / (2.0 * geo.separation)
    abs_tol = st.abs_tol / pref
    inner_rel = st.rel_tol / 10.0
    inner_abs = abs_tol / (10.0 * cut)
    n_inner = 12
    stats = {"nodes": 0, "failed": 0}

    def outer(_owner, t):
        xi = xi_scale * t
        eps1 = _eps_on_nodes(m1, xi)
        eps2 = eps1 if m2 is m1 else _eps_on_nodes(m2, xi)
        bp = t[:, None] * np.geomspace(1.0, cut / t, n_inner).T

        def inner(o, u):
            return _log_terms(eps1[o], eps2[o], t[o], u)

        res = integrate_batch(inner, bp, inner_rel, inner_abs, st.max_subdivisions)
        stats["nodes"] += res.n_eval
        stats["failed"] += int(np.count_nonzero(~res.converged))
        return res.value, res.error

    outer_bp = np.concatenate([[0.0], cut * np.logspace(-12, 0, 13)])
    res = integrate_batch(outer, outer_bp[None, :], st.rel_tol, abs_tol, st.max_subdivisions)

    force = pref * float(res.value[0])
    err = pref * (float(res.error[0]) + _truncation_bound(cut))
    result = ForceResult(force, err, stats["nodes"])
    if not res.converged[0] or stats["failed"]:
        raise ConvergenceError(
            f"Lifshitz quadrature did not converge within {st.max_subdivisions} subdivisions "
            f"({stats['failed']} inner integrals failed)",
            best=force, est_error=err, node_count=stats["nodes"])
    return result


def lifshitz_sphere_plate_grid(query, n=400, t_min_fraction=1e-8):
    """Non-adaptive tensor-grid trapezoid evaluation of the same integral.

    Independent cross-check of :func:`lifshitz_sphere_plate`: uses a uniform
    n x n grid in (ln t, ln p) with no error control.
    """
    geo, st = query.geometry, query.settings
    m1, m2 = query.material_sphere, query.material_plate
    if m1.is_vacuum or m2.is_vacuum:
        return 0.0
    cut = float(st.p_cutoff_decay)
    lnt = np.linspace(math.log(cut * t_min_fraction), math.log(cut), n)
    t = np.exp(lnt)
    xi = SPEED_OF_LIGHT * t / (2.0 * geo.separation)
    eps1 = _eps_on_nodes(m1, xi)
    eps2 = _eps_on_nodes(m2, xi)

    v = np.linspace(0.0, 1.0, n)
    span = np.log(cut / t)                      # ln p runs over [0, span]
    lnp = span[:, None] * v[None, :]
    p = np.exp(lnp)
    tt = t[:, None]
    u = tt * p
    vals = _log_terms(eps1[:, None], eps2[:, None], tt, u)
    # dt du = t^2 p dlnt dlnp, and dlnp = span dv
    inner = np.trapezoid(vals * tt * tt * p, v, axis=1) * span
    return _prefactor(geo) * float(np.trapezoid(inner, lnt))


def force_ratio_windowed(base, window, geometry, settings=None, return_error=False):
    """F(windowed) / F(base) with the same material on sphere and plate."""
    settings = settings or QuadratureSettings()
    windowed = apply_window(base, window)
    f_base = lifshitz_sphere_plate(ForceQuery(geometry, base, base, settings))
    f_win = lifshitz_sphere_plate(ForceQuery(geometry, windowed, windowed, settings))
    ratio = f_win.force / f_base.force
    if not return_error:
        return ratio
    err = ratio * math.hypot(f_win.est_error / f_win.force, f_base.est_error / f_base.force)
    return ratio, err
