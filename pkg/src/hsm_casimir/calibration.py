"""Simultaneous electrostatic calibration and Casimir force extraction.

At each piezo extension d_pz the lock-in output is scanned against the bias
voltage. The output is a parabola

    A = alpha (V_bias + x0)^2 + beta,   alpha = k eps0 pi R / (d0 - d_pz),

whose vertex gives the residual voltage, whose curvature versus d_pz gives the
sensor gain k and the contact offset d0, and whose floor gives the Casimir
force beta / k at separation d0 - d_pz. This module generates synthetic scans
from a known ground truth and runs the extraction, so every step can be
checked against the truth that produced the data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.constants import epsilon_0 as EPSILON_0
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .errors import ConfigError, DomainError, FitError

__all__ = [
    "GroundTruth", "ScanPlan", "LockInRecord", "ParabolaFit", "CalibrationFit",
    "CasimirPoint", "CalibrationResult", "generate_scan", "fit_parabola",
    "fit_calibration", "extract_casimir", "run_pipeline", "group_by_dpz",
    "CasimirCalibration",
]


@dataclass(frozen=True)
class GroundTruth:
    """Parameters that generate synthetic data (SI units).

    ``k`` is in lock-in output units per newton; ``force_curve`` maps a
    separation array to the Casimir attraction magnitude.
    """

    k: float
    d0: float
    v0: float
    sphere_radius: float
    force_curve: Callable = field(compare=False)

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError("k must be positive")
        if not self.d0 > 0:
            raise ConfigError("d0 must be positive")
        if not self.sphere_radius > 0:
            raise ConfigError("sphere_radius must be positive")
        if not math.isfinite(self.v0):
            raise ConfigError("v0 must be finite")


@dataclass(frozen=True)
class ScanPlan:
    dpz_values: tuple
    vbias_values: tuple
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        dpz = np.asarray(self.dpz_values, dtype=float)
        v = np.asarray(self.vbias_values, dtype=float)
        if dpz.ndim != 1 or dpz.size < 5:
            raise ConfigError("scan plan needs at least 5 piezo positions")
        if np.any(np.diff(dpz) <= 0):
            raise ConfigError("piezo positions must be strictly increasing")
        if v.ndim != 1 or v.size < 7:
            raise ConfigError("scan plan needs at least 7 bias voltages")
        if not (self.noise_sigma >= 0 and math.isfinite(self.noise_sigma)):
            raise ConfigError("noise_sigma must be non-negative")
        object.__setattr__(self, "dpz_values", tuple(dpz.tolist()))
        object.__setattr__(self, "vbias_values", tuple(v.tolist()))
        object.__setattr__(self, "rng_seed", int(self.rng_seed))


@dataclass(frozen=True)
class LockInRecord:
    d_pz: float
    v_bias: float
    amplitude: float


@dataclass(frozen=True)
class ParabolaFit:
    """Fit of A = alpha (V + x0)^2 + beta at one piezo position.

    ``covariance`` is ordered (alpha, x0, beta). ``physical`` is False when
    the fitted curvature is not positive.
    """

    d_pz: float
    alpha: float
    x0: float
    beta: float
    covariance: np.ndarray
    residual_rms: float = 0.0
    physical: bool = True

    @property
    def sigma_alpha(self):
        return math.sqrt(max(self.covariance[0, 0], 0.0))

    @property
    def sigma_x0(self):
        return math.sqrt(max(self.covariance[1, 1], 0.0))

    @property
    def sigma_beta(self):
        return math.sqrt(max(self.covariance[2, 2], 0.0))


@dataclass(frozen=True)
class CalibrationFit:
    k: float
    d0: float
    covariance: np.ndarray
    weighted: bool = True

    @property
    def sigma_k(self):
        return math.sqrt(self.covariance[0, 0])

    @property
    def sigma_d0(self):
        return math.sqrt(self.covariance[1, 1])


@dataclass(frozen=True)
class CasimirPoint:
    d_pz: float
    separation: float
    sigma_separation: float
    force: float
    sigma_force: float
    flagged: bool = False


@dataclass
class CalibrationResult:
    k: float
    sigma_k: float
    d0: float
    sigma_d0: float
    v0: float
    sigma_v0: float
    casimir_points: list
    parabolas: list = field(default_factory=list)
    records: list = field(default_factory=list)
    kd0_covariance: np.ndarray = None

    def force_covariance(self):
        """Full covariance of the extracted forces.

        The per-point sigma_force ignores the common gain error; this matrix
        keeps it: diag(sigma_beta^2) / k^2 + outer(beta, beta) sigma_k^2 / k^4.
        """
        beta = np.array([p.beta for p in self.parabolas])
        s_beta = np.array([p.sigma_beta for p in self.parabolas])
        k = self.k
        return np.diag(s_beta**2) / k**2 + np.outer(beta, beta) * self.sigma_k**2 / k**4

    def alpha_table(self):
        """(d_pz, alpha, sigma_alpha) rows: the curvature-versus-extension data."""
        return [(p.d_pz, p.alpha, p.sigma_alpha) for p in self.parabolas]


def generate_scan(truth, plan):
    """Synthetic lock-in records, ordered by piezo position then bias.

    Noise on each record comes from its own generator seeded with
    ``(rng_seed, i_dpz, i_bias)``, so the output does not depend on the
    order in which records are produced.
    """
    dpz = np.asarray(plan.dpz_values)
    if np.any(dpz >= truth.d0):
        raise DomainError("sphere-plate contact: every d_pz must be below d0")
    v = np.asarray(plan.vbias_values)
    shifted = v + truth.v0
    if not (np.any(shifted > 0) and np.any(shifted < 0)):
        raise ConfigError("bias grid must straddle -v0 (both signs of V_bias + V0)")

    gaps = truth.d0 - dpz
    casimir = np.asarray(truth.force_curve(gaps), dtype=float) * np.ones_like(gaps)
    c_es = EPSILON_0 * math.pi * truth.sphere_radius
    records = []
    for i, (d, gap, fc) in enumerate(zip(dpz, gaps, casimir)):
        amp = truth.k * (c_es * shifted**2 / gap + fc)
        if plan.noise_sigma > 0:
            noise = [np.random.default_rng([plan.rng_seed, i, j]).normal()
                     for j in range(v.size)]
            amp = amp + plan.noise_sigma * np.asarray(noise)
        records.extend(LockInRecord(float(d), float(vb), float(a))
                       for vb, a in zip(v, amp))
    return records


def group_by_dpz(records):
    """Split records into lists sharing one piezo position, in ascending d_pz."""
    groups = {}
    for r in records:
        groups.setdefault(r.d_pz, []).append(r)
    return [groups[k] for k in sorted(groups)]


def fit_parabola(records, sigma=None):
    """Least-squares parabola through one bias scan.

    Solved as a linear fit in the monomial basis a V^2 + b V + c and mapped
    to (alpha, x0, beta) = (a, b / 2a, c - b^2 / 4a), with the covariance
    carried through the Jacobian of that map.

    Parameters
    ----------
    records : list of LockInRecord
        All at the same d_pz.
    sigma : float, optional
        Known amplitude noise. If omitted the residual variance is used.
    """
    if len(records) < 4:
        raise FitError("parabola fit needs at least 4 records")
    d_pz = records[0].d_pz
    if any(r.d_pz != d_pz for r in records):
        raise FitError("records span more than one piezo position")
    x = np.array([r.v_bias for r in records])
    y = np.array([r.amplitude for r in records])
    if np.unique(x).size < 3:
        raise FitError("parabola fit needs at least 3 distinct bias values")

    scale = np.max(np.abs(x)) or 1.0
    xs = x / scale
    design = np.column_stack([xs * xs, xs, np.ones_like(xs)])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < 3:
        raise FitError("degenerate bias design")
    resid = y - design @ coef
    n = y.size
    if sigma is None:
        var = float(resid @ resid) / (n - 3) if n > 3 else 0.0
    else:
        var = float(sigma) ** 2
    _, r_mat = np.linalg.qr(design)
    r_inv = np.linalg.inv(r_mat)
    cov_s = var * (r_inv @ r_inv.T)
    unscale = np.diag([1 / scale**2, 1 / scale, 1.0])
    a, b, c = unscale @ coef
    cov_abc = unscale @ cov_s @ unscale

    if a == 0:
        raise FitError("zero curvature: vertex undefined", {"d_pz": d_pz})
    jac = np.array([
        [1.0, 0.0, 0.0],
        [-b / (2 * a * a), 1 / (2 * a), 0.0],
        [b * b / (4 * a * a), -b / (2 * a), 1.0],
    ])
    cov = jac @ cov_abc @ jac.T
    cov = 0.5 * (cov + cov.T)
    return ParabolaFit(
        d_pz=float(d_pz), alpha=float(a), x0=float(b / (2 * a)),
        beta=float(c - b * b / (4 * a)), covariance=cov,
        residual_rms=float(np.sqrt(np.mean(resid**2))), physical=bool(a > 0),
    )


def fit_calibration(parabolas, sphere_radius, weighted=True, max_nfev=200):
    """Fit alpha(d_pz) = k eps0 pi R / (d0 - d_pz) for the gain k and offset d0.

    Starts from the exact linearisation 1/alpha = (d0 - d_pz) / (k eps0 pi R)
    and refines with weighted Levenberg-Marquardt. With ``weighted`` the
    parabola uncertainties are taken as absolute; otherwise the covariance is
    scaled by the residual variance.
    """
    fits = [p for p in parabolas if p.physical and p.alpha > 0]
    dpz = np.array([p.d_pz for p in fits])
    if len(fits) < 3 or np.unique(dpz).size < 3:
        raise FitError("calibration fit needs at least 3 parabolas at distinct d_pz with alpha > 0")
    alpha = np.array([p.alpha for p in fits])
    s_alpha = np.array([p.sigma_alpha for p in fits])
    if weighted and not np.all((s_alpha > 0) & np.isfinite(s_alpha)):
        weighted = False
    w = 1.0 / s_alpha if weighted else np.ones_like(alpha)
    c_es = EPSILON_0 * math.pi * sphere_radius

    # initial values from 1/alpha = A + B d_pz
    inv = 1.0 / alpha
    w_inv = (alpha**2 / s_alpha) if weighted else np.ones_like(alpha)
    slope, intercept = np.polyfit(dpz, inv, 1, w=w_inv)
    if slope >= 0:
        raise FitError("curvature does not grow with piezo extension",
                       {"dpz": dpz.tolist(), "alpha": alpha.tolist()})
    k_init = -1.0 / (slope * c_es)
    d0_init = -intercept / slope
    d_scale = max(abs(d0_init), np.max(np.abs(dpz)))

    def unpack(q):
        return q[0] * k_init, q[1] * d_scale

    def residuals(q):
        k, d0 = unpack(q)
        return w * (k * c_es / (d0 - dpz) - alpha)

    def jacobian(q):
        k, d0 = unpack(q)
        gap = d0 - dpz
        return np.column_stack([w * c_es / gap * k_init, -w * k * c_es / gap**2 * d_scale])

    sol = least_squares(residuals, [1.0, d0_init / d_scale], jac=jacobian, method="lm",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev)
    if not sol.success:
        raise FitError(f"calibration fit did not converge: {sol.message}",
                       {"nfev": sol.nfev, "k_init": k_init, "d0_init": d0_init})
    k, d0 = unpack(sol.x)
    if d0 <= np.max(dpz):
        raise FitError("fitted d0 does not exceed the largest d_pz (non-physical)",
                       {"k": k, "d0": d0})

    jac = jacobian(sol.x) / np.array([k_init, d_scale])
    cov = np.linalg.inv(jac.T @ jac)
    if not weighted:
        dof = max(len(fits) - 2, 1)
        cov = cov * float(sol.fun @ sol.fun) / dof
    return CalibrationFit(float(k), float(d0), cov, weighted)


def _pool_v0(parabolas):
    x0 = np.array([p.x0 for p in parabolas])
    s = np.array([p.sigma_x0 for p in parabolas])
    if np.all(s > 0) and np.all(np.isfinite(s)):
        w = 1.0 / s**2
        return float(np.sum(w * x0) / np.sum(w)), float(1.0 / math.sqrt(np.sum(w)))
    spread = float(np.std(x0, ddof=1) / math.sqrt(x0.size)) if x0.size > 1 else 0.0
    return float(np.mean(x0)), spread


def extract_casimir(parabolas, k, sigma_k, d0, sigma_d0, kd0_covariance=None):
    """Casimir force beta / k at each separation d0 - d_pz.

    sigma_force combines sigma_beta and sigma_k to first order, treating them
    as independent. Negative beta gives a flagged point, not an error.
    """
    if not k > 0:
        raise FitError("gain k must be positive")
    points = []
    for p in parabolas:
        force = p.beta / k
        s_force = math.hypot(p.sigma_beta / k, p.beta * sigma_k / k**2)
        points.append(CasimirPoint(
            d_pz=p.d_pz, separation=d0 - p.d_pz, sigma_separation=sigma_d0,
            force=force, sigma_force=s_force, flagged=p.beta < 0))
    v0, s_v0 = _pool_v0(parabolas)
    return CalibrationResult(k=k, sigma_k=sigma_k, d0=d0, sigma_d0=sigma_d0, v0=v0,
                             sigma_v0=s_v0, casimir_points=points, parabolas=list(parabolas),
                             kd0_covariance=kd0_covariance)


def run_pipeline(truth, plan, weighted=True, use_known_noise=True, mode="simultaneous"):
    """Generate scans from ``truth`` and recover k, d0, V0 and F_C(d).

    ``mode="separate"`` is a negative control: the gain is calibrated from the
    largest-bias points alone as if the Casimir force were negligible there,
    which biases k whenever it is not.
    """
    if mode not in ("simultaneous", "separate"):
        raise ConfigError(f"unknown pipeline mode {mode!r}")
    records = generate_scan(truth, plan)
    sigma = plan.noise_sigma if (use_known_noise and plan.noise_sigma > 0) else None
    parabolas = []
    try:
        for group in group_by_dpz(records):
            parabolas.append(fit_parabola(group, sigma))
        fit_input = parabolas if mode == "simultaneous" else _separate_alphas(records, parabolas)
        cal = fit_calibration(fit_input, truth.sphere_radius, weighted=weighted)
    except FitError as exc:
        exc.diagnostics.setdefault("records", records)
        exc.diagnostics.setdefault("parabolas", parabolas)
        raise
    result = extract_casimir(parabolas, cal.k, cal.sigma_k, cal.d0, cal.sigma_d0, cal.covariance)
    result.records = records
    return result


def _separate_alphas(records, parabolas):
    out = []
    for group, p in zip(group_by_dpz(records), parabolas):
        far = max(group, key=lambda r: abs(r.v_bias + p.x0))
        alpha = far.amplitude / (far.v_bias + p.x0) ** 2
        out.append(replace(p, alpha=alpha, physical=alpha > 0))
    return out


class CasimirCalibration(RegressorMixin, BaseEstimator):
    """Estimator wrapper around the calibration pipeline.

    ``X`` has columns (d_pz, v_bias) in meters and volts; ``y`` is the lock-in
    amplitude. After ``fit`` the calibration is available as ``k_``, ``d0_``,
    ``v0_`` (with ``sigma_*``) and the extracted forces as
    ``casimir_points_``.

    Parameters
    ----------
    sphere_radius : float
        Sphere radius in meters.
    weighted : bool
        Inverse-variance weighting of the curvature fit.
    noise_sigma : float or None
        Known amplitude noise; ``None`` estimates it from the residuals.
    """

    def __init__(self, sphere_radius=100e-6, weighted=True, noise_sigma=None):
        self.sphere_radius = sphere_radius
        self.weighted = weighted
        self.noise_sigma = noise_sigma

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: d_pz and v_bias")
        records = [LockInRecord(float(d), float(v), float(a)) for (d, v), a in zip(X, y)]
        parabolas = [fit_parabola(g, self.noise_sigma) for g in group_by_dpz(records)]
        cal = fit_calibration(parabolas, self.sphere_radius, weighted=self.weighted)
        result = extract_casimir(parabolas, cal.k, cal.sigma_k, cal.d0, cal.sigma_d0,
                                 cal.covariance)
        result.records = records
        self.result_ = result
        self.k_, self.sigma_k_ = result.k, result.sigma_k
        self.d0_, self.sigma_d0_ = result.d0, result.sigma_d0
        self.v0_, self.sigma_v0_ = result.v0, result.sigma_v0
        self.casimir_points_ = result.casimir_points
        self.n_features_in_ = 2
        return self

    def casimir_force(self, separation):
        """Extracted Casimir force, interpolated log-log in separation."""
        check_is_fitted(self, "result_")
        pts = sorted(self.casimir_points_, key=lambda p: p.separation)
        d = np.array([p.separation for p in pts])
        f = np.array([p.force for p in pts])
        sep = np.asarray(separation, dtype=float)
        if np.all(f > 0):
            return np.exp(np.interp(np.log(sep), np.log(d), np.log(f)))
        return np.interp(sep, d, f)

    def predict(self, X):
        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        gap = self.d0_ - X[:, 0]
        c_es = EPSILON_0 * math.pi * self.sphere_radius
        return self.k_ * (c_es * (X[:, 1] + self.v0_) ** 2 / gap + self.casimir_force(gap))
