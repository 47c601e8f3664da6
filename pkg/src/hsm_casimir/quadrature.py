"""Batched adaptive Gauss-Kronrod quadrature.

Many independent one-dimensional integrals are refined together so that each
round of bisection costs a single vectorized integrand call. The integrand
receives the owner index of every node, which lets one routine serve the
inner integrals of a double integral (one owner per outer node) as well as a
plain single integral (one owner).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

KRONROD_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
KRONROD_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
# Gauss weights laid out on the Kronrod nodes (zero on Kronrod-only nodes).
GAUSS_WEIGHTS = np.zeros(15)
GAUSS_WEIGHTS[[1, 3, 5]] = _WG[:3]
GAUSS_WEIGHTS[[9, 11, 13]] = _WG[2::-1]
GAUSS_WEIGHTS[7] = _WG[3]


@dataclass
class BatchResult:
    """Outcome of :func:`integrate_batch`, one entry per owner."""

    value: np.ndarray
    error: np.ndarray
    converged: np.ndarray
    n_intervals: np.ndarray
    n_eval: int


def integrate_batch(func, breakpoints, rel_tol=1e-8, abs_tol=0.0,
                    max_subdiv=200, max_nodes=2_000_000):
    """Integrate many functions at once with adaptive GK15 bisection.

    Parameters
    ----------
    func : callable
        ``func(owner, x)`` with integer array ``owner`` and float array ``x``
        of equal shape. Returns the integrand values, or a pair
        ``(values, node_errors)`` when the integrand is itself only known to
        within a per-node absolute error (nested quadrature).
    breakpoints : array_like, shape (m, nb)
        Initial partition of each of the ``m`` integrals; row ``i`` must be
        non-decreasing and its first/last entries are the limits.
    rel_tol, abs_tol : float or array_like
        Per-owner tolerances; owner ``i`` is done once its summed error is at
        most ``max(abs_tol, rel_tol * |value|)``.
    max_subdiv : int
        Maximum number of intervals per owner before giving up on it.
    max_nodes : int
        Upper bound on the nodes per integrand call; larger rounds are split.
    """
    bp = np.atleast_2d(np.asarray(breakpoints, dtype=float))
    m, nb = bp.shape
    if nb < 2:
        raise ValueError("need at least two breakpoints per integral")
    if np.any(np.diff(bp, axis=1) < 0):
        raise ValueError("breakpoints must be non-decreasing")
    rel_tol = np.broadcast_to(np.asarray(rel_tol, dtype=float), (m,))
    abs_tol = np.broadcast_to(np.asarray(abs_tol, dtype=float), (m,))

    a = bp[:, :-1].ravel()
    b = bp[:, 1:].ravel()
    owner = np.repeat(np.arange(m), nb - 1)
    keep = b > a
    # Owners whose whole range is empty still need an (empty) entry.
    a, b, owner = a[keep], b[keep], owner[keep]

    done_val = np.zeros(m)
    done_err = np.zeros(m)
    done_cnt = np.zeros(m, dtype=int)
    converged = np.ones(m, dtype=bool)
    n_eval = 0

    while a.size:
        val, err = _gk15(func, a, b, owner, max_nodes)
        n_eval += 15 * a.size

        tot_val = done_val + np.bincount(owner, val, minlength=m)
        tot_err = done_err + np.bincount(owner, err, minlength=m)
        cnt = done_cnt + np.bincount(owner, minlength=m)
        tol = np.maximum(abs_tol, rel_tol * np.abs(tot_val))

        ok = tot_err <= tol
        exhausted = cnt >= max_subdiv
        # An interval is split only if its owner still needs work and the
        # interval carries more than its equal share of the tolerance.
        share = tol[owner] / cnt[owner]
        active = ~(ok | exhausted)[owner]
        split = active & (err > share)
        # Always refine at least the worst interval of an active owner.
        if np.any(active & ~split):
            worst = _argmax_by_owner(err, owner, m)
            split[worst[active[worst]]] = True
        split &= (b - a) > 64 * np.finfo(float).eps * np.maximum(abs(a), abs(b))

        converged[np.unique(owner[exhausted[owner] & ~ok[owner]])] = False
        settle = ~split
        done_val += np.bincount(owner[settle], val[settle], minlength=m)
        done_err += np.bincount(owner[settle], err[settle], minlength=m)
        done_cnt += np.bincount(owner[settle], minlength=m)

        mid = 0.5 * (a[split] + b[split])
        a = np.concatenate([a[split], mid])
        b = np.concatenate([mid, b[split]])
        owner = np.concatenate([owner[split], owner[split]])

    tol = np.maximum(abs_tol, rel_tol * np.abs(done_val))
    converged &= done_err <= tol
    return BatchResult(done_val, done_err, converged, done_cnt, n_eval)


def integrate(func, breakpoints, rel_tol=1e-8, abs_tol=0.0, max_subdiv=200):
    """Single adaptive integral of ``func(x)``; returns ``(value, error, converged)``."""
    res = integrate_batch(lambda _o, x: func(x), np.asarray(breakpoints)[None, :],
                          rel_tol, abs_tol, max_subdiv)
    return float(res.value[0]), float(res.error[0]), bool(res.converged[0])


def _gk15(func, a, b, owner, max_nodes):
    half = 0.5 * (b - a)
    center = 0.5 * (b + a)
    x = center[:, None] + half[:, None] * KRONROD_NODES[None, :]
    own = np.broadcast_to(owner[:, None], x.shape)

    chunk = max(1, max_nodes // 15)
    fx = np.empty_like(x)
    ferr = None
    for lo in range(0, a.size, chunk):
        sl = slice(lo, lo + chunk)
        out = func(own[sl].ravel(), x[sl].ravel())
        if isinstance(out, tuple):
            vals, errs = out
            if ferr is None:
                ferr = np.zeros_like(x)
            ferr[sl] = np.reshape(errs, x[sl].shape)
        else:
            vals = out
        fx[sl] = np.reshape(vals, x[sl].shape)

    kron = half * (fx @ KRONROD_WEIGHTS)
    gauss = half * (fx @ GAUSS_WEIGHTS)
    err = np.abs(kron - gauss)
    # Floor at roundoff level so that tiny tolerances terminate.
    err = np.maximum(err, 50 * np.finfo(float).eps * half * (np.abs(fx) @ KRONROD_WEIGHTS))
    if ferr is not None:
        err = err + np.abs(half) * (np.abs(ferr) @ KRONROD_WEIGHTS)
    return kron, err


def _argmax_by_owner(values, owner, m):
    order = np.lexsort((values, owner))
    last = np.r_[owner[order][1:] != owner[order][:-1], True]
    return order[last]
