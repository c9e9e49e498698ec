"""Principal branch of the Lambert W function, real arguments only.

Two regimes, both refined by Halley's method:

* ``-1/e <= x <= e``: iterate on ``w exp(w) - x``, starting from the branch-point
  series near ``-1/e`` and from ``log1p(x)`` elsewhere.
* ``x > e``: iterate on ``w + log(w) - log(x)``. This never exponentiates, so the
  same code serves :func:`lambert_w0_of_log` for arguments whose exponential
  overflows.
"""
import numpy as np

from .exceptions import DomainError

_INV_E = np.exp(-1.0)
_MAX_ITER = 64


def _return(w, scalar):
    return float(w.reshape(())) if scalar else w


def _halley_direct(x):
    """Solve ``w exp(w) = x`` for ``x`` in [-1/e, e]."""
    w = np.log1p(x)
    near = x < -0.25
    if near.any():
        p = np.sqrt(np.maximum(2.0 * (np.e * x[near] + 1.0), 0.0))
        w[near] = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    # the branch point is exact from the series; Halley is singular there
    at_branch = x <= -_INV_E
    w[at_branch] = -1.0
    active = ~at_branch
    for _ in range(_MAX_ITER):
        if not active.any():
            break
        wa, xa = w[active], x[active]
        ew = np.exp(wa)
        f = wa * ew - xa
        wp1 = wa + 1.0
        denom = ew * wp1 - (wa + 2.0) * f / (2.0 * wp1)
        with np.errstate(divide="ignore", invalid="ignore"):
            dw = np.where(denom != 0.0, f / denom, 0.0)
        w[active] = wa - dw
        done = np.abs(dw) <= 4e-16 * np.maximum(np.abs(wa), 1e-300)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return w


def _halley_log(log_x):
    """Solve ``w + log(w) = log_x`` for ``log_x >= 1`` (so ``w >= 1``)."""
    L = log_x
    lnL = np.log(L)
    w = L - lnL + lnL / L
    active = np.ones(L.shape, dtype=bool)
    for _ in range(_MAX_ITER):
        wa, La = w[active], L[active]
        f = wa + np.log(wa) - La
        fp = 1.0 + 1.0 / wa
        fpp = -1.0 / (wa * wa)
        dw = f / (fp - f * fpp / (2.0 * fp))
        w[active] = wa - dw
        done = np.abs(dw) <= 4e-16 * wa
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
    return w


def lambert_w0(x):
    """Principal-branch Lambert W: the ``w >= -1`` solving ``w exp(w) = x``.

    Accepts scalars or arrays. Raises :class:`DomainError` for NaN or
    ``x < -1/e``; ``W0(inf) = inf``.
    """
    scalar = np.ndim(x) == 0
    x = np.array(x, dtype=float, ndmin=1)
    if np.isnan(x).any():
        raise DomainError("lambert_w0 is undefined for NaN")
    # -1/e is not representable; accept the nearest double and clamp
    if (x < -_INV_E * (1.0 + 4e-16)).any():
        raise DomainError(f"lambert_w0 requires x >= -1/e, got min {x.min()!r}")
    x = np.maximum(x, -_INV_E)
    w = np.empty_like(x)
    small = x <= np.e
    if small.any():
        w[small] = _halley_direct(x[small])
    big = ~small
    if big.any():
        xb = x[big]
        wb = np.full_like(xb, np.inf)
        fin = np.isfinite(xb)
        wb[fin] = _halley_log(np.log(xb[fin]))
        w[big] = wb
    return _return(w, scalar)


def lambert_w0_of_log(log_x):
    """``W0(exp(log_x))`` evaluated without forming ``exp(log_x)``.

    For ``log_x >= 1`` this solves ``w + log(w) = log_x`` directly; below that
    the exponential is harmless and :func:`lambert_w0` is used.
    """
    scalar = np.ndim(log_x) == 0
    L = np.array(log_x, dtype=float, ndmin=1)
    if np.isnan(L).any():
        raise DomainError("lambert_w0_of_log is undefined for NaN")
    w = np.empty_like(L)
    big = L >= 1.0
    if big.any():
        Lb = L[big]
        wb = np.full_like(Lb, np.inf)
        fin = np.isfinite(Lb)
        wb[fin] = _halley_log(Lb[fin])
        w[big] = wb
    if (~big).any():
        w[~big] = lambert_w0(np.exp(L[~big]))
    return _return(w, scalar)


def lambert_w0_exp(log_x, threshold=300.0):
    """``W0(exp(log_x))`` routing through the log form once ``log_x > threshold``."""
    scalar = np.ndim(log_x) == 0
    L = np.array(log_x, dtype=float, ndmin=1)
    w = np.empty_like(L)
    big = L > threshold
    if big.any():
        w[big] = lambert_w0_of_log(L[big])
    if (~big).any():
        w[~big] = lambert_w0(np.exp(L[~big]))
    return _return(w, scalar)
