"""Scaling iterations for the optimal transport linear model.

Each iteration alternates a source update and a target update of the implicit
plan ``Q = diag(u2) K diag(u1)``:

1. ``w`` takes one majorization-minimization step of the penalized
   column-span prox, with ``K u1`` as effective target;
2. ``u2 = X w / (K u1)`` so that ``Q 1 = X w``;
3. ``v2 = prox_L(K^T u2 | y)``;
4. ``u1 = v2 / (K^T u2)`` so that ``Q^T 1 = v2``.
"""
from dataclasses import dataclass, replace

import numpy as np

from .core import (Datafit, Dictionary, GibbsKernel, IterationRecord, OtlmConfig, ScalingState, Solution,
                   Target)
from .exceptions import DimensionMismatch, Infeasible, InvalidInputError, NumericalOverflow
from .mm import build_normalized_weights, mm_step, penalty_value
from .prox import datafit_value, prox

SCALING_MIN = 1e-290
SCALING_MAX = 1e290


@dataclass(frozen=True)
class StepInfo:
    """Intermediate products of one scaling iteration.

    ``Ku1`` is ``K u1`` before the step (the MM effective target), ``Xw`` the
    new source distribution, ``KTu2`` the product ``K^T u2`` fed to the prox,
    ``v2`` its output and ``Ku1_next`` is ``K u1`` after the step.
    """

    w_prev: np.ndarray
    Ku1: np.ndarray
    Xw: np.ndarray
    KTu2: np.ndarray
    v2: np.ndarray
    Ku1_next: np.ndarray


def _coerce(kernel, X, y):
    if not isinstance(kernel, GibbsKernel):
        raise InvalidInputError("kernel must be a GibbsKernel")
    X = X if isinstance(X, Dictionary) else Dictionary(X)
    y = y if isinstance(y, Target) else Target(y)
    n_rows, n_cols = kernel.shape
    if n_rows != n_cols:
        raise DimensionMismatch(f"kernel must be square, got {kernel.shape}")
    if X.n_samples != n_rows or len(y) != n_cols:
        raise DimensionMismatch(
            f"kernel {kernel.shape}, dictionary with {X.n_samples} rows and target of length {len(y)} disagree"
        )
    return X, y


def initial_weights(X, y, w0=None, w_min_rel=1e-12):
    """Uniform ``w_j = sum(y) / sum_j x_j`` unless ``w0`` is given; floored at ``w_min_rel`` times that ratio."""
    X = X if isinstance(X, Dictionary) else Dictionary(X)
    y = y.values if isinstance(y, Target) else np.asarray(y, dtype=float)
    ratio = y.sum() / X.col_sums.sum()
    if w0 is None:
        return np.full(X.n_atoms, ratio)
    w0 = np.array(w0, dtype=float)
    if w0.shape != (X.n_atoms,):
        raise DimensionMismatch(f"w0{w0.shape} does not match {X.n_atoms} atoms")
    if not np.isfinite(w0).all() or (w0 < 0).any():
        raise InvalidInputError("w0 must be finite and non-negative")
    return np.maximum(w0, w_min_rel * ratio)


def _safe_div(num, den):
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _check_scalings(u, name):
    pos = u[u > 0]
    if not np.isfinite(u).all() or (pos < SCALING_MIN).any() or (pos > SCALING_MAX).any():
        raise NumericalOverflow(
            f"scaling {name} left [{SCALING_MIN:g}, {SCALING_MAX:g}]; epsilon is likely too small "
            "for the cost scale (increase epsilon or rescale the cost)"
        )


def scaling_step(kernel, X, y, cfg, state, Ku1=None):
    """Advance ``state`` by one iteration in place and return a :class:`StepInfo`.

    ``Ku1`` may pass in ``K @ state.u1`` from the previous step to save a product.
    """
    if Ku1 is None:
        Ku1 = kernel.dot(state.u1)
    w_prev = state.w
    Xw_prev = X.dot(w_prev)
    if ((Ku1 <= 0) & (Xw_prev > 0)).any():
        i = int(np.flatnonzero((Ku1 <= 0) & (Xw_prev > 0))[0])
        raise Infeasible(f"K u1 vanishes on row {i} where the model X w is positive")
    w = w_prev
    for _ in range(cfg.inner_iters):
        ws = build_normalized_weights(X, w)
        w = mm_step(ws, Ku1, cfg.penalty, cfg.epsilon, cfg.alpha, cfg.beta)
    if not np.isfinite(w).all():
        raise NumericalOverflow("weights became non-finite; epsilon is likely too small for the data scale")
    Xw = X.dot(w)
    u2 = _safe_div(Xw, Ku1)
    _check_scalings(u2, "u2")
    KTu2 = kernel.tdot(u2)
    v2 = prox(cfg.datafit, KTu2, y.values, cfg.lam, cfg.epsilon)
    unreachable = (KTu2 <= 0) & (v2 > 0)
    if unreachable.any():
        j = int(np.flatnonzero(unreachable)[0])
        raise Infeasible(f"target column {j} needs mass but receives no transport (K^T u2 = 0)")
    u1 = _safe_div(v2, KTu2)
    _check_scalings(u1, "u1")
    state.w, state.u2, state.u1 = w, u2, u1
    state.iter += 1
    return StepInfo(w_prev, Ku1, Xw, KTu2, v2, kernel.dot(u1))


def _xlogy(x, y):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(y), 0.0)


def objective_surrogate(kernel, cfg, state, y, Ku1=None):
    """``eps KL(Q || K) + alpha R(w) + lam L(Q^T 1 | y)`` evaluated in O(nnz(K)).

    ``KL(Q || K) = sum_i (Q1)_i log u2_i + sum_j (Q^T1)_j log u1_j - sum Q + sum K``.
    The equality datafit contributes 0 since its target marginal is matched by construction.
    """
    if Ku1 is None:
        Ku1 = kernel.dot(state.u1)
    row = state.u2 * Ku1
    col = state.u1 * kernel.tdot(state.u2)
    kl = _xlogy(row, state.u2).sum() + _xlogy(col, state.u1).sum() - row.sum() + kernel.row_sums.sum()
    y = y.values if isinstance(y, Target) else y
    fit = 0.0 if cfg.datafit is Datafit.EQUALITY else datafit_value(cfg.datafit, col, y, cfg.lam)
    return float(cfg.epsilon * kl + penalty_value(state.w, cfg.penalty, cfg.alpha, cfg.beta) + fit)


def _record(kernel, y, cfg, state, info):
    w_scale = np.max(np.abs(state.w))
    w_change = float(np.max(np.abs(state.w - info.w_prev)) / w_scale) if w_scale > 0 else 0.0
    src_norm = np.sum(np.abs(info.Xw))
    source_residual = float(np.sum(np.abs(state.u2 * info.Ku1_next - info.Xw)) / src_norm)
    y_norm = np.sum(y.values)
    col = state.u1 * info.KTu2
    return IterationRecord(
        iter=state.iter,
        w_rel_change=w_change,
        source_residual=source_residual,
        target_prox_residual=float(np.sum(np.abs(col - info.v2)) / y_norm),
        target_misfit=float(np.sum(np.abs(col - y.values)) / y_norm),
        objective_surrogate=objective_surrogate(kernel, cfg, state, y, info.Ku1_next),
    )


def solve(kernel, X, y, cfg, w0=None):
    """Fit the transport linear model by scaling iterations.

    Parameters
    ----------
    kernel : GibbsKernel
        Square sparse kernel ``exp(-C / eps)``.
    X : Dictionary or array_like
        Non-negative dictionary with ``N`` rows.
    y : Target or array_like
        Non-negative target of length ``N``.
    cfg : OtlmConfig
    w0 : array_like, optional
        Initial weights; defaults to the uniform total-mass ratio.

    Returns
    -------
    Solution
        Converged when both the ``w`` relative change and the source
        residual ``|Q1 - Xw|_1 / |Xw|_1`` drop to ``cfg.tol`` at a check.
        Records are taken every ``cfg.check_every`` iterations and at the last one.
    """
    if not isinstance(cfg, OtlmConfig):
        raise InvalidInputError("cfg must be an OtlmConfig")
    X, y = _coerce(kernel, X, y)
    n = kernel.shape[0]
    state = ScalingState(u1=np.ones(n), u2=np.ones(n), w=initial_weights(X, y, w0, cfg.w_min_rel))
    records = []
    converged = False
    Ku1 = None
    while state.iter < cfg.max_iters:
        info = scaling_step(kernel, X, y, cfg, state, Ku1)
        Ku1 = info.Ku1_next
        if state.iter % cfg.check_every == 0 or state.iter == cfg.max_iters:
            rec = _record(kernel, y, cfg, state, info)
            records.append(rec)
            if rec.w_rel_change <= cfg.tol and rec.source_residual <= cfg.tol:
                converged = True
                break
    return Solution(w=state.w, u1=state.u1, u2=state.u2, diagnostics=tuple(records),
                    converged=converged, iters_used=state.iter)


def solve_balanced(kernel, X, y, cfg, w0=None):
    """:func:`solve` with the target marginal held exactly at ``y``."""
    return solve(kernel, X, y, replace(cfg, datafit=Datafit.EQUALITY), w0)


def diagnostics_stream(solution):
    """Iteration records of a solution in iteration order."""
    yield from solution.diagnostics
