"""Majorization-minimization for the penalized non-negative column-span prox.

The prox of the source marginal term solves

    min_{w >= 0}  V(w) = alpha R(w) + eps KL(X w || y)

Jensen's inequality with the normalized weights ``Z_ij = X_ij w'_j / (X w')_i``
gives a majorant ``G(w, w')`` that is separable in ``w``. Its minimizer solves
``log w_j + gamma_j w_j = nu_j`` coordinate-wise, where with
``S_j = sum_i X_ij log(Z_ij y_i / X_ij)`` and ``x_j = sum_i X_ij``:

    none        w_j = exp(S_j / x_j)
    l1          w_j = exp(S_j / x_j - alpha / (eps x_j))
    l2sq        w_j = W0(gamma_j exp(S_j / x_j)) / gamma_j,      gamma_j = alpha / (eps x_j)
    elasticnet  w_j = W0(gamma_j exp(nu_j)) / gamma_j,           gamma_j = beta / (eps x_j),
                                                                 nu_j = S_j / x_j - alpha / (eps x_j)

Since ``log(Z_ij y_i / X_ij) = log w'_j + log(y_i / (X w')_i)``, ``S_j`` needs only
``X w'`` and one product with ``X^T``; ``Z`` itself is never formed in the step.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .core import Dictionary, Penalty, parse_penalty
from .exceptions import DegenerateRow, DimensionMismatch, InvalidInputError, NonPositiveEffTarget
from .lambertw import lambert_w0_exp


def _as_dictionary(X):
    return X if isinstance(X, Dictionary) else Dictionary(X)


@dataclass(frozen=True)
class MMWorkspace:
    X: Dictionary
    w_prev: np.ndarray
    Xw_prev: np.ndarray
    _Z: list = field(default_factory=list, repr=False, compare=False)

    @property
    def col_sums(self):
        return self.X.col_sums

    @property
    def Z(self):
        """Normalized weights on the sparsity pattern of ``X`` (built lazily)."""
        if not self._Z:
            self._Z.append(_normalized_weights(self.X, self.w_prev, self.Xw_prev))
        return self._Z[0]

    def log_sums(self, y_eff):
        """``S_j = sum_i X_ij log(Z_ij y_i / X_ij)``; equals ``-d_j``."""
        y_eff = np.asarray(y_eff, dtype=float)
        if y_eff.shape != (self.X.n_samples,):
            raise DimensionMismatch(f"y_eff{y_eff.shape} does not match X with {self.X.n_samples} rows")
        support = self.X.row_support
        if (y_eff[support] <= 0).any():
            i = int(np.flatnonzero(support & (y_eff <= 0))[0])
            raise NonPositiveEffTarget(f"effective target is {y_eff[i]!r} on supported row {i}")
        r = np.zeros_like(y_eff)
        r[support] = np.log(y_eff[support] / self.Xw_prev[support])
        with np.errstate(divide="ignore"):
            logw = np.log(self.w_prev)
        return self.X.col_sums * logw + self.X.tdot(r)

    def d(self, y_eff):
        return -self.log_sums(y_eff)


def _normalized_weights(X, w, Xw):
    inv = np.zeros_like(Xw)
    np.divide(1.0, Xw, out=inv, where=Xw > 0)
    if X.is_sparse:
        Z = X.values.multiply(w[None, :]).tocsr()
        Z = sparse.diags(inv) @ Z
        return Z.tocsr()
    return X.values * w[None, :] * inv[:, None]


def build_normalized_weights(X, w_prev):
    """Workspace for one MM step around ``w_prev``.

    Raises :class:`DegenerateRow` if ``X w_prev`` vanishes on a row where ``X``
    has support, which happens when every atom covering that row has weight 0.
    """
    X = _as_dictionary(X)
    w_prev = np.asarray(w_prev, dtype=float)
    if w_prev.shape != (X.n_atoms,):
        raise DimensionMismatch(f"w{w_prev.shape} does not match {X.n_atoms} atoms")
    if (w_prev < 0).any() or not np.isfinite(w_prev).all():
        raise InvalidInputError("weights must be finite and non-negative")
    Xw = X.dot(w_prev)
    bad = X.row_support & ~(Xw > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateRow(f"X w is zero on supported row {i}; some needed atoms have zero weight")
    return MMWorkspace(X, w_prev, Xw)


def _lambert_solve(log_gamma, nu):
    """Solve ``log w + gamma w = nu`` for ``w > 0``."""
    W = lambert_w0_exp(log_gamma + nu)
    # W e^W = gamma e^nu  =>  W / gamma = exp(nu - W); use the quotient only
    # when W is large enough for the subtraction to lose digits
    with np.errstate(over="ignore"):
        return np.where(W > 1.0, W / np.exp(log_gamma), np.exp(nu - W))


def mm_step(ws, y_eff, penalty=Penalty.NONE, eps=1.0, alpha=0.0, beta=0.0):
    """Minimize the majorant ``G(., w_prev)`` in closed form."""
    kind = parse_penalty(penalty)
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    x = ws.col_sums
    with np.errstate(invalid="ignore"):
        nu = ws.log_sums(y_eff) / x
    if kind is Penalty.NONE or (kind is Penalty.L2SQ and alpha == 0):
        return np.exp(nu)
    if kind is Penalty.L1:
        return np.exp(nu - alpha / (eps * x))
    if kind is Penalty.L2SQ:
        return _lambert_solve(np.log(alpha / (eps * x)), nu)
    if kind is Penalty.ELASTICNET:
        return _lambert_solve(np.log(beta / (eps * x)), nu - alpha / (eps * x))
    raise InvalidInputError(f"unknown penalty {penalty!r}")


def mm_prox(X, y_eff, w0, penalty=Penalty.NONE, eps=1.0, alpha=0.0, beta=0.0, n_iter=1):
    """Run ``n_iter`` MM steps from ``w0`` (one step per scaling iteration by default)."""
    X = _as_dictionary(X)
    w = np.asarray(w0, dtype=float)
    for _ in range(n_iter):
        w = mm_step(build_normalized_weights(X, w), y_eff, penalty, eps, alpha, beta)
    return w


def penalty_value(w, penalty=Penalty.NONE, alpha=0.0, beta=0.0):
    """``alpha R(w)`` (for the elastic net ``alpha |w|_1 + beta/2 |w|^2``)."""
    kind = parse_penalty(penalty)
    w = np.asarray(w, dtype=float)
    if kind is Penalty.NONE:
        return 0.0
    if kind is Penalty.L1:
        return alpha * float(np.sum(w))
    if kind is Penalty.L2SQ:
        return 0.5 * alpha * float(np.dot(w, w))
    return alpha * float(np.sum(w)) + 0.5 * beta * float(np.dot(w, w))


def penalty_grad(w, penalty=Penalty.NONE, alpha=0.0, beta=0.0):
    kind = parse_penalty(penalty)
    w = np.asarray(w, dtype=float)
    if kind is Penalty.NONE:
        return np.zeros_like(w)
    if kind is Penalty.L1:
        return np.full_like(w, alpha)
    if kind is Penalty.L2SQ:
        return alpha * w
    return alpha + beta * w


def _kl_terms(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(a > 0, a * np.log(a / b), 0.0)
    return t - a + b


def mm_objective(w, X, y_eff, penalty=Penalty.NONE, eps=1.0, alpha=0.0, beta=0.0):
    """``V(w) = alpha R(w) + eps KL(X w || y_eff)``."""
    X = _as_dictionary(X)
    w = np.asarray(w, dtype=float)
    Xw = X.dot(w)
    return penalty_value(w, penalty, alpha, beta) + eps * float(np.sum(_kl_terms(Xw, np.asarray(y_eff, float))))


def _stored_entries(X):
    if X.is_sparse:
        coo = X.values.tocoo()
        return coo.row, coo.col, coo.data
    rows, cols = np.nonzero(X.values)
    return rows, cols, X.values[rows, cols]


def mm_majorant(w, w_prev, X, y_eff, penalty=Penalty.NONE, eps=1.0, alpha=0.0, beta=0.0):
    """Jensen majorant ``G(w, w_prev)``, including the penalty.

    ``G(w, w) = V(w)`` and ``G(w, w') >= V(w)``. A weight that is zero in
    ``w_prev`` but positive in ``w`` makes ``G`` infinite.
    """
    X = _as_dictionary(X)
    w = np.asarray(w, dtype=float)
    w_prev = np.asarray(w_prev, dtype=float)
    y = np.asarray(y_eff, dtype=float)
    ws = build_normalized_weights(X, w_prev)
    if ((w_prev == 0) & (w > 0)).any():
        return np.inf
    rows, cols, vals = _stored_entries(X)
    live = w_prev[cols] > 0
    rows, cols, vals = rows[live], cols[live], vals[live]
    Z = vals * w_prev[cols] / ws.Xw_prev[rows]
    # X_ij w_j / Z_ij, written without dividing by a possibly tiny Z
    A = ws.Xw_prev[rows] * (w[cols] / w_prev[cols])
    total = np.sum(Z * _kl_terms(A, y[rows]))
    # rows with no support carry KL(0 || y_i) = y_i in V
    total += np.sum(y[~X.row_support])
    # rows whose atoms all have w' = 0 are excluded by build_normalized_weights
    return eps * float(total) + penalty_value(w, penalty, alpha, beta)
