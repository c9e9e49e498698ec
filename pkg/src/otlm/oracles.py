"""Independent numeric references used to validate the closed forms and the solver.

Nothing here calls the Lambert W function or the closed-form operators under
test: prox values come from bisection on a stationarity function, majorant
minimizers from bisection on an explicitly formed majorant gradient, and the
balanced plan from a plain two-marginal Sinkhorn loop on a dense kernel.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .core import Datafit, GibbsKernel, Penalty, parse_datafit, parse_penalty
from .exceptions import BracketFailure, DimensionMismatch, InvalidInputError, NonConvergence


@dataclass(frozen=True)
class OracleConfig:
    """Bisection policy: bracket grows by ``expand`` in log space up to ``max_expand`` times."""

    expand: float = 2.0
    max_expand: int = 200
    max_steps: int = 400

    def __post_init__(self):
        if not self.expand > 1 or self.max_expand < 1 or self.max_steps < 1:
            raise InvalidInputError("invalid oracle configuration")


DEFAULT_ORACLE = OracleConfig()


def _exp(l):
    return math.exp(l) if l < 709.0 else math.inf


def _bisect_log(g, center, cfg=DEFAULT_ORACLE):
    """Root of an increasing ``g(l)`` on the real line, to full double precision."""
    lo, hi = center - 1.0, center + 1.0
    step = 1.0
    for _ in range(cfg.max_expand):
        if g(lo) < 0:
            break
        step *= cfg.expand
        lo = center - step
    else:
        raise BracketFailure("could not find a lower bracket")
    step = 1.0
    for _ in range(cfg.max_expand):
        if g(hi) > 0:
            break
        step *= cfg.expand
        hi = center + step
    else:
        raise BracketFailure("could not find an upper bracket")
    for _ in range(cfg.max_steps):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid)
        if gm == 0:
            return mid
        if gm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def prox_oracle_1d(datafit, s, y, lam, eps, cfg=DEFAULT_ORACLE):
    """Minimizer over ``q > 0`` of ``lam L(q|y) + eps (q log(q/s) - q + s)``.

    Bisection in ``l = log q`` on ``eps (l - log s) + lam dL/dq(e^l)``, which is
    increasing for every datafit (a subgradient with sign 0 at the kink for TV).
    """
    kind = parse_datafit(datafit)
    s, y = float(s), float(y)
    if kind is Datafit.EQUALITY:
        return y
    if not s > 0:
        raise InvalidInputError("oracle needs s > 0")
    if lam == 0:
        return s
    log_s = math.log(s)

    if kind is Datafit.KL:
        if not y > 0:
            return 0.0
        log_y = math.log(y)

        def dL(l):
            return l - log_y
    elif kind is Datafit.TV:
        def dL(l):
            q = _exp(l)
            return (q > y) - (q < y)
    elif kind is Datafit.L2:
        def dL(l):
            return _exp(l) - y
    elif kind is Datafit.POISSON:
        def dL(l):
            return 1.0 - y * _exp(-l) if y > 0 else 1.0
    else:
        raise InvalidInputError(f"unknown datafit {datafit!r}")

    def g(l):
        return eps * (l - log_s) + lam * dL(l)

    return math.exp(_bisect_log(g, log_s, cfg))


def prox_oracle(datafit, s, y, lam, eps, cfg=DEFAULT_ORACLE):
    """Elementwise :func:`prox_oracle_1d` over vectors."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if s.shape != y.shape:
        raise DimensionMismatch(f"s{s.shape} and y{y.shape} differ in shape")
    return np.array([prox_oracle_1d(datafit, si, yi, lam, eps, cfg) for si, yi in zip(s, y)])


def _dense(X):
    if hasattr(X, "toarray"):
        return np.asarray(X.toarray(), dtype=float)
    return np.asarray(X, dtype=float)


def mm_majorant_oracle(X, y_eff, w_prev, penalty=Penalty.NONE, eps=1.0, alpha=0.0, beta=0.0, cfg=DEFAULT_ORACLE):
    """Coordinate-wise minimizer of the Jensen majorant around ``w_prev``.

    With ``Z_ij = X_ij w'_j / (X w')_i`` formed explicitly, the majorant's
    derivative in ``w_j`` is ``eps sum_i X_ij log(X_ij w_j / (Z_ij y_i)) + dR_j(w_j)``,
    increasing in ``w_j``; each coordinate is found by bisection in ``log w_j``.
    """
    kind = parse_penalty(penalty)
    X = _dense(X)
    y = np.asarray(y_eff, dtype=float)
    w_prev = np.asarray(w_prev, dtype=float)
    Xw = X @ w_prev
    out = np.zeros_like(w_prev)
    for j in range(X.shape[1]):
        if w_prev[j] == 0:
            continue
        rows = np.flatnonzero(X[:, j] > 0)
        xij = X[rows, j]
        zij = xij * w_prev[j] / Xw[rows]
        const = float(np.sum(xij * np.log(xij / (zij * y[rows]))))
        xj = float(xij.sum())

        def g(l, xj=xj, const=const):
            w = _exp(l)
            if kind is Penalty.NONE:
                dr = 0.0
            elif kind is Penalty.L1:
                dr = alpha
            elif kind is Penalty.L2SQ:
                dr = alpha * w
            else:
                dr = alpha + beta * w
            return eps * (xj * l + const) + dr

        out[j] = math.exp(_bisect_log(g, math.log(w_prev[j]), cfg))
    return out


def _kernel_array(kernel):
    if isinstance(kernel, GibbsKernel):
        return kernel.toarray()
    if sparse.issparse(kernel):
        return kernel.toarray()
    return np.asarray(kernel, dtype=float)


def sinkhorn_reference(kernel, a, b, tol=1e-12, max_iter=100_000):
    """Balanced Sinkhorn scalings ``(u, v)`` with plan ``diag(u) K diag(v)``.

    Iterates ``u = a / (K v)``, ``v = b / (K^T u)`` on a dense kernel until both
    marginal residuals (relative L1) are at most ``tol``.
    """
    K = _kernel_array(kernel)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if K.shape != (len(a), len(b)):
        raise DimensionMismatch(f"kernel {K.shape} does not match marginals ({len(a)}, {len(b)})")
    if abs(a.sum() - b.sum()) > 1e-9 * max(a.sum(), b.sum()):
        raise InvalidInputError(f"marginal masses differ: {a.sum()!r} vs {b.sum()!r}")
    v = np.ones(len(b))
    for _ in range(max_iter):
        u = a / (K @ v)
        v = b / (K.T @ u)
        row_res = np.abs(u * (K @ v) - a).sum() / a.sum()
        if row_res <= tol:
            return u, v
    raise NonConvergence(f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations")


def baseline_nn_regression(X, y, loss="l2", iters=20_000, penalty=Penalty.NONE, alpha=0.0, lam=1.0, w0=None):
    """Per-sample non-negative regression: the transport model with transport removed.

    Minimizes ``lam L(Xw | y) + alpha R(w)`` over ``w >= 0`` with the same
    conventions as the solver: ``R`` is ``sum(w)`` (``l1``) or ``|w|^2 / 2`` (``l2sq``).

    ``loss="l2"``: ``L = |Xw - y|^2 / 2``, multiplicative update
    ``w <- w * lam X^T y / (lam X^T X w + dR)``.
    ``loss="kl"`` (or ``"poisson"``): ``L = sum(Xw - y log Xw)``, update
    ``w <- w * lam X^T(y / Xw) / (lam x + dR)``.
    Both updates decrease their objective monotonically.
    ``loss="tv"``: ``L = |Xw - y|_1`` with an optional ``l1`` penalty, solved
    exactly as a linear program.
    """
    X = _dense(X)
    y = np.asarray(y, dtype=float)
    loss = str(loss).lower()
    kind = parse_penalty(penalty)
    n, m = X.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"y{y.shape} does not match X{X.shape}")
    if kind is Penalty.ELASTICNET:
        raise InvalidInputError("the baseline supports none, l1 and l2sq penalties")
    if loss == "tv":
        if kind is Penalty.L2SQ:
            raise InvalidInputError("the TV baseline is a linear program and takes no l2sq penalty")
        # min alpha sum(w) + lam sum(t)  s.t.  -t <= Xw - y <= t,  w, t >= 0
        pen = alpha if kind is Penalty.L1 else 0.0
        c = np.concatenate([np.full(m, pen), np.full(n, lam)])
        eye = np.eye(n)
        A = np.block([[X, -eye], [-X, -eye]])
        b = np.concatenate([y, -y])
        res = linprog(c, A_ub=A, b_ub=b, bounds=[(0, None)] * (m + n), method="highs")
        if not res.success:
            raise NonConvergence(f"TV baseline LP failed: {res.message}")
        return np.maximum(res.x[:m], 0.0)

    def dR(w):
        if kind is Penalty.L1:
            return alpha
        if kind is Penalty.L2SQ:
            return alpha * w
        return 0.0

    w = np.full(m, y.sum() / X.sum()) if w0 is None else np.array(w0, dtype=float)
    if loss == "l2":
        XtX, Xty = X.T @ X, X.T @ y
        for _ in range(iters):
            w = w * lam * Xty / (lam * (XtX @ w) + dR(w))
        return w
    if loss in ("kl", "poisson"):
        x = X.sum(axis=0)
        for _ in range(iters):
            w = w * lam * (X.T @ (y / (X @ w))) / (lam * x + dR(w))
        return w
    raise InvalidInputError(f"unknown baseline loss {loss!r}")


def baseline_objective(X, y, w, loss="l2", penalty=Penalty.NONE, alpha=0.0, lam=1.0):
    """Objective minimized by :func:`baseline_nn_regression`."""
    from .mm import penalty_value

    X = _dense(X)
    Xw = X @ w
    if loss == "tv":
        fit = float(np.abs(Xw - y).sum())
    elif loss in ("kl", "poisson"):
        fit = float(np.sum(Xw - np.where(y > 0, y * np.log(Xw), 0.0)))
    else:
        fit = 0.5 * float(np.sum((Xw - y) ** 2))
    return lam * fit + penalty_value(w, penalty, alpha)


def dense_objective(Q, w, C, X, y, cfg):
    """Terms of the transport linear model objective for a dense plan.

    Returns a dict with ``transport`` (``<C, Q>``), ``entropy``
    (``eps sum(Q log Q - Q) + eps sum(K)``), their sum ``kl`` (which equals
    ``eps KL(Q || K)``), ``penalty``, ``datafit``, ``source_violation``
    (``|Q1 - Xw|_1``) and ``total = kl + penalty + datafit``. Pairs with infinite
    cost must carry zero mass. Intended for ``N <= 64``.
    """
    from .mm import penalty_value
    from .prox import datafit_value

    Q = np.asarray(Q, dtype=float)
    C = np.asarray(C, dtype=float)
    X = _dense(X)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if Q.shape != C.shape or Q.shape[0] > 64:
        raise DimensionMismatch(f"dense objective needs matching plans of size <= 64, got {Q.shape}, {C.shape}")
    finite = np.isfinite(C)
    if (Q[~finite] != 0).any():
        return {"total": np.inf}
    eps = cfg.epsilon
    K = np.where(finite, np.exp(-np.where(finite, C, 0.0) / eps), 0.0)
    transport = float(np.sum(np.where(finite, C * Q, 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        qlogq = np.where(Q > 0, Q * np.log(Q), 0.0)
    entropy = float(eps * (qlogq.sum() - Q.sum() + K.sum()))
    col = Q.sum(axis=0)
    if parse_datafit(cfg.datafit) is Datafit.EQUALITY:
        fit = 0.0 if np.allclose(col, y, rtol=1e-12, atol=0) else np.inf
    else:
        fit = float(datafit_value(cfg.datafit, col, y, cfg.lam))
    pen = penalty_value(w, cfg.penalty, cfg.alpha, cfg.beta)
    kl = transport + entropy
    return {
        "transport": transport,
        "entropy": entropy,
        "kl": kl,
        "penalty": pen,
        "datafit": fit,
        "source_violation": float(np.abs(Q.sum(axis=1) - X @ w).sum()),
        "total": kl + pen + fit,
    }


def _project_rows(Q, target):
    """Rescale rows of ``Q`` so that ``Q 1 = target``."""
    rows = Q.sum(axis=1)
    scale = np.divide(target, rows, out=np.zeros_like(target), where=rows > 0)
    return Q * scale[:, None]


def perturbation_check(Q, w, C, X, y, cfg, n_trials=200, scale=1e-3, seed=0):
    """Largest objective decrease over random feasible perturbations of ``(Q, w)``.

    The base point is first made exactly feasible (rows of ``Q`` rescaled to
    ``X w``). Each trial multiplies the stored entries of ``Q`` and ``w`` by
    ``exp(scale * N(0, 1))`` and rescales rows back onto ``X w``, so the
    perturbed pair stays feasible and non-negative. Returns
    ``max(f(base) - f(perturbed))``; a local minimizer gives a value <= 0 up to rounding.
    """
    rng = np.random.default_rng(seed)
    X = _dense(X)
    Q = np.asarray(Q, dtype=float)
    w = np.asarray(w, dtype=float)
    Q0 = _project_rows(Q, X @ w)
    f0 = dense_objective(Q0, w, C, X, y, cfg)["total"]
    worst = -np.inf
    for _ in range(n_trials):
        w1 = w * np.exp(scale * rng.standard_normal(w.shape))
        Q1 = Q0 * np.exp(scale * rng.standard_normal(Q.shape))
        Q1 = _project_rows(Q1, X @ w1)
        f1 = dense_objective(Q1, w1, C, X, y, cfg)["total"]
        worst = max(worst, f0 - f1)
    return worst
