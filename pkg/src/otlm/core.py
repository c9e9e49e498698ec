"""Shared domain types and the implicit transport-plan representation.

The plan is never stored inside the solver. With the Gibbs kernel ``K`` and the
two scaling vectors it is ``Q = diag(u2) K diag(u1)``, so that

    Q 1   = u2 * (K u1)      (source marginal, equals X w at convergence)
    Q^T 1 = u1 * (K^T u2)    (target marginal)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import sparse

from .exceptions import DimensionMismatch, EmptyRowError, InvalidInputError


def _as_vector(values, name):
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {v.shape}")
    if np.isnan(v).any():
        raise InvalidInputError(f"{name} contains NaN")
    if np.isinf(v).any():
        raise InvalidInputError(f"{name} contains infinite values")
    if (v < 0).any():
        raise InvalidInputError(f"{name} contains negative entries")
    return v


def _check_sparse_data(data, name):
    if np.isnan(data).any():
        raise InvalidInputError(f"{name} contains NaN")
    if np.isinf(data).any():
        raise InvalidInputError(f"{name} stores infinite values; leave untransportable pairs absent")
    if (data < 0).any():
        raise InvalidInputError(f"{name} contains negative entries")


# ---------------------------------------------------------------------------
# Cost and kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseCostMatrix:
    """Pairwise transport costs; absent entries are untransportable (cost = inf).

    ``matrix`` is CSR and may hold explicit zeros (e.g. a zero diagonal), which
    are stored entries, not absences.
    """

    matrix: sparse.csr_matrix

    def __post_init__(self):
        m = self.matrix
        if not sparse.issparse(m):
            raise InvalidInputError("cost matrix must be a scipy sparse matrix")
        m = sparse.csr_matrix(m, dtype=float)
        m.sum_duplicates()
        m.sort_indices()
        _check_sparse_data(m.data, "cost matrix")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_dense(cls, C):
        """Build from a dense array where ``np.inf`` marks absent pairs."""
        C = np.asarray(C, dtype=float)
        if C.ndim != 2:
            raise InvalidInputError("cost matrix must be 2-D")
        if np.isnan(C).any():
            raise InvalidInputError("cost matrix contains NaN")
        rows, cols = np.nonzero(np.isfinite(C))
        return cls.from_coo(rows, cols, C[rows, cols], C.shape)

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        m = sparse.coo_matrix(
            (np.asarray(values, dtype=float), (np.asarray(rows), np.asarray(cols))), shape=shape
        ).tocsr()
        return cls(m)

    @property
    def n_rows(self):
        return self.matrix.shape[0]

    @property
    def n_cols(self):
        return self.matrix.shape[1]

    @property
    def nnz(self):
        return self.matrix.nnz

    def toarray(self):
        """Dense view with ``inf`` where no entry is stored."""
        out = np.full(self.matrix.shape, np.inf)
        coo = self.matrix.tocoo()
        out[coo.row, coo.col] = coo.data
        return out


@dataclass(frozen=True)
class GibbsKernel:
    """Sparse Gibbs kernel ``K = exp(-C / epsilon)`` with a cached transpose.

    Both orientations are multiplied in every iteration, so the transpose is
    materialized once in CSR form.
    """

    matrix: sparse.csr_matrix
    epsilon: float
    transpose: sparse.csr_matrix = field(init=False, repr=False)
    row_sums: np.ndarray = field(init=False, repr=False)
    col_sums: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")
        K = sparse.csr_matrix(self.matrix, dtype=float)
        K.sum_duplicates()
        K.eliminate_zeros()
        K.sort_indices()
        _check_sparse_data(K.data, "kernel")
        if (K.data > 1.0).any():
            raise InvalidInputError("kernel entries must lie in (0, 1]")
        n_rows, n_cols = K.shape
        row_nnz = np.diff(K.indptr)
        KT = K.T.tocsr()
        KT.sort_indices()
        col_nnz = np.diff(KT.indptr)
        if (row_nnz == 0).any():
            i = int(np.flatnonzero(row_nnz == 0)[0])
            raise EmptyRowError(
                f"kernel row {i} has no stored entries (epsilon={self.epsilon:g} may be too small for the cost scale)"
            )
        if (col_nnz == 0).any():
            j = int(np.flatnonzero(col_nnz == 0)[0])
            raise EmptyRowError(
                f"kernel column {j} has no stored entries (epsilon={self.epsilon:g} may be too small for the cost scale)"
            )
        object.__setattr__(self, "matrix", K)
        object.__setattr__(self, "transpose", KT)
        object.__setattr__(self, "row_sums", np.asarray(K.sum(axis=1)).ravel())
        object.__setattr__(self, "col_sums", np.asarray(KT.sum(axis=1)).ravel())

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self):
        return self.matrix.nnz

    def dot(self, u):
        """``K @ u``."""
        return self.matrix @ u

    def tdot(self, v):
        """``K.T @ v``."""
        return self.transpose @ v

    def toarray(self):
        return self.matrix.toarray()


# ---------------------------------------------------------------------------
# Regression data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dictionary:
    """Non-negative basis matrix ``X`` of shape (N, M), dense or sparse."""

    values: np.ndarray | sparse.csr_matrix
    labels: tuple = None
    col_sums: np.ndarray = field(init=False, repr=False)
    row_support: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = self.values
        if sparse.issparse(X):
            X = sparse.csr_matrix(X, dtype=float)
            X.sum_duplicates()
            X.eliminate_zeros()
            X.sort_indices()
            _check_sparse_data(X.data, "dictionary")
            col_sums = np.asarray(X.sum(axis=0)).ravel()
            row_support = np.diff(X.indptr) > 0
        else:
            X = np.asarray(X, dtype=float)
            if X.ndim != 2:
                raise InvalidInputError(f"dictionary must be 2-D, got shape {X.shape}")
            if not np.isfinite(X).all():
                raise InvalidInputError("dictionary contains NaN or infinite values")
            if (X < 0).any():
                raise InvalidInputError("dictionary contains negative entries")
            col_sums = X.sum(axis=0)
            row_support = (X > 0).any(axis=1)
        if X.shape[1] == 0:
            raise InvalidInputError("dictionary has no columns")
        if (col_sums <= 0).any():
            j = int(np.flatnonzero(col_sums <= 0)[0])
            raise InvalidInputError(f"dictionary column {j} sums to zero")
        labels = self.labels
        if labels is None:
            labels = tuple(f"atom{j}" for j in range(X.shape[1]))
        elif len(labels) != X.shape[1]:
            raise DimensionMismatch(f"{len(labels)} labels for {X.shape[1]} atoms")
        object.__setattr__(self, "values", X)
        object.__setattr__(self, "labels", tuple(labels))
        object.__setattr__(self, "col_sums", col_sums)
        object.__setattr__(self, "row_support", row_support)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_atoms(self):
        return self.values.shape[1]

    @property
    def is_sparse(self):
        return sparse.issparse(self.values)

    def dot(self, w):
        return self.values @ w

    def tdot(self, v):
        return self.values.T @ v

    def toarray(self):
        return self.values.toarray() if self.is_sparse else self.values


@dataclass(frozen=True)
class Target:
    values: np.ndarray

    def __post_init__(self):
        y = _as_vector(self.values, "target")
        if not y.sum() > 0:
            raise InvalidInputError("target has zero total mass")
        object.__setattr__(self, "values", y)

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class Datafit(str, Enum):
    EQUALITY = "equality"
    KL = "kl"
    TV = "tv"
    L2 = "l2"
    POISSON = "poisson"


class Penalty(str, Enum):
    NONE = "none"
    L1 = "l1"
    L2SQ = "l2sq"
    ELASTICNET = "elasticnet"


_PENALTY_ALIASES = {"ridge": "l2sq", "l2": "l2sq", "lasso": "l1", "enet": "elasticnet", "elastic_net": "elasticnet"}
_DATAFIT_ALIASES = {"eq": "equality", "balanced": "equality", "poiss": "poisson"}


def parse_datafit(name):
    if isinstance(name, Datafit):
        return name
    key = str(name).strip().lower()
    return Datafit(_DATAFIT_ALIASES.get(key, key))


def parse_penalty(name):
    if isinstance(name, Penalty):
        return name
    key = "none" if name is None else str(name).strip().lower()
    return Penalty(_PENALTY_ALIASES.get(key, key))


@dataclass(frozen=True)
class OtlmConfig:
    """Regularization parameters and convergence policy.

    ``lam`` is the datafit weight (ignored for the equality datafit), ``alpha``
    the penalty weight, ``beta`` the quadratic weight of the elastic net.
    ``w_min_rel`` floors initial weights relative to the total-mass ratio,
    since a weight that reaches exactly zero stays there under multiplicative
    updates.
    """

    epsilon: float
    lam: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    datafit: Datafit = Datafit.EQUALITY
    penalty: Penalty = Penalty.NONE
    max_iters: int = 10_000
    tol: float = 1e-8
    check_every: int = 10
    inner_iters: int = 1
    w_min_rel: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "datafit", parse_datafit(self.datafit))
        object.__setattr__(self, "penalty", parse_penalty(self.penalty))
        for name in ("epsilon", "lam", "alpha", "beta", "tol", "w_min_rel"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise InvalidInputError(f"{name} must be finite, got {v}")
        if not self.epsilon > 0:
            raise InvalidInputError(f"epsilon must be positive, got {self.epsilon}")
        if self.lam < 0 or self.alpha < 0 or self.beta < 0:
            raise InvalidInputError("lam, alpha and beta must be non-negative")
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        if self.max_iters < 1 or self.check_every < 1 or self.inner_iters < 1:
            raise InvalidInputError("max_iters, check_every and inner_iters must be >= 1")
        if self.penalty is Penalty.ELASTICNET and not (self.alpha > 0 and self.beta > 0):
            raise InvalidInputError("elastic net requires alpha > 0 and beta > 0")

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "alpha": self.alpha,
            "beta": self.beta,
            "datafit": self.datafit.value,
            "penalty": self.penalty.value,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "check_every": self.check_every,
            "inner_iters": self.inner_iters,
            "w_min_rel": self.w_min_rel,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


# ---------------------------------------------------------------------------
# Solver state and results
# ---------------------------------------------------------------------------

@dataclass
class ScalingState:
    """Mutable iterate owned by a single solver run."""

    u1: np.ndarray
    u2: np.ndarray
    w: np.ndarray
    iter: int = 0


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    w_rel_change: float
    source_residual: float
    target_prox_residual: float
    target_misfit: float
    objective_surrogate: float

    def to_dict(self):
        return {
            "iter": self.iter,
            "w_rel_change": self.w_rel_change,
            "source_residual": self.source_residual,
            "target_prox_residual": self.target_prox_residual,
            "target_misfit": self.target_misfit,
            "objective_surrogate": self.objective_surrogate,
        }


@dataclass(frozen=True)
class Solution:
    w: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    diagnostics: tuple
    converged: bool
    iters_used: int

    def plan(self, kernel):
        return materialize_plan(self, kernel)


# ---------------------------------------------------------------------------
# Implicit plan
# ---------------------------------------------------------------------------

def _check_dims(state, kernel):
    n_rows, n_cols = kernel.shape
    if np.shape(state.u2) != (n_rows,) or np.shape(state.u1) != (n_cols,):
        raise DimensionMismatch(
            f"scalings u1{np.shape(state.u1)}, u2{np.shape(state.u2)} do not match kernel {kernel.shape}"
        )


def plan_row_marginal(state, kernel):
    """Source marginal ``Q 1 = u2 * (K u1)`` without forming ``Q``."""
    _check_dims(state, kernel)
    return state.u2 * kernel.dot(state.u1)


def plan_col_marginal(state, kernel):
    """Target marginal ``Q^T 1 = u1 * (K^T u2)`` without forming ``Q``."""
    _check_dims(state, kernel)
    return state.u1 * kernel.tdot(state.u2)


def materialize_plan(state, kernel):
    """Explicit sparse plan ``Q_ij = u2_i K_ij u1_j`` on the kernel pattern.

    Not used inside the solver loop; memory is O(nnz(K)).
    """
    _check_dims(state, kernel)
    K = kernel.matrix
    rows = np.repeat(np.arange(K.shape[0]), np.diff(K.indptr))
    data = state.u2[rows] * (K.data * state.u1[K.indices])
    return sparse.csr_matrix((data, K.indices.copy(), K.indptr.copy()), shape=K.shape)
