"""Transport cost families on a 1-D grid, connectivity masking, and the Gibbs kernel."""
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import sparse

from .core import GibbsKernel, SparseCostMatrix
from .exceptions import EmptyRowError, InvalidInputError

# exp(-690) ~ 1e-300 is the smallest kernel value kept
UNDERFLOW_EXPONENT = 690.0


class CostKind(str, Enum):
    ABS_GRID = "abs_grid"
    RELATIVE_QUADRATIC = "relative_quadratic"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ConnectivityMask:
    """Forbid transport out of a contiguous above-threshold run of a reference profile.

    ``A = {j : profile_j >= threshold}`` after scaling the profile to max 1.
    For ``i`` in ``A`` every pair ``(i, j)`` and ``(j, i)`` is removed unless
    ``j`` lies in the same contiguous run of ``A`` as ``i``. Pairs with both
    ends outside ``A`` are untouched.
    """

    reference_profile: np.ndarray
    threshold: float

    def __post_init__(self):
        nu = np.asarray(self.reference_profile, dtype=float)
        if nu.ndim != 1 or not np.isfinite(nu).all() or (nu < 0).any():
            raise InvalidInputError("reference profile must be a finite non-negative vector")
        if not nu.max() > 0:
            raise InvalidInputError("reference profile is identically zero")
        if not 0 < self.threshold < 1:
            raise InvalidInputError(f"threshold must lie in (0, 1), got {self.threshold}")
        nu = nu / nu.max()
        object.__setattr__(self, "reference_profile", nu)

    def run_ids(self):
        """Run label per index: -1 outside ``A``, else the index of its contiguous run."""
        in_a = self.reference_profile >= self.threshold
        starts = in_a & ~np.concatenate([[False], in_a[:-1]])
        ids = np.cumsum(starts) - 1
        return np.where(in_a, ids, -1)


@dataclass(frozen=True)
class CostSpec:
    """``abs_grid``: ``rho |x_i - x_j|`` kept where ``|x_i - x_j| < dx_max``.
    ``relative_quadratic``: ``rho (x_i - x_j)^2 / x_i^2`` kept where ``|x_i - x_j| <= dx_max``.
    ``custom``: an explicit :class:`SparseCostMatrix` in ``custom``.
    """

    kind: CostKind = CostKind.ABS_GRID
    grid: np.ndarray = None
    rho: float = 0.01
    dx_max: float = np.inf
    mask: ConnectivityMask = None
    custom: SparseCostMatrix = None

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        if not self.dx_max > 0:
            raise InvalidInputError(f"dx_max must be positive, got {self.dx_max}")
        if self.rho < 0 or not np.isfinite(self.rho):
            raise InvalidInputError(f"rho must be finite and non-negative, got {self.rho}")
        if self.kind is CostKind.CUSTOM:
            if self.custom is None:
                raise InvalidInputError("custom cost kind needs an explicit cost matrix")
            return
        if self.grid is None:
            raise InvalidInputError(f"{self.kind.value} cost needs a grid")
        x = np.asarray(self.grid, dtype=float)
        if x.ndim != 1 or not np.isfinite(x).all():
            raise InvalidInputError("grid must be a finite 1-D vector")
        if (np.diff(x) <= 0).any():
            raise InvalidInputError("grid must be strictly increasing")
        if self.kind is CostKind.RELATIVE_QUADRATIC and (x == 0).any():
            raise InvalidInputError("relative quadratic cost is undefined at x = 0")
        object.__setattr__(self, "grid", x)


def _band_pairs(x, dx_max, strict):
    """Index pairs of a sorted grid within ``dx_max`` of each other, O(nnz)."""
    n = len(x)
    if np.isinf(dx_max):
        rows = np.repeat(np.arange(n), n)
        cols = np.tile(np.arange(n), n)
        return rows, cols
    side = "left" if strict else "right"
    lo = np.searchsorted(x, x - dx_max, side="right" if strict else "left")
    hi = np.searchsorted(x, x + dx_max, side=side)
    counts = hi - lo
    rows = np.repeat(np.arange(n), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    cols = np.repeat(lo, counts) + offsets
    return rows, cols


def apply_mask(C, mask):
    """Drop the pairs forbidden by a :class:`ConnectivityMask`."""
    ids = mask.run_ids()
    if len(ids) != C.n_rows or C.n_rows != C.n_cols:
        raise InvalidInputError("mask length must match a square cost matrix")
    coo = C.matrix.tocoo()
    ri, rj = ids[coo.row], ids[coo.col]
    drop = ((ri >= 0) | (rj >= 0)) & (ri != rj)
    keep = ~drop
    return SparseCostMatrix.from_coo(coo.row[keep], coo.col[keep], coo.data[keep], C.matrix.shape)


def _check_nonempty(m, what):
    row_nnz = np.diff(m.indptr)
    col_nnz = np.bincount(m.indices, minlength=m.shape[1])
    if (row_nnz == 0).any():
        raise EmptyRowError(f"{what} row {int(np.flatnonzero(row_nnz == 0)[0])} has no entries")
    if (col_nnz == 0).any():
        raise EmptyRowError(f"{what} column {int(np.flatnonzero(col_nnz == 0)[0])} has no entries")


def build_cost(spec):
    """Sparse cost matrix for a :class:`CostSpec` (mask applied last)."""
    if spec.kind is CostKind.CUSTOM:
        C = spec.custom
    else:
        x = spec.grid
        if spec.kind is CostKind.ABS_GRID:
            rows, cols = _band_pairs(x, spec.dx_max, strict=True)
            vals = spec.rho * np.abs(x[rows] - x[cols])
        else:
            rows, cols = _band_pairs(x, spec.dx_max, strict=False)
            vals = spec.rho * (x[rows] - x[cols]) ** 2 / x[rows] ** 2
        C = SparseCostMatrix.from_coo(rows, cols, vals, (len(x), len(x)))
    if spec.mask is not None:
        C = apply_mask(C, spec.mask)
    _check_nonempty(C.matrix, "cost")
    return C


def build_kernel(C, epsilon):
    """``K = exp(-C / epsilon)``, dropping entries with ``C / epsilon > 690``.

    Raises :class:`EmptyRowError` when the drop leaves a row or column empty,
    i.e. when epsilon is too small for the cost scale.
    """
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    coo = C.matrix.tocoo()
    scaled = coo.data / epsilon
    keep = scaled <= UNDERFLOW_EXPONENT
    K = sparse.coo_matrix((np.exp(-scaled[keep]), (coo.row[keep], coo.col[keep])), shape=coo.shape).tocsr()
    try:
        _check_nonempty(K, "kernel")
    except EmptyRowError as err:
        raise EmptyRowError(f"{err}: epsilon={epsilon:g} is too small for the cost scale "
                            f"(all entries exceed C/epsilon = {UNDERFLOW_EXPONENT:g})") from None
    return GibbsKernel(K, epsilon)


def identity_kernel(n, epsilon=1.0):
    """Kernel of a cost that is 0 on the diagonal and infinite elsewhere."""
    return GibbsKernel(sparse.identity(n, format="csr"), epsilon)
