"""Seeded synthetic problems: Gaussian dictionaries and skew-Gaussian mixture targets.

Every random quantity has its own child stream of a ``SeedSequence``, so one
perturbation level can change without reshuffling the other draws.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.special import ndtr

from .core import Dictionary, Target
from .exceptions import InvalidInputError

_STREAMS = ("means", "sigmas", "amplitudes", "skews", "noise")
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class SkewGaussianParams:
    mu: float
    sigma: float
    gamma: float = 0.0
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if self.amplitude < 0:
            raise InvalidInputError(f"amplitude must be non-negative, got {self.amplitude}")


def skew_gaussian_pdf(x, params):
    """Skew-normal density ``(2/sigma) phi(z) Phi(gamma z)`` with ``z = (x - mu)/sigma``.

    ``amplitude`` is not applied; ``gamma = 0`` gives the normal density.
    """
    z = (np.asarray(x, dtype=float) - params.mu) / params.sigma
    return 2.0 / params.sigma * np.exp(-0.5 * z * z) / _SQRT_2PI * ndtr(params.gamma * z)


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(_STREAMS, children)}


class SynthProblem(NamedTuple):
    X: Dictionary
    y: Target
    w_true: np.ndarray
    grid: np.ndarray


@dataclass(frozen=True)
class SynthSpec:
    """Scaling test problem on the grid ``0, 1, ..., N-1``.

    Basis atoms are Gaussians (standard deviation ``basis_sigma``) centred at
    ``m N / M`` and truncated at ``truncation`` standard deviations. The target is
    ``sum_m a_m f(x; mu_m, sigma_m, gamma_m) + |n|`` with
    ``sigma_m ~ |N(basis_sigma, sigma_sd)|``, ``a_m ~ |N(1, amp_sd)| + 0.01``,
    ``gamma_m ~ N(0, skew_sd)``, ``n_i ~ N(0, noise_sd)`` and
    ``mu_m = b_m + mean_spread (U[0, N] - b_m)`` around the basis centre ``b_m``,
    so ``mean_spread = 1`` draws means uniformly on ``[0, N]``.
    Target components are truncated like the atoms, so with every perturbation
    set to zero the target is exactly ``X a``.
    """

    n_samples: int
    n_atoms: int = None
    seed: int = 0
    mean_spread: float = 1.0
    sigma_sd: float = 0.2
    amp_sd: float = 0.2
    skew_sd: float = 2.0
    noise_sd: float = 0.002
    basis_sigma: float = 2.0
    truncation: float = 5.0

    def __post_init__(self):
        if self.n_atoms is None:
            object.__setattr__(self, "n_atoms", max(1, self.n_samples // 10))
        if not (self.n_samples >= self.n_atoms >= 1):
            raise InvalidInputError(f"need N >= M >= 1, got N={self.n_samples}, M={self.n_atoms}")
        for name in ("sigma_sd", "amp_sd", "skew_sd", "noise_sd", "mean_spread"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be non-negative")
        if not (self.basis_sigma > 0 and self.truncation > 0):
            raise InvalidInputError("basis_sigma and truncation must be positive")


def _window(grid, mu, half_width):
    lo = np.searchsorted(grid, mu - half_width, side="left")
    hi = np.searchsorted(grid, mu + half_width, side="right")
    return np.arange(lo, hi)


def _truncated_columns(grid, params, half_widths):
    """COO triplets for one column per parameter set, zero outside ``mu +- half_width``."""
    rows, cols, vals = [], [], []
    for j, (p, hw) in enumerate(zip(params, half_widths)):
        idx = _window(grid, p.mu, hw)
        rows.append(idx)
        cols.append(np.full(len(idx), j))
        vals.append(p.amplitude * skew_gaussian_pdf(grid[idx], p))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def gen_scaling_problem(spec):
    """Sparse Gaussian dictionary and skew-Gaussian mixture target; returns a :class:`SynthProblem`."""
    N, M = spec.n_samples, spec.n_atoms
    rng = _streams(spec.seed)
    grid = np.arange(N, dtype=float)
    centres = np.arange(M) * N / M
    hw = spec.truncation * spec.basis_sigma
    basis = [SkewGaussianParams(c, spec.basis_sigma) for c in centres]
    r, c, v = _truncated_columns(grid, basis, [hw] * M)
    keep = v > 0
    X = sparse.csr_matrix((v[keep], (r[keep], c[keep])), shape=(N, M))

    mu = centres + spec.mean_spread * (rng["means"].uniform(0.0, N, M) - centres)
    sigma = np.abs(spec.basis_sigma + spec.sigma_sd * rng["sigmas"].standard_normal(M))
    sigma = np.maximum(sigma, 1e-3 * spec.basis_sigma)
    amp = np.abs(1.0 + spec.amp_sd * rng["amplitudes"].standard_normal(M)) + 0.01
    gamma = spec.skew_sd * rng["skews"].standard_normal(M)
    noise = np.abs(spec.noise_sd * rng["noise"].standard_normal(N))

    comps = [SkewGaussianParams(*p) for p in zip(mu, sigma, gamma, amp)]
    r, c, v = _truncated_columns(grid, comps, spec.truncation * sigma)
    y = np.bincount(r, weights=v, minlength=N) + noise
    return SynthProblem(Dictionary(X), Target(y), amp, grid)


@dataclass(frozen=True)
class DemoSpec:
    """Three unit-mass Gaussian atoms and a target of three shifted, widened skew-Gaussians.

    Atom ``m`` sits at ``centres[m]`` with standard deviation ``sigma``. Its
    target counterpart is moved by ``shift * sigma`` (random sign per peak),
    widened by ``width_ratio`` and skewed by ``gamma ~ N(0, skew_sd)``; each
    magnitude is jittered by ``U[1 - jitter, 1 + jitter]``. True weights are
    ``U[w_low, w_high]``. Both atom sets are normalized to unit sum on the grid.
    Shapes are set in samples; the grid is ``spacing * (0, 1, ..., N-1)``, which
    fixes how a cost written in grid units compares to the peak widths.
    """

    n_samples: int = 100
    spacing: float = 1.0
    centres: tuple = (25.0, 50.0, 75.0)
    sigma: float = 4.0
    shift: float = 1.0
    width_ratio: float = 1.3
    skew_sd: float = 1.0
    jitter: float = 0.25
    w_low: float = 0.5
    w_high: float = 1.5

    def __post_init__(self):
        if not (self.sigma > 0 and self.spacing > 0 and self.width_ratio > 0 and self.n_samples >= len(self.centres)):
            raise InvalidInputError("invalid demo specification")


def gen_demo_problem(seed=0, spec=None):
    """Demonstration problem with a biased dictionary; returns a :class:`SynthProblem`.

    ``DemoSpec(shift=0, width_ratio=1, skew_sd=0, jitter=0)`` puts the target exactly
    in the span of the atoms.
    """
    spec = DemoSpec() if spec is None else spec
    rng = _streams(seed)
    samples = np.arange(spec.n_samples, dtype=float)
    M = len(spec.centres)

    def jitter(stream):
        return rng[stream].uniform(1.0 - spec.jitter, 1.0 + spec.jitter, M)

    sign = np.where(rng["means"].random(M) < 0.5, -1.0, 1.0)
    mu = np.asarray(spec.centres) + sign * spec.shift * spec.sigma * jitter("means")
    sigma = spec.sigma * (1.0 + (spec.width_ratio - 1.0) * jitter("sigmas"))
    gamma = spec.skew_sd * rng["skews"].standard_normal(M)
    w_true = rng["amplitudes"].uniform(spec.w_low, spec.w_high, M)

    X = np.column_stack([skew_gaussian_pdf(samples, SkewGaussianParams(c, spec.sigma)) for c in spec.centres])
    X /= X.sum(axis=0)
    T = np.column_stack([skew_gaussian_pdf(samples, SkewGaussianParams(m, s, g)) for m, s, g in zip(mu, sigma, gamma)])
    T /= T.sum(axis=0)
    return SynthProblem(Dictionary(X), Target(T @ w_true), w_true, spec.spacing * samples)


# Transport linear model settings of the demonstration problem, with the
# per-sample baseline each one is compared against.
DEMO_RHO = 0.01
DEMO_CONFIGS = {
    "tv": dict(solver=dict(datafit="tv", lam=1.0, epsilon=1e-3), baseline="tv"),
    "ridge": dict(solver=dict(datafit="l2", lam=1.0, alpha=1e-3, epsilon=1e-3, penalty="l2sq"), baseline="l2"),
    "lasso": dict(solver=dict(datafit="l2", lam=1.0, alpha=7e-3, epsilon=2e-4, penalty="l1"), baseline="l2"),
    "poisson": dict(solver=dict(datafit="poisson", lam=100.0, alpha=1e-4, epsilon=1.0, penalty="l1"), baseline="poisson"),
}


def demo_spacing(epsilon, rho=DEMO_RHO):
    """Grid spacing equal to the entropic blur length ``epsilon / rho``.

    Adjacent samples then differ by one unit of ``C / epsilon``, so the kernel
    neither blurs across a peak nor underflows within a peak shift.
    """
    return epsilon / rho


def demo_case(name, seed=0, **spec_overrides):
    """Demo problem laid out for one entry of :data:`DEMO_CONFIGS`; returns ``(problem, solver_kwargs)``."""
    if name not in DEMO_CONFIGS:
        raise InvalidInputError(f"unknown demo config {name!r}; choose from {sorted(DEMO_CONFIGS)}")
    solver = dict(DEMO_CONFIGS[name]["solver"])
    spec_overrides.setdefault("spacing", demo_spacing(solver["epsilon"]))
    return gen_demo_problem(seed, DemoSpec(**spec_overrides)), solver
