"""Entropy-regularized optimal transport linear models solved by scaling iterations."""
from .core import (Datafit, Dictionary, GibbsKernel, IterationRecord, OtlmConfig, Penalty, ScalingState, Solution,
                   SparseCostMatrix, Target, materialize_plan, plan_col_marginal, plan_row_marginal)
from .costs import ConnectivityMask, CostKind, CostSpec, build_cost, build_kernel, identity_kernel
from .exceptions import (BracketFailure, DegenerateRow, DimensionMismatch, DomainError, EmptyRowError, Infeasible,
                         InvalidInputError, NonConvergence, NonPositiveEffTarget, NumericalOverflow, OtlmError)
from .lambertw import lambert_w0, lambert_w0_exp, lambert_w0_of_log
from .mm import build_normalized_weights, mm_majorant, mm_objective, mm_prox, mm_step
from .prox import prox, prox_equality, prox_kl, prox_l2, prox_poisson, prox_tv
from .solver import diagnostics_stream, scaling_step, solve, solve_balanced
from .synth import DemoSpec, SkewGaussianParams, SynthSpec, gen_demo_problem, gen_scaling_problem, skew_gaussian_pdf

__version__ = "0.1.0"
