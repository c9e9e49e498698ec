"""Command-line front end: ``otlm {fit,gen,demo,bench,prox}``.

Exit codes: 0 success (converged), 1 input error, 2 not converged.
Dictionaries and targets are headered CSV whose first column is the grid
coordinate; configs and reports are JSON. Floats are written with 17
significant digits so files round-trip exactly.
"""
import argparse
import csv
import json
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .core import Dictionary, OtlmConfig, SparseCostMatrix, Target, plan_col_marginal, plan_row_marginal
from .costs import ConnectivityMask, CostSpec, build_cost, build_kernel
from .exceptions import OtlmError
from .oracles import baseline_nn_regression, prox_oracle
from .prox import prox
from .solver import solve
from .synth import DEMO_CONFIGS, DEMO_RHO, SynthSpec, demo_case, gen_scaling_problem

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
PLAN_ENTRY_LIMIT = 10_000_000


class InputError(Exception):
    """Bad user input; reported with exit code 1."""


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _fmt(v):
    return format(float(v), ".17g")


def write_columns(path, header, columns):
    """Headered CSV with one column per array, floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in zip(*columns):
            wr.writerow([_fmt(v) for v in row])


def read_columns(path):
    """Return ``(header, array)`` for a headered numeric CSV."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: needs a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as err:
        raise InputError(f"{path}: non-numeric entry ({err})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise InputError(f"{path}: every row must have {len(header)} fields")
    return header, data


def read_dictionary(path):
    header, data = read_columns(path)
    if data.shape[1] < 2:
        raise InputError(f"{path}: dictionary needs a grid column and at least one atom column")
    return data[:, 0], Dictionary(data[:, 1:], labels=tuple(header[1:]))


def read_target(path):
    header, data = read_columns(path)
    if data.shape[1] != 2:
        raise InputError(f"{path}: target must have exactly two columns (grid, value)")
    return data[:, 0], Target(data[:, 1])


def read_cost_triplets(path, n):
    header, data = read_columns(path)
    if data.shape[1] != 3:
        raise InputError(f"{path}: custom cost needs columns i, j, cost")
    return SparseCostMatrix.from_coo(data[:, 0].astype(int), data[:, 1].astype(int), data[:, 2], (n, n))


# ---------------------------------------------------------------------------
# Run configuration and report
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Contents of a ``fit`` config file; relative paths resolve against the file's directory."""

    dictionary: Path
    target: Path
    cost: dict
    solver: dict
    output: Path = None
    seed: int = 0
    base: Path = Path(".")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise InputError(f"{path}: malformed JSON ({err})") from None
        base = path.parent
        missing = [k for k in ("dictionary", "target", "solver") if k not in raw]
        if missing:
            raise InputError(f"{path}: missing keys {missing}")
        out = raw.get("output")
        return cls(
            dictionary=base / raw["dictionary"],
            target=base / raw["target"],
            cost=dict(raw.get("cost", {})),
            solver=dict(raw["solver"]),
            output=None if out is None else base / out,
            seed=int(raw.get("seed", 0)),
            base=base,
        )


def cost_spec_from_dict(d, grid, n, base=Path(".")):
    d = dict(d)
    kind = d.pop("kind", "abs_grid")
    mask = d.pop("mask", None)
    if mask is not None:
        mask = ConnectivityMask(np.asarray(mask["reference_profile"], dtype=float), float(mask["threshold"]))
    if kind == "custom":
        if "path" not in d:
            raise InputError("custom cost needs a 'path' to an i,j,cost CSV")
        return CostSpec(kind="custom", custom=read_cost_triplets(Path(base) / d.pop("path"), n), mask=mask)
    dx_max = d.pop("dx_max", None)
    spec = CostSpec(kind=kind, grid=grid, rho=float(d.pop("rho", 0.01)),
                    dx_max=np.inf if dx_max is None else float(dx_max), mask=mask)
    if d:
        raise InputError(f"unknown cost keys {sorted(d)}")
    return spec


@dataclass
class FitReport:
    weights: dict
    converged: bool
    iterations: int
    final: dict
    config: dict
    timing_ms: dict = field(default_factory=dict)
    marginals: dict = None
    plan: dict = None
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        d = {
            "schema_version": self.schema_version,
            "weights": self.weights,
            "converged": self.converged,
            "iterations": self.iterations,
            "final": self.final,
            "config": self.config,
            "timing_ms": self.timing_ms,
        }
        if self.marginals is not None:
            d["marginals"] = self.marginals
        if self.plan is not None:
            d["plan"] = self.plan
        return d

    def to_json(self):
        # json writes floats with repr, the shortest exact round-trip form
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise InputError(f"unsupported report schema version {version!r}")
        return cls(**d)


def _plan_summary(solution, kernel, top_k):
    K = kernel.matrix
    if top_k is None:
        if K.nnz > PLAN_ENTRY_LIMIT:
            raise InputError(f"full plan has {K.nnz} entries (> {PLAN_ENTRY_LIMIT}); pass a top-k value")
    Q = sparse.csr_matrix(solution.plan(kernel))
    rows = []
    for i in range(Q.shape[0]):
        lo, hi = Q.indptr[i], Q.indptr[i + 1]
        cols, vals = Q.indices[lo:hi], Q.data[lo:hi]
        if top_k is not None and len(vals) > top_k:
            keep = np.sort(np.argsort(-vals, kind="stable")[:top_k])
            cols, vals = cols[keep], vals[keep]
        rows.append({"row": i, "cols": cols.tolist(), "values": vals.tolist()})
    return {"top_k": top_k, "rows": rows}


def run_fit(kernel_builder, X, y, cfg, emit_plan=False, top_k=None, echo=None):
    """Build the kernel, solve, and assemble a :class:`FitReport` (returns ``(report, solution)``)."""
    t0 = time.perf_counter()
    kernel = kernel_builder()
    t1 = time.perf_counter()
    sol = solve(kernel, X, y, cfg)
    t2 = time.perf_counter()
    final = sol.diagnostics[-1].to_dict() if sol.diagnostics else {}
    report = FitReport(
        weights={label: float(w) for label, w in zip(X.labels, sol.w)},
        converged=bool(sol.converged),
        iterations=int(sol.iters_used),
        final=final,
        config={"solver": cfg.to_dict(), **(echo or {})},
        timing_ms={"kernel_build": 1e3 * (t1 - t0), "iterations": 1e3 * (t2 - t1)},
    )
    if emit_plan:
        report.marginals = {
            "source": plan_row_marginal(sol, kernel).tolist(),
            "target": plan_col_marginal(sol, kernel).tolist(),
            "model": X.dot(sol.w).tolist(),
        }
        report.plan = _plan_summary(sol, kernel, top_k)
    return report, sol


def strip_timing(report_dict):
    """Report without its wall-clock fields, for reproducibility comparisons."""
    return {k: v for k, v in report_dict.items() if k != "timing_ms"}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

_OVERRIDES = (("epsilon", "epsilon"), ("lam", "lam"), ("alpha", "alpha"), ("beta", "beta"),
              ("datafit", "datafit"), ("penalty", "penalty"), ("tol", "tol"), ("max_iters", "max_iters"))


def _solver_config(base, args):
    d = dict(base)
    if "lambda" in d:
        d["lam"] = d.pop("lambda")
    for attr, key in _OVERRIDES:
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    try:
        return OtlmConfig(**d)
    except TypeError as err:
        raise InputError(f"invalid solver settings: {err}") from None


def _emit_plan_args(args):
    if args.emit_plan is None:
        return False, None
    return True, (None if args.emit_plan == 0 else args.emit_plan)


def _write_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_json())
    return path


def _finish(report, path):
    out = _write_report(report, path)
    status = "converged" if report.converged else "NOT converged"
    print(f"{status} after {report.iterations} iterations; report written to {out}")
    for label, w in report.weights.items():
        print(f"  {label}: {_fmt(w)}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_fit(args):
    rc = RunConfig.load(args.config)
    grid, X = read_dictionary(rc.dictionary)
    grid_y, y = read_target(rc.target)
    if len(grid) != len(grid_y):
        raise InputError(f"dictionary has {len(grid)} rows but target has {len(grid_y)}")
    if not np.array_equal(grid, grid_y):
        raise InputError("dictionary and target grids differ")
    cfg = _solver_config(rc.solver, args)
    spec = cost_spec_from_dict(rc.cost, grid, len(grid), rc.base)
    emit, top_k = _emit_plan_args(args)
    echo = {"cost": {k: v for k, v in rc.cost.items() if k != "mask"},
            "dictionary": rc.dictionary.name, "target": rc.target.name}
    report, _ = run_fit(lambda: build_kernel(build_cost(spec), cfg.epsilon), X, y, cfg, emit, top_k, echo)
    if args.out is not None:
        out = Path(args.out) / "report.json"
    else:
        out = rc.output or Path(args.config).parent / "report.json"
    return _finish(report, out)


def write_problem(out, problem, truth_extra=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    X = problem.X
    dense = X.toarray()
    write_columns(out / "dictionary.csv", ["x", *X.labels], [problem.grid, *dense.T])
    write_columns(out / "target.csv", ["x", "y"], [problem.grid, problem.y.values])
    write_columns(out / "grid.csv", ["x"], [problem.grid])
    truth = {"labels": list(X.labels), "weights": problem.w_true.tolist(), **(truth_extra or {})}
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return out


def _demo_fit_config(name):
    solver = DEMO_CONFIGS[name]["solver"]
    cfg = OtlmConfig(**solver)
    return {
        "dictionary": "dictionary.csv",
        "target": "target.csv",
        "cost": {"kind": "abs_grid", "rho": DEMO_RHO},
        "solver": {**cfg.to_dict(), "max_iters": 100_000, "tol": 1e-9},
        "output": "report.json",
    }


def cmd_gen(args):
    if args.kind == "demo":
        problem, _ = demo_case(args.config_name, args.seed)
        out = write_problem(args.out, problem, {"kind": "demo", "config": args.config_name, "seed": args.seed})
        (out / "config.json").write_text(json.dumps(_demo_fit_config(args.config_name), indent=2, sort_keys=True) + "\n")
    else:
        n = args.n if args.n is not None else 1000
        if args.m is not None and args.m > n:
            raise InputError(f"need N >= M, got N={n}, M={args.m}")
        spec = SynthSpec(n_samples=n, n_atoms=args.m, seed=args.seed)
        problem = gen_scaling_problem(spec)
        out = write_problem(args.out, problem, {"kind": "scaling", "seed": args.seed,
                                                "n_samples": n, "n_atoms": spec.n_atoms})
    print(f"wrote {args.kind} problem to {out}")
    return EXIT_OK


def cmd_demo(args):
    name = args.config_name
    problem, solver = demo_case(name, args.seed)
    cfg = _solver_config({**solver, "max_iters": 100_000, "tol": 1e-9}, args)
    emit, top_k = _emit_plan_args(args)
    spec = CostSpec(grid=problem.grid, rho=DEMO_RHO)
    echo = {"demo": {"config": name, "seed": args.seed}}
    report, sol = run_fit(lambda: build_kernel(build_cost(spec), cfg.epsilon), problem.X, problem.y, cfg,
                          emit, top_k, echo)
    wb = baseline_nn_regression(problem.X.values, problem.y.values, DEMO_CONFIGS[name]["baseline"],
                                penalty=cfg.penalty, alpha=cfg.alpha, lam=cfg.lam)
    err_otlm = float(np.linalg.norm(sol.w - problem.w_true))
    err_base = float(np.linalg.norm(wb - problem.w_true))
    print(f"true weights     : {' '.join(_fmt(v) for v in problem.w_true)}")
    print(f"transport model  : {' '.join(_fmt(v) for v in sol.w)}  (l2 error {_fmt(err_otlm)})")
    print(f"per-sample fit   : {' '.join(_fmt(v) for v in wb)}  (l2 error {_fmt(err_base)})")
    if args.out is None:
        return EXIT_OK if report.converged else EXIT_NOT_CONVERGED
    return _finish(report, Path(args.out) / "report.json")


def _parse_sizes(text):
    try:
        sizes = [int(s) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise InputError(f"sizes must be comma-separated integers, got {text!r}") from None
    if not sizes or sizes != sorted(sizes) or sizes[0] < 10:
        raise InputError("sizes must be ascending integers >= 10")
    return sizes


def bench_rows(sizes, repeats=5, datafit="l2", penalty="l2sq", iters=200, seed=0):
    """Timing rows ``(N, M, nnz_K, iters, time_ms_median, time_ms_p90)`` on scaling problems.

    Uses the truncated grid cost (``rho = 0.01``, ``dx_max = 10``) with
    ``lam = 1``, ``alpha = eps = 1e-3`` and a fixed iteration count.
    """
    rows = []
    for n in sizes:
        problem = gen_scaling_problem(SynthSpec(n_samples=n, seed=seed))
        kernel = build_kernel(build_cost(CostSpec(grid=problem.grid, rho=0.01, dx_max=10.0)), 1e-3)
        alpha = 1e-3 if penalty not in (None, "none") else 0.0
        beta = 1e-3 if penalty == "elasticnet" else 0.0
        cfg = OtlmConfig(epsilon=1e-3, lam=1.0, alpha=alpha, beta=beta, datafit=datafit, penalty=penalty,
                         tol=1e-300, max_iters=iters, check_every=iters)
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            sol = solve(kernel, problem.X, problem.y, cfg)
            times.append(1e3 * (time.perf_counter() - t0))
        rows.append((n, problem.X.n_atoms, kernel.nnz, sol.iters_used,
                     float(np.median(times)), float(np.percentile(times, 90))))
    return rows


BENCH_HEADER = ("N", "M", "nnz_K", "iters", "time_ms_median", "time_ms_p90")


def cmd_bench(args):
    sizes = _parse_sizes(args.sizes)
    rows = bench_rows(sizes, args.repeats, args.datafit or "l2", args.penalty or "l2sq", args.max_iters or 200,
                      args.seed)
    lines = [",".join(BENCH_HEADER)]
    lines += [f"{n},{m},{nnz},{it},{_fmt(t50)},{_fmt(t90)}" for n, m, nnz, it, t50, t90 in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def _vector_arg(text, name):
    p = Path(str(text))
    if p.suffix == ".csv" and p.is_file():
        _, data = read_columns(p)
        return data[:, -1]
    try:
        return np.array([float(v) for v in str(text).split(",")], dtype=float)
    except ValueError:
        raise InputError(f"--{name} must be a number, a comma-separated list, or a CSV path") from None


def cmd_prox(args):
    s = _vector_arg(args.s, "s")
    y = _vector_arg(args.y, "y")
    if s.shape != y.shape:
        raise InputError(f"s has {len(s)} entries but y has {len(y)}")
    lam = 1.0 if args.lam is None else args.lam
    eps = 1.0 if args.epsilon is None else args.epsilon
    try:
        closed = prox(args.datafit_name, s, y, lam, eps)
    except ValueError as err:
        raise InputError(str(err)) from None
    oracle = prox_oracle(args.datafit_name, s, y, lam, eps)
    print("s,y,prox,oracle")
    for row in zip(s, y, closed, oracle):
        print(",".join(_fmt(v) for v in row))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_solver_flags(p):
    p.add_argument("--epsilon", type=float, help="entropic regularization")
    p.add_argument("--lambda", dest="lam", type=float, help="datafit weight")
    p.add_argument("--alpha", type=float, help="penalty weight")
    p.add_argument("--beta", type=float, help="elastic-net quadratic weight")
    p.add_argument("--datafit", help="equality, kl, tv, l2 or poisson")
    p.add_argument("--penalty", help="none, l1, l2sq or elasticnet")
    p.add_argument("--tol", type=float, help="convergence tolerance")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap")


def _add_plan_flag(p):
    p.add_argument("--emit-plan", dest="emit_plan", type=int, nargs="?", const=0, default=None, metavar="K",
                   help="include marginals and the plan (top K entries per row; bare flag = full plan)")


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the input-error code, keeping 2 for non-convergence."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="otlm", description="Optimal transport linear models by scaling iterations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model described by a JSON config")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", help="directory for report.json (overrides the config)")
    p.add_argument("--seed", type=int, default=0)
    _add_solver_flags(p)
    _add_plan_flag(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("gen", help="write a synthetic problem")
    p.add_argument("kind", choices=("demo", "scaling"))
    p.add_argument("--n", "-N", dest="n", type=int, help="samples (scaling)")
    p.add_argument("--m", "-M", dest="m", type=int, help="atoms (scaling; default N/10)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config-name", default="tv", choices=sorted(DEMO_CONFIGS), help="demo settings to lay out for")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("demo", help="generate, fit and compare the demonstration problem")
    p.add_argument("--config-name", default="tv", choices=sorted(DEMO_CONFIGS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for report.json")
    _add_solver_flags(p)
    _add_plan_flag(p)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("bench", help="time fixed-iteration solves on scaling problems")
    p.add_argument("--sizes", default="400,800,1600,3200")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--datafit")
    p.add_argument("--penalty")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("prox", help="evaluate a datafit prox next to its numeric oracle")
    p.add_argument("datafit_name", metavar="DATAFIT")
    p.add_argument("--s", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epsilon", type=float)
    p.set_defaults(func=cmd_prox)
    return parser


def _thread_limit():
    n = os.environ.get("OTLM_THREADS")
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    try:
        return threadpool_limits(limits=max(1, int(n)))
    except ValueError:
        raise InputError(f"OTLM_THREADS must be an integer, got {n!r}") from None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return args.func(args)
    except (InputError, OtlmError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
