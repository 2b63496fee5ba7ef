"""Command-line front end.

Every subcommand writes one CSV file.  Its first two lines are comments holding
the tool version and the full experiment configuration as JSON, so a file can be
traced back to (and re-run from) the exact settings that produced it::

    # treepam 0.1.0
    # config {"command": "eigen", "d": 2, ...}
    d,R,value
    2,1,1.2679491924311228

Exit codes: 0 success, 2 invalid input or unwritable output, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .functionals import scaling_defect
from .simulator import (
    SUMMARY_COLUMNS,
    batch_standard_errors,
    boundary_fraction,
    depth_zero_profile,
    estimate_mass_exponents,
    simulate_depth_chain,
    simulate_killed_batch,
    simulate_unit_walk,
    _exponent_from_weights,
)
from .sojourn import (
    ExpRate,
    TreeReturn,
    legendre_table,
    return_pmf_table,
    sample_sojourn,
    sample_tree_return_doob,
)
from .tree_topology import RegularTreeSpec, build_depth_line, build_unit_graph
from .variational import (
    NonConvergence,
    SolverOptions,
    F_function,
    F_inequality_scan,
    chi_scan,
    minimiser_diagnostics,
    principal_dirichlet_value,
    solve_chi_lower,
    solve_chi_upper,
)

OUTPUT_ENV = "TREEPAM_OUTPUT_DIR"
EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGENCE = 0, 2, 3
CONFIG_PREFIX = "# config "


@dataclass
class ExperimentConfig:
    command: str
    d: int | None = None
    R: int | None = None
    rho: float | None = None
    rho_grid: list[float] | None = None
    t: float | None = None
    n: int | None = None
    seed: int = 0
    tol: float = 1e-8
    output: str = ""
    extra: dict = field(default_factory=dict)

    def header(self) -> str:
        body = json.dumps(asdict(self), sort_keys=True, allow_nan=True)
        return f"# treepam {__version__}\n{CONFIG_PREFIX}{body}\n"


def parse_header(text: str) -> ExperimentConfig:
    """Rebuild the configuration from the comment lines of an output file."""
    for line in text.splitlines():
        if line.startswith(CONFIG_PREFIX):
            return ExperimentConfig(**json.loads(line[len(CONFIG_PREFIX):]))
        if not line.startswith("#"):
            break
    raise ValueError("no configuration header found")


def parse_grid(text: str) -> list[float]:
    """``start:stop:linN`` / ``start:stop:logN`` or a comma-separated list."""
    parts = text.split(":")
    if len(parts) == 1:
        try:
            return [float(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; use start:stop:linN or start:stop:logN")
    try:
        start, stop = float(parts[0]), float(parts[1])
        kind, count = parts[2][:3], int(parts[2][3:])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from exc
    if count < 1 or kind not in ("lin", "log"):
        raise argparse.ArgumentTypeError(f"bad grid {text!r}")
    if count == 1:
        return [start]
    if kind == "lin":
        return [float(x) for x in np.linspace(start, stop, count)]
    if start <= 0 or stop <= 0:
        raise argparse.ArgumentTypeError("log grids need positive end points")
    return [float(x) for x in np.geomspace(start, stop, count)]


def _f(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def _rows(cols: list[str], rows) -> list[str]:
    return [",".join(cols)] + [",".join(_f(v) for v in row) for row in rows]


# -- commands ---------------------------------------------------------------
# each returns (lines, exit code); lines exclude the header

def _opts(args) -> SolverOptions:
    return SolverOptions(tol=args.tol, seed=args.seed)


def cmd_chi_lower(args, cfg):
    code = EXIT_OK
    try:
        res = solve_chi_lower(args.d, args.R, args.rho, _opts(args))
    except NonConvergence as exc:
        res, code = exc.result, EXIT_NONCONVERGENCE
    cols = ["rho", "value", "grad_norm", "iterations", "restarts", "converged"]
    cols += [f"shell_{r}" for r in range(args.R + 1)]
    row = [args.rho, res.value, res.grad_norm, res.iterations, res.restarts_used, res.converged]
    return _rows(cols, [row + list(res.shell_masses)]), code


def cmd_chi_upper(args, cfg):
    code = EXIT_OK
    try:
        res = solve_chi_upper(args.d, args.R, args.rho, _opts(args))
    except NonConvergence as exc:
        res, code = exc.result, EXIT_NONCONVERGENCE
    bmass = float(res.minimiser[res.graph.boundary_mask].sum())
    cols = ["rho", "value", "grad_norm", "iterations", "restarts", "converged", "constraint_active", "boundary_mass"]
    row = [args.rho, res.value, res.grad_norm, res.iterations, res.restarts_used, res.converged,
           res.constraint_active, bmass]
    return _rows(cols, [row]), code


def cmd_chi_scan(args, cfg):
    curve = chi_scan(args.d, args.R, args.rho_grid, _opts(args), jobs=args.jobs)
    cols = ["rho", "value", "grad_norm", "iterations", "restarts"] + [f"shell_{r}" for r in range(args.R + 1)]
    rows = [[p.rho, p.value, p.grad_norm, p.iterations, p.restarts] + list(p.shell_masses) for p in curve.points]
    code = EXIT_OK if all(p.converged for p in curve.points) else EXIT_NONCONVERGENCE
    return _rows(cols, rows), code


def cmd_eigen(args, cfg):
    value, _ = principal_dirichlet_value(args.d, args.R)
    print(repr(value))
    return _rows(["d", "R", "value"], [[args.d, args.R, value]]), EXIT_OK


def _law(args):
    return TreeReturn(args.d) if args.law == "tree" else ExpRate.for_tree(args.d)


def cmd_legendre(args, cfg):
    table = legendre_table(_law(args), args.alpha_grid)
    rows = zip(table.alpha, table.L, table.theta, table.mu)
    return _rows(["alpha", "L", "theta", "mu"], rows), EXIT_OK


def cmd_pmf(args, cfg):
    pmf = return_pmf_table(args.kmax, args.d)
    cum = np.cumsum(pmf)
    rows = [[k, 2 * k, pmf[k - 1], cum[k - 1]] for k in range(1, args.kmax + 1)]
    return _rows(["k", "return_time", "pmf", "cumulative"], rows), EXIT_OK


def cmd_sample(args, cfg):
    rng = np.random.default_rng(args.seed)
    if args.law == "exp":
        x = sample_sojourn(ExpRate.for_tree(args.d), rng, args.n)
    elif args.sampler == "doob":
        x = sample_tree_return_doob(args.d, rng, args.n)
    else:
        x = sample_sojourn(TreeReturn(args.d), rng, args.n)
    return _rows(["sojourn"], ([v] for v in x)), EXIT_OK


def cmd_mc_survival(args, cfg):
    _, survived = simulate_killed_batch(args.d, args.R, args.t, args.n, args.seed, keep_occupation=False,
                                        jobs=args.jobs)
    est = _exponent_from_weights(survived.astype(float), args.t)
    lines = [f"# survivors={est.successes} lower_bound_only={int(est.lower_bound_only)} ci={est.method}"]
    return lines + [SUMMARY_COLUMNS, est.csv_row()], EXIT_OK


def cmd_mc_mass(args, cfg):
    rhos = args.rho_grid if args.rho_grid else [args.rho]
    ests = estimate_mass_exponents(args.d, args.R, rhos, args.t, args.n, args.seed, jobs=args.jobs)
    lines = [f"# survivors={ests[0].successes} ci={ests[0].method}"]
    lines.append("rho,lower_bound_only," + SUMMARY_COLUMNS)
    lines += [f"{rho!r},{int(e.lower_bound_only)},{e.csv_row()}" for rho, e in zip(rhos, ests)]
    return lines, EXIT_OK


def cmd_mc_depth(args, cfg):
    line = build_depth_line(args.d, args.R)
    rec = simulate_depth_chain(line, args.t, args.seed, sampler=args.sampler)
    se = batch_standard_errors(rec)
    zero = depth_zero_profile(args.d, args.R)
    rows = [[k, rec.occupation[k], rec.profile[k], se[k], zero[k]] for k in range(line.n_states)]
    return _rows(["state", "occupation", "profile", "se", "zero_profile"], rows), EXIT_OK


def cmd_mc_unit(args, cfg):
    unit = build_unit_graph(RegularTreeSpec(args.d, args.R))
    rec = simulate_unit_walk(unit, args.t, args.seed, sampler=args.sampler)
    se = batch_standard_errors(rec)
    lines = [f"# boundary_fraction={boundary_fraction(unit, rec)!r}"]
    rows = [[v, unit.depth[v], unit.boundary_mask[v], unit.is_tadpole[v], rec.occupation[v], rec.profile[v], se[v]]
            for v in range(unit.n_vertices)]
    cols = ["vertex", "depth", "boundary", "tadpole", "occupation", "profile", "se"]
    return lines + _rows(cols, rows), EXIT_OK


def cmd_ineq_scan(args, cfg):
    w = np.geomspace(args.w_min, args.w_max, args.w_points)
    rep = F_inequality_scan(args.d, w, args.c_grid)
    summary = {k: v for k, v in asdict(rep).items()}
    lines = ["# summary " + json.dumps(summary, sort_keys=True)]
    F = F_function(w, args.d)
    target = (1 - np.sqrt(w)) ** 2
    rows = zip(w, F, target, target - F, rep.theta_c * target - F)
    return lines + _rows(["w", "F", "unit_rhs", "unit_deficit", "theta_deficit"], rows), EXIT_OK


def cmd_minimiser(args, cfg):
    code = EXIT_OK
    try:
        res = solve_chi_lower(args.d, args.R, args.rho, _opts(args))
    except NonConvergence as exc:
        res, code = exc.result, EXIT_NONCONVERGENCE
    rep = minimiser_diagnostics(res, args.rho)
    summary = {"centre": rep.centre, "monotone": rep.monotone, "positive": rep.positive,
               "min_entry": rep.min_entry, "tail_sum": rep.tail_sum, "tail_bound": rep.tail_bound,
               "tail_ok": rep.tail_ok, "value": res.value, "multiplicity": res.multiplicity}
    lines = ["# summary " + json.dumps(summary, sort_keys=True)]
    return lines + _rows(["shell", "mass"], enumerate(rep.shell_masses)), code


def cmd_scaling(args, cfg):
    rows = []
    for t in args.t_grid:
        for c in args.c_grid:
            val = scaling_defect(c, t, args.rho)
            limit = args.rho * c * math.log(c) if c > 0 else 0.0
            rows.append([t, c, val, limit, abs(val - limit)])
    return _rows(["t", "c", "defect", "limit", "abs_error"], rows), EXIT_OK


# -- parser ---------------------------------------------------------------------

def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return v
    return conv


def _nonneg_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text!r}")
    return v


def _degree(text):
    v = _nonneg_int(text)
    if v < 2:
        raise argparse.ArgumentTypeError("d must be >= 2")
    return v


COMMANDS = {
    "chi-lower": (cmd_chi_lower, "lower variational constant on the ball", ["d", "R", "rho", "tol"]),
    "chi-upper": (cmd_chi_upper, "upper variational constant on the unit graph", ["d", "R", "rho", "tol"]),
    "chi-scan": (cmd_chi_scan, "lower constant along a rho grid", ["d", "R", "rho_grid", "tol"]),
    "eigen": (cmd_eigen, "principal Dirichlet value of the ball", ["d", "R"]),
    "legendre": (cmd_legendre, "Legendre transform table of a sojourn law", ["d", "law", "alpha_grid"]),
    "pmf": (cmd_pmf, "return-time distribution of the rooted tree", ["d", "kmax"]),
    "sample": (cmd_sample, "draw sojourn times", ["d", "n", "law", "sampler"]),
    "mc-survival": (cmd_mc_survival, "Monte Carlo survival exponent of the killed walk", ["d", "R", "t", "n"]),
    "mc-depth": (cmd_mc_depth, "depth-projected renewal chain profile", ["d", "R", "t", "sampler"]),
    "mc-unit": (cmd_mc_unit, "renewal walk on the unit graph", ["d", "R", "t", "sampler"]),
    "mc-mass": (cmd_mc_mass, "Monte Carlo mass exponent", ["d", "R", "rho_opt", "t", "n"]),
    "ineq-scan": (cmd_ineq_scan, "scan of the tadpole weight inequality", ["d", "w", "c_grid"]),
    "minimiser": (cmd_minimiser, "structure of the lower minimiser", ["d", "R", "rho", "tol"]),
    "scaling": (cmd_scaling, "scaling defect of the double-exponential cumulant", ["rho", "t_grid", "c_grid_unit"]),
}


def _add_flags(p: argparse.ArgumentParser, flags: list[str]) -> None:
    add = p.add_argument
    for flag in flags:
        if flag == "d":
            add("--d", type=_degree, required=True, help="branching number (tree degree minus one)")
        elif flag == "R":
            add("--R", type=_nonneg_int, required=True, help="truncation radius")
        elif flag == "rho":
            add("--rho", type=_positive(float), required=True)
        elif flag == "rho_opt":
            g = p.add_mutually_exclusive_group(required=True)
            g.add_argument("--rho", type=_positive(float))
            g.add_argument("--rho-grid", type=parse_grid)
        elif flag == "rho_grid":
            add("--rho-grid", type=parse_grid, required=True, help="start:stop:linN|logN or a comma list")
        elif flag == "tol":
            add("--tol", type=_positive(float), default=1e-8, help="gradient-norm tolerance")
        elif flag == "t":
            add("--t", type=_positive(float), required=True, help="time horizon")
        elif flag == "n":
            add("--n", type=_positive(int), required=True, help="number of runs or samples")
        elif flag == "law":
            add("--law", choices=["tree", "exp"], default="tree")
        elif flag == "alpha_grid":
            add("--alpha-grid", type=parse_grid, default=parse_grid("0.01:100:log50"))
        elif flag == "kmax":
            add("--kmax", type=_positive(int), required=True)
        elif flag == "sampler":
            add("--sampler", choices=["mixture", "doob"], default="mixture")
        elif flag == "w":
            add("--w-min", type=_positive(float), default=1e-6)
            add("--w-max", type=_positive(float), default=1e6)
            add("--w-points", type=_positive(int), default=1000)
        elif flag == "c_grid":
            add("--c-grid", type=parse_grid, default=parse_grid("0:20:lin2001"))
        elif flag == "c_grid_unit":
            add("--c-grid", type=parse_grid, default=parse_grid("0.05:1:lin20"))
        elif flag == "t_grid":
            add("--t-grid", type=parse_grid, default=parse_grid("100,1000,10000"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treepam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"treepam {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, flags) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_flags(p, flags)
        p.add_argument("--seed", type=_nonneg_int, default=0)
        p.add_argument("--out", type=str, default=None,
                       help=f"output CSV (default: ${OUTPUT_ENV} or the working directory, file <command>.csv)")
        p.add_argument("--jobs", type=_positive(int), default=os.cpu_count() or 1)
    return parser


_CONFIG_KEYS = {"d", "R", "rho", "rho_grid", "t", "n", "seed", "tol"}
_SKIP = {"command", "out", "jobs"}


def _config(args, output: str) -> ExperimentConfig:
    ns = vars(args)
    cfg = ExperimentConfig(command=args.command, output=output)
    for key, val in ns.items():
        if key in _SKIP or val is None:
            continue
        if key in _CONFIG_KEYS:
            setattr(cfg, key, val)
        else:
            cfg.extra[key] = val
    return cfg


def _validate(args) -> None:
    for name in ("rho_grid",):
        grid = getattr(args, name, None)
        if grid is not None:
            if not grid or any(x <= 0 for x in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("rho grid must be positive and strictly increasing")
    if args.command in ("chi-upper",) and args.R < 2:
        raise ValueError("the unit graph needs R >= 2")
    if args.command == "mc-unit" and args.R < 2:
        raise ValueError("the unit graph needs R >= 2")
    if args.command == "mc-depth" and args.R < 1:
        raise ValueError("the depth chain needs R >= 1")
    if args.command == "mc-mass" and args.t > 30:
        raise ValueError("mc-mass needs t <= 30")
    if args.command == "mc-survival" and args.n < 1000:
        raise ValueError("mc-survival needs n >= 1000")
    if args.command == "scaling" and any(not 0 <= c <= 1 for c in args.c_grid):
        raise ValueError("c grid must lie in [0, 1]")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ENV, ".")) / f"{args.command}.csv"
    cfg = _config(args, str(out))
    func = COMMANDS[args.command][0]
    try:
        _validate(args)
        lines, code = func(args, cfg)
    except ValueError as exc:
        print(f"treepam: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(cfg.header() + "\n".join(lines) + "\n")
    except OSError as exc:
        print(f"treepam: error: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if code == EXIT_NONCONVERGENCE:
        print("treepam: solver did not converge; best point written", file=sys.stderr)
    return code


run = main
