"""Variational constants on the truncated ball and on the unit graph.

All minimisations run entropic mirror descent on the probability simplex with a
floor on the entries and an Armijo backtracking line search.  The objective is
not convex (the entropy term is concave), so every solve is a multi-start and
the reported value is the best feasible point found, i.e. an upper bound on the
true infimum.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu

from .functionals import (
    EdgeSet,
    _gradient_unchecked,
    _value_unchecked,
    edge_set,
    objective,
)
from .sojourn import TreeReturn
from .tree_topology import (
    RegularTreeSpec,
    TruncatedTree,
    UnitGraph,
    build_truncated_tree,
    build_unit_graph,
    sphere_size,
)

ARMIJO = 1e-4
STEP_MAX = 1e4
STEP_MIN = 1e-18
GEOMETRIC_RATES = (0.02, 0.2, 0.5)


class NonConvergence(RuntimeError):
    """No start reached the stopping rule; ``result`` holds the best point seen."""

    def __init__(self, message: str, result: "OptResult"):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    ftol: float = 1e-12
    window: int = 100
    max_iter: int = 20_000
    n_random: int = 3
    seed: int = 0
    # pinned entries cost about rho * n * floor * log(1/floor) in entropy; at
    # 1e-12 that exceeds 1e-8 on modest balls, while much below 1e-14 the
    # smallest free entries move the objective by less than its rounding
    floor: float = 1e-14
    step: float = 1.0
    handover: float = 1e-9


@dataclass
class StartRecord:
    label: str
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    minimiser: np.ndarray = field(repr=False)


@dataclass
class OptResult:
    value: float
    minimiser: np.ndarray = field(repr=False)
    iterations: int
    grad_norm: float
    restarts_used: int
    converged: bool
    rho: float
    graph: TruncatedTree | UnitGraph = field(repr=False)
    starts: list[StartRecord] = field(default_factory=list, repr=False)
    constraint_active: bool | None = None

    @property
    def shell_masses(self) -> np.ndarray:
        return np.bincount(self.graph.depth, weights=self.minimiser)

    @property
    def multiplicity(self) -> int:
        """Number of distinct values among converged starts (relative gap 1e-7)."""
        vals = sorted(s.value for s in self.starts if s.converged)
        count = 0
        last = None
        for v in vals:
            if last is None or abs(v - last) > 1e-7 * max(1.0, abs(v)):
                count += 1
                last = v
        return count


# -- mirror descent engine -------------------------------------------------

@dataclass
class _Run:
    p: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    converged: bool


def _floor_normalise(q, floor, blocks=None):
    q = np.maximum(q, floor)
    if blocks is None:
        return q / q.sum()
    for mask, mass in blocks:
        q[mask] *= mass / q[mask].sum()
    return q


def _cap_boundary(q, bmask, cap):
    pb = q[bmask].sum()
    if pb > cap:
        q[bmask] *= cap / pb
        q[~bmask] *= (1.0 - cap) / (1.0 - pb)
    return q


def mirror_descent(
    value: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    p0: np.ndarray,
    opts: SolverOptions,
    boundary: np.ndarray | None = None,
    cap: float | None = None,
    ftol: float | None = None,
) -> _Run:
    """Minimise ``value`` over the simplex (optionally with ``p(boundary) <= cap``).

    Stops when the weighted projected-gradient norm is below ``opts.tol`` and
    the objective moved by at most ``ftol`` (relative) over ``opts.window``
    iterations, or when the objective alone has stalled that long.
    """
    ftol = opts.ftol if ftol is None else ftol
    floor = opts.floor
    p = _floor_normalise(np.asarray(p0, dtype=float), floor)
    if boundary is not None:
        p = _cap_boundary(p, boundary, cap)
    f = value(p)
    history = [f]
    eta = opts.step
    gn = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = grad(p)
        blocks = None
        active = False
        if boundary is not None:
            mb = p[boundary].sum()
            gb = np.dot(p[boundary], g[boundary]) / mb
            gi = np.dot(p[~boundary], g[~boundary]) / (1.0 - mb)
            active = mb >= cap * (1 - 1e-12) and gb < gi
        if active:
            blocks = ((boundary, mb), (~boundary, 1.0 - mb))
            gn, _, lams = _kkt_residual(g, p, floor, [boundary, ~boundary])
            r = np.where(boundary, g - lams[0], g - lams[1])
        else:
            gn, _, lams = _kkt_residual(g, p, floor, [np.ones(len(p), dtype=bool)])
            r = g - lams[0]
        ref = history[max(0, len(history) - 1 - opts.window)]
        stalled = abs(ref - f) <= ftol * max(1.0, abs(f))
        if stalled and (gn <= opts.tol or len(history) > opts.window):
            return _Run(p, f, it - 1, gn, gn <= opts.tol)

        while True:
            z = -eta * r
            q = p * np.exp(z - z.max())
            q = _floor_normalise(q, floor, blocks)
            if boundary is not None and not active:
                q = _cap_boundary(q, boundary, cap)
            fq = value(q)
            if fq <= f - ARMIJO * max(np.dot(g, p - q), 0.0):
                break
            eta *= 0.5
            if eta < STEP_MIN:
                return _Run(p, f, it, gn, gn <= opts.tol)
        p, f = q, fq
        history.append(f)
        eta = min(eta * 2.0, STEP_MAX)
    return _Run(p, f, it, gn, False)


def _kkt_residual(g, p, floor, blocks):
    """Weighted projected-gradient norm and per-block multipliers."""
    at_floor = p <= floor * (1 + 1e-6)
    r = np.empty_like(g)
    lams = []
    for mask in blocks:
        inner = mask & ~at_floor
        if not inner.any():
            inner = mask
        lam = np.dot(p[inner], g[inner]) / p[inner].sum()
        r[mask] = g[mask] - lam
        lams.append(lam)
    free = ~(at_floor & (r > 0))
    return math.sqrt(np.sum(p[free] * r[free] ** 2)), free, lams


def newton_polish(es: EdgeSet, rho: float, run: _Run, opts: SolverOptions,
                  boundary: np.ndarray | None = None, cap: float | None = None,
                  max_steps: int = 30) -> _Run:
    """Refine a mirror-descent point by Newton steps on the stationarity system.

    Works in ``f = sqrt(p)``, where the condition reads
    ``M f - rho f (log p + 1) = lam f`` on the entries above the floor, with
    ``M`` the Dirichlet matrix of the edge set and one multiplier per mass
    block (two when the boundary cap binds).  The residual of this system is
    exactly the weighted projected-gradient norm, so steps are accepted only if
    they shrink that norm without raising the objective.
    """
    n = es.n
    u, v = es.edges[:, 0], es.edges[:, 1]
    A = sparse.coo_matrix((np.ones(len(u)), (u, v)), shape=(n, n))
    M = (sparse.diags(es.degree) - A - A.T).tocsr()
    floor = opts.floor
    p, f_val = run.p.copy(), run.value

    def blocks_for(p, g):
        if boundary is None:
            return [np.ones(n, dtype=bool)]
        mb = p[boundary].sum()
        gb = np.dot(p[boundary], g[boundary]) / mb
        gi = np.dot(p[~boundary], g[~boundary]) / (1.0 - mb)
        if mb >= cap * (1 - 1e-12) and gb < gi:
            return [boundary, ~boundary]
        return [np.ones(n, dtype=bool)]

    g = _gradient_unchecked(es, p, rho)
    blocks = blocks_for(p, g)
    gn, free, lams = _kkt_residual(g, p, floor, blocks)
    last_change = abs(run.value - f_val)
    steps = 0
    for steps in range(1, max_steps + 1):
        if gn <= opts.tol * 1e-3:
            break
        idx = np.flatnonzero(free)
        f = np.sqrt(p)
        lam_vec = np.zeros(n)
        for mask, lam in zip(blocks, lams):
            lam_vec[mask] = lam
        G = (M @ f - rho * f * (np.log(p) + 1) - lam_vec * f)[idx]
        J = M[idx][:, idx] - sparse.diags(rho * (np.log(p[idx]) + 3) + lam_vec[idx])
        k = len(blocks)
        border = sparse.csr_matrix(np.column_stack([-(f * m)[idx] for m in blocks]))
        K = sparse.bmat([[J, border], [border.T, None]], format="csc")
        rhs = np.concatenate([-G, np.zeros(k)])
        try:
            step = splu(K).solve(rhs)
        except RuntimeError:
            break
        df = step[: len(idx)]
        accepted = False
        alpha = 1.0
        for _ in range(8):
            fn = f.copy()
            fn[idx] += alpha * df
            q = np.maximum(fn, 0.0) ** 2
            q = _floor_normalise(q, floor, [(m, p[m].sum()) for m in blocks])
            if boundary is not None and len(blocks) == 1:
                q = _cap_boundary(q, boundary, cap)
            fq = _value_unchecked(es, q, rho)
            gq = _gradient_unchecked(es, q, rho)
            bq = blocks_for(q, gq)
            gnq, freeq, lamsq = _kkt_residual(gq, q, floor, bq)
            if gnq < gn and fq <= f_val + 1e-14 * max(1.0, abs(f_val)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        last_change = abs(f_val - fq)
        p, f_val, g, blocks, gn, free, lams = q, fq, gq, bq, gnq, freeq, lamsq
    ok = gn <= opts.tol and last_change <= opts.ftol * max(1.0, abs(f_val))
    return _Run(p, f_val, run.iterations + steps, gn, ok or (run.converged and gn <= opts.tol))


def _solve_from(es: EdgeSet, rho: float, p0: np.ndarray, opts: SolverOptions,
                boundary: np.ndarray | None = None, cap: float | None = None) -> _Run:
    """Mirror descent until it slows down, Newton polish, and more descent if needed."""

    def value(p):
        return _value_unchecked(es, p, rho)

    def grad(p):
        return _gradient_unchecked(es, p, rho)

    run = mirror_descent(value, grad, p0, opts, boundary, cap, ftol=max(opts.handover, opts.ftol))
    run = newton_polish(es, rho, run, opts, boundary, cap)
    if run.converged:
        return run
    budget = replace(opts, max_iter=max(opts.max_iter - run.iterations, 1))
    more = mirror_descent(value, grad, run.p, budget, boundary, cap)
    more = newton_polish(es, rho, more, opts, boundary, cap)
    more.iterations += run.iterations
    return more


def _best_of(runs: list[tuple[str, _Run]], es_value, rho, graph, constraint=None) -> OptResult:
    records = [StartRecord(lbl, r.value, r.iterations, r.grad_norm, r.converged, r.p) for lbl, r in runs]
    pool = [r for r in records if r.converged] or records
    best = min(pool, key=lambda s: s.value)
    p = best.minimiser
    active = None
    if constraint is not None:
        bmask, cap = constraint
        active = bool(p[bmask].sum() >= cap * (1 - 1e-9))
    res = OptResult(
        value=es_value(p),
        minimiser=p,
        iterations=best.iterations,
        grad_norm=best.grad_norm,
        restarts_used=len(records),
        converged=best.converged,
        rho=rho,
        graph=graph,
        starts=records,
        constraint_active=active,
    )
    if not best.converged:
        raise NonConvergence(f"no start converged within {max(r.iterations for r in records)} iterations", res)
    return res


# -- lower formula on the ball ---------------------------------------------

def _radial_problem(d: int, R: int, rho: float):
    n = np.array([sphere_size(d, r) for r in range(R + 1)], dtype=float)

    def value(s):
        a = s / n
        fa = np.sqrt(a)
        ie = np.sum(n[1:] * (fa[:-1] - fa[1:]) ** 2) + d * s[-1]
        return float(ie - rho * np.sum(s * np.log(a)))

    def grad(s):
        a = s / n
        fa = np.sqrt(a)
        da = np.zeros(R + 1)
        da[:-1] += n[1:] * (1 - fa[1:] / fa[:-1])
        da[1:] += n[1:] * (1 - fa[:-1] / fa[1:])
        da[-1] += d * n[-1]
        return da / n - rho * np.log(a) - rho

    return n, value, grad


def radial_warm_start(d: int, R: int, rho: float, opts: SolverOptions) -> np.ndarray:
    """Shell masses minimising the objective among shell-constant profiles."""
    n, value, grad = _radial_problem(d, R, rho)
    run = mirror_descent(value, grad, n / n.sum(), replace(opts, floor=opts.floor * 1e-3))
    return run.p


def _ball_starts(tree: TruncatedTree, rho: float, opts: SolverOptions) -> list[tuple[str, np.ndarray]]:
    d, R, N = tree.d, tree.R, tree.n_vertices
    depth = tree.depth
    shells = radial_warm_start(d, R, rho, opts)
    sizes = np.bincount(depth)
    starts = [("radial", (shells / sizes)[depth])]
    point = np.full(N, opts.floor)
    point[0] = 1.0
    starts.append(("point", point))
    starts.append(("uniform", np.full(N, 1.0 / N)))
    for beta in GEOMETRIC_RATES:
        starts.append((f"geometric{beta:g}", beta ** depth.astype(float)))
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, d, R]))
    for k in range(opts.n_random):
        starts.append((f"dirichlet{k}", rng.dirichlet(np.ones(N))))
    return starts


def solve_chi_lower(d: int, R: int, rho: float, opts: SolverOptions | None = None) -> OptResult:
    """Minimise Dirichlet form plus rho times entropy over the ball of radius R."""
    opts = opts or SolverOptions()
    if rho <= 0:
        raise ValueError("rho must be positive")
    tree = build_truncated_tree(RegularTreeSpec(d, R))
    es = edge_set(tree)
    if R == 0:
        p = np.ones(1)
        rec = StartRecord("point", float(d + 1), 0, 0.0, True, p)
        return OptResult(float(d + 1), p, 0, 0.0, 1, True, rho, tree, [rec])

    runs = [(lbl, _solve_from(es, rho, p0, opts)) for lbl, p0 in _ball_starts(tree, rho, opts)]
    return _best_of(runs, lambda p: objective(es, p, rho), rho, tree)


def principal_dirichlet_value(d: int, R: int, tol: float = 1e-13, max_iter: int = 100_000):
    """Infimum of the Dirichlet form alone over the ball, with its minimiser.

    Inverse power iteration on ``(d+1) I - A`` in the variable ``f = sqrt(p)``.
    """
    tree = build_truncated_tree(RegularTreeSpec(d, R))
    N = tree.n_vertices
    if N == 1:
        return float(d + 1), np.ones(1)
    M = (sparse.identity(N) * (d + 1) - tree.adjacency).tocsc()
    lu = splu(M)
    x = np.ones(N) / math.sqrt(N)
    lam = float(x @ (M @ x))
    for _ in range(max_iter):
        y = lu.solve(x)
        x = y / np.linalg.norm(y)
        lam = float(x @ (M @ x))
        if np.linalg.norm(M @ x - lam * x) <= tol * lam:
            break
    else:
        raise RuntimeError("inverse iteration did not converge")
    x = np.abs(x)
    return lam, x**2 / np.sum(x**2)


def uniform_ball_energy(d: int, R: int) -> float:
    """Closed form of the Dirichlet form of the uniform law on the ball."""
    return (d - 1) * (d + 1) * d**R / ((d + 1) * d**R - 2)


# -- scans ----------------------------------------------------------------

@dataclass
class ChiPoint:
    rho: float
    value: float
    grad_norm: float
    iterations: int
    restarts: int
    converged: bool
    shell_masses: np.ndarray
    error: str = ""


@dataclass
class ChiCurve:
    d: int
    R: int
    points: list[ChiPoint]

    @property
    def rhos(self) -> np.ndarray:
        return np.array([p.rho for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.points])

    def is_increasing(self) -> bool:
        return bool(np.all(np.diff(self.values) > 0))

    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.rhos)

    def lipschitz_ok(self) -> bool:
        return bool(np.all(self.slopes() <= (self.d + 1) / self.rhos[:-1]))

    def in_range(self) -> bool:
        v = self.values
        return bool(np.all((v > self.d - 1) & (v <= self.d + 1 + 1e-12)))

    def to_csv(self, path: str | Path, header: str = "") -> None:
        width = self.R + 1
        cols = ["rho", "value", "grad_norm", "iterations", "restarts"] + [f"shell_{r}" for r in range(width)]
        lines = [header.rstrip("\n")] if header else []
        lines.append(",".join(cols))
        for pt in self.points:
            sm = np.full(width, np.nan)
            sm[: len(pt.shell_masses)] = pt.shell_masses
            row = [repr(pt.rho), repr(pt.value), repr(pt.grad_norm), str(pt.iterations), str(pt.restarts)]
            row += [repr(float(x)) for x in sm]
            lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")


def _scan_point(args) -> ChiPoint:
    d, R, rho, opts = args
    try:
        res = solve_chi_lower(d, R, rho, opts)
        err = ""
    except NonConvergence as exc:
        res, err = exc.result, str(exc)
    return ChiPoint(rho, res.value, res.grad_norm, res.iterations, res.restarts_used,
                    res.converged, res.shell_masses, err)


def chi_scan(d: int, R: int, rho_grid, opts: SolverOptions | None = None, jobs: int = 1) -> ChiCurve:
    """Solve the lower formula along a strictly increasing grid of rho."""
    opts = opts or SolverOptions()
    grid = [float(r) for r in rho_grid]
    if not grid or any(r <= 0 for r in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("rho grid must be positive and strictly increasing")
    tasks = [(d, R, rho, replace(opts, seed=int(np.random.SeedSequence([opts.seed, i]).generate_state(1)[0])))
             for i, rho in enumerate(grid)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            points = list(ex.map(_scan_point, tasks))
    else:
        points = [_scan_point(t) for t in tasks]
    return ChiCurve(d, R, points)


# -- minimiser structure -----------------------------------------------------

@dataclass
class MinimiserReport:
    centre: int
    monotone: bool
    positive: bool
    min_entry: float
    tail_sum: float
    tail_bound: float
    tail_ok: bool
    shell_masses: np.ndarray


def _distances(adj, source: int) -> np.ndarray:
    return csgraph.shortest_path(adj, indices=source, unweighted=True, directed=False).astype(np.int64)


def minimiser_diagnostics(opt: OptResult, rho: float | None = None, rtol: float = 1e-6) -> MinimiserReport:
    """Check monotone decay away from the argmax, positivity and the shell tail bound.

    Monotonicity is tested edge by edge along the tree rooted at the argmax:
    every vertex may exceed its parent (toward the argmax) by at most
    ``rtol`` relative to the parent's value, to absorb solver tolerance.
    """
    rho = opt.rho if rho is None else rho
    graph, p = opt.graph, opt.minimiser
    if isinstance(graph, TruncatedTree):
        adj = graph.adjacency
        shell_masses = np.bincount(graph.depth, weights=p)
    else:
        es = edge_set(graph, "tilde")
        adj = sparse.coo_matrix((np.ones(len(es.edges)), (es.edges[:, 0], es.edges[:, 1])),
                                shape=(es.n, es.n)).tocsr()
        shell_masses = np.bincount(graph.depth, weights=p)
    centre = int(np.argmax(p))
    dist = _distances(adj, centre)
    coo = sparse.triu(adj, format="coo")
    u, v = coo.row, coo.col
    near = np.where(dist[u] < dist[v], u, v)
    far = np.where(dist[u] < dist[v], v, u)
    monotone = bool(np.all(p[far] <= p[near] * (1 + rtol) + 1e-15))
    radii = np.arange(len(shell_masses))
    tail = float(np.sum(shell_masses * np.log(radii + 1)))
    bound = (graph.d + 1) / rho
    return MinimiserReport(
        centre=centre,
        monotone=monotone,
        positive=bool(np.all(p > 0)),
        min_entry=float(p.min()),
        tail_sum=tail,
        tail_bound=bound,
        tail_ok=tail <= bound,
        shell_masses=shell_masses,
    )


# -- upper formula on the unit ------------------------------------------------

def _unit_starts(unit: UnitGraph, opts: SolverOptions) -> list[tuple[str, np.ndarray]]:
    N = unit.n_vertices
    es = edge_set(unit, "tilde")
    adj = sparse.coo_matrix((np.ones(len(es.edges)), (es.edges[:, 0], es.edges[:, 1])), shape=(N, N)).tocsr()
    centre = unit.interior_vertex
    dist = _distances(adj, centre).astype(float)
    starts = []
    for lbl, v in (("interior", centre), ("tadpole", int(unit.tadpoles[0]) if len(unit.tadpoles) else 0),
                   ("below-top", 1)):
        p = np.full(N, opts.floor)
        p[v] = 1.0
        starts.append((lbl, p))
    starts.append(("uniform", np.full(N, 1.0 / N)))
    for beta in GEOMETRIC_RATES:
        starts.append((f"geometric{beta:g}", beta**dist))
    rng = np.random.default_rng(np.random.SeedSequence([opts.seed, unit.d, unit.R, 1]))
    for k in range(opts.n_random):
        starts.append((f"dirichlet{k}", rng.dirichlet(np.ones(N))))
    return starts


def solve_chi_upper(d: int, R: int, rho: float, opts: SolverOptions | None = None) -> OptResult:
    """Minimise over the unit with tilde edges subject to ``p(boundary) <= 1/R``."""
    opts = opts or SolverOptions()
    if rho <= 0:
        raise ValueError("rho must be positive")
    unit = build_unit_graph(RegularTreeSpec(d, R))
    es = edge_set(unit, "tilde")
    bmask = unit.boundary_mask
    cap = 1.0 / R

    runs = [(lbl, _solve_from(es, rho, p0, opts, bmask, cap)) for lbl, p0 in _unit_starts(unit, opts)]
    return _best_of(runs, lambda p: objective(es, p, rho), rho, unit, (bmask, cap))


# -- lower-bound chain on the unit ----------------------------------------------

@dataclass
class AppendixETerms:
    i_tilde: float
    i_hat: float
    s_boundary: float
    s_top_star: float
    s_tadpole: float
    boundary_mass: float
    R: int

    @property
    def k3(self) -> float:
        return self.s_boundary + self.s_top_star + self.s_tadpole

    @property
    def boundary_constant(self) -> float:
        """R times the two boundary terms; at most d when ``p(boundary) <= 1/R``."""
        return self.R * (self.s_boundary + self.s_top_star)


def appendixE_lower_bound_terms(unit: UnitGraph, p) -> AppendixETerms:
    p = np.asarray(p, dtype=float)
    if len(p) != unit.n_vertices:
        raise ValueError("p does not match the unit")
    if np.any(p <= 0):
        raise ValueError("p must be strictly positive on the unit, tadpoles included")
    if abs(p.sum() - 1) > 1e-12:
        raise ValueError("p must sum to one")
    d = unit.d
    bottom = np.array([x for x in unit.leaves if x != unit.star], dtype=np.int64)
    tad = np.array([unit.tadpole_of[int(x)] for x in bottom], dtype=np.int64)
    po, ps = p[0], p[unit.star]
    s_boundary = d * float(np.sum(p[bottom]))
    s_top_star = float((math.sqrt(po) - math.sqrt(ps)) ** 2 + (d - 1) * (ps - math.sqrt(po * ps)))
    px, pt = p[bottom], p[tad]
    first = -np.sum(px * d * np.sqrt(d * pt / (d * px + pt)))
    second = np.sum(pt * (d + 1 - math.sqrt(d) * (np.sqrt(pt / (d * px + pt)) + np.sqrt((d * px + pt) / pt))))
    return AppendixETerms(
        i_tilde=objective(unit, p, 0.0, "tilde"),
        i_hat=objective(unit, p, 0.0, "hat"),
        s_boundary=s_boundary,
        s_top_star=s_top_star,
        s_tadpole=float(first + second),
        boundary_mass=float(p[unit.boundary_mask].sum()),
        R=unit.R,
    )


def F_function(w, d: int):
    """The tadpole weight function ``w (d+1 - sqrt(d)[sqrt(w/(d+w)) + sqrt((d+w)/w)])``."""
    w = np.asarray(w, dtype=float)
    return w * (d + 1 - math.sqrt(d) * (np.sqrt(w / (d + w)) + np.sqrt((d + w) / w)))


@dataclass
class FScanReport:
    d: int
    slope: float
    theta_c: float
    min_C: float | None
    required_C: float
    min_C_theta: float | None
    required_C_theta: float
    failing_w: float | None
    deficit_at_failing_w: float | None


def F_inequality_scan(d: int, w_grid, C_grid) -> FScanReport:
    """Smallest grid constant C with ``F(w) + C >= (1 - sqrt w)^2`` on the w grid.

    The same scan is done with the right-hand side scaled by the critical
    threshold.  When no grid C works for the unscaled bound, the w with the
    largest deficit is reported.
    """
    w = np.asarray(w_grid, dtype=float)
    if np.any(w <= 0):
        raise ValueError("w grid must be positive")
    C = np.sort(np.asarray(C_grid, dtype=float))
    theta_c = TreeReturn(d).threshold
    F = F_function(w, d)
    target = (1 - np.sqrt(w)) ** 2
    required = float(np.max(target - F))
    required_theta = float(np.max(theta_c * target - F))

    def smallest(req):
        ok = C[C >= req]
        return float(ok[0]) if len(ok) else None

    min_C = smallest(required)
    failing_w = deficit = None
    if min_C is None:
        k = int(np.argmax(target - F))
        failing_w, deficit = float(w[k]), float(target[k] - F[k])
    return FScanReport(d, d + 1 - 2 * math.sqrt(d), theta_c, min_C, required,
                       smallest(required_theta), required_theta, failing_w, deficit)
