"""Finite graphs cut out of the (d+1)-regular tree.

Three constructions are provided:

* :class:`TruncatedTree` -- the ball of radius ``R`` around the root, with the
  number of edges leaving the ball stored per vertex.
* :class:`UnitGraph` -- the periodised unit: a rooted tree of depth ``R - 1`` in
  which every vertex has ``d`` children, one tadpole hanging off every bottom
  leaf except the star leaf, and an optional edge between the top vertex and the
  star leaf.
* :class:`DepthLine` -- the birth-death chain on depths ``0..R`` plus the
  tadpole state ``R + 1``.

Vertices are numbered breadth first with children in increasing order, so all
indices are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import sparse

DEFAULT_VERTEX_CAP = 5_000_000


class InstanceTooLarge(ValueError):
    """Raised when a requested graph exceeds the configured vertex cap."""


@dataclass(frozen=True)
class RegularTreeSpec:
    d: int
    R: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"branching number d must be an integer >= 2, got {self.d!r}")
        if int(self.R) != self.R or self.R < 0:
            raise ValueError(f"radius R must be an integer >= 0, got {self.R!r}")


def ball_size(d: int, R: int) -> int:
    """Number of vertices of the ball of radius R (exact integer)."""
    if R == 0:
        return 1
    return 1 + (d + 1) * (d**R - 1) // (d - 1)


def sphere_size(d: int, r: int) -> int:
    """Number of vertices at distance exactly r from the root."""
    return 1 if r == 0 else (d + 1) * d ** (r - 1)


@dataclass(frozen=True, eq=False)
class TruncatedTree:
    """Ball B_R(O) in the (d+1)-regular tree.

    Attributes
    ----------
    spec : RegularTreeSpec
    parent : (N,) int array, -1 for the root
    depth : (N,) int array
    child_ptr, child_idx : CSR layout of the children lists
    exit_degree : (N,) int array, edges leaving the ball at each vertex
    """

    spec: RegularTreeSpec
    parent: np.ndarray
    depth: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    exit_degree: np.ndarray

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def R(self) -> int:
        return self.spec.R

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    def children(self, v: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[v] : self.child_ptr[v + 1]]

    def shell(self, r: int) -> np.ndarray:
        """Indices of the vertices at depth r (a contiguous range)."""
        lo = ball_size(self.d, r - 1) if r > 0 else 0
        return np.arange(lo, ball_size(self.d, r))

    @cached_property
    def edges(self) -> np.ndarray:
        """(N-1, 2) array of (parent, child) pairs."""
        child = np.arange(1, self.n_vertices)
        return np.column_stack([self.parent[1:], child])

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        n = self.n_vertices
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def neighbour_slots(self) -> np.ndarray:
        """(N, d+1) table of neighbours; -1 marks a slot leading out of the ball.

        Row ``v`` lists the parent first (root excepted) and then the children,
        so a uniform draw over the ``d + 1`` columns is one step of the walk.
        """
        n, d = self.n_vertices, self.d
        slots = np.full((n, d + 1), -1, dtype=np.int64)
        for v in range(n):
            nb = list(self.children(v))
            if v > 0:
                nb.insert(0, int(self.parent[v]))
            slots[v, : len(nb)] = nb
        return slots


def build_truncated_tree(spec: RegularTreeSpec, vertex_cap: int = DEFAULT_VERTEX_CAP) -> TruncatedTree:
    d, R = spec.d, spec.R
    n = ball_size(d, R)
    if n > vertex_cap:
        raise InstanceTooLarge(f"ball with d={d}, R={R} has {n} vertices (cap {vertex_cap})")

    parent = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    n_children = np.zeros(n, dtype=np.int64)
    for r in range(1, R + 1):
        lo, hi = ball_size(d, r - 1), ball_size(d, r)
        depth[lo:hi] = r
        if r == 1:
            parent[lo:hi] = 0
            n_children[0] = d + 1
        else:
            plo = ball_size(d, r - 2)
            parent[lo:hi] = plo + np.arange(hi - lo) // d
            n_children[plo:lo] = d

    child_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(n_children, out=child_ptr[1:])
    # children are numbered consecutively, so child lists are just index ranges
    child_idx = np.arange(1, n, dtype=np.int64)

    exit_degree = np.zeros(n, dtype=np.int64)
    if R == 0:
        exit_degree[0] = d + 1
    else:
        exit_degree[ball_size(d, R - 1) :] = d

    return TruncatedTree(spec, parent, depth, child_ptr, child_idx, exit_degree)


@dataclass(frozen=True, eq=False)
class UnitGraph:
    """The periodised unit W_R.

    Core vertices ``0 .. n_core-1`` form the rooted tree of depth ``R - 1``
    (vertex 0 is the top vertex O, every core vertex above the bottom layer has
    ``d`` children).  Tadpoles are numbered ``n_core ..`` in the order of the
    bottom leaves they hang off.
    """

    spec: RegularTreeSpec
    parent: np.ndarray
    depth: np.ndarray
    n_core: int
    leaves: np.ndarray
    star: int
    tadpoles: np.ndarray
    tadpole_of: dict = field(repr=False)
    top_star: bool = True

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def R(self) -> int:
        return self.spec.R

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Top vertex and all bottom leaves."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[0] = True
        mask[self.leaves] = True
        return mask

    @cached_property
    def is_tadpole(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.tadpoles] = True
        return mask

    @cached_property
    def tree_edges(self) -> np.ndarray:
        """Edges of the rooted core tree (the hat edge set)."""
        child = np.arange(1, self.n_core)
        return np.column_stack([self.parent[1 : self.n_core], child])

    @cached_property
    def tadpole_edges(self) -> np.ndarray:
        return np.column_stack([self.parent[self.tadpoles], self.tadpoles])

    @cached_property
    def extended_edges(self) -> np.ndarray:
        """Tree edges plus leaf-tadpole edges (the tilde edge set)."""
        return np.vstack([self.tree_edges, self.tadpole_edges])

    @cached_property
    def kernel(self) -> sparse.csr_matrix:
        """Embedded-chain transition matrix.

        Fixed biases: leaf -> tadpole d/(d+1), tadpole -> leaf 1, O -> star 1/(d+1),
        star -> O d/(d+1).  The remaining mass of each row is split uniformly
        over the vertex's other incident edges.
        """
        d, n = self.d, self.n_vertices
        rows, cols, vals = [], [], []
        for v in range(n):
            fixed: list[tuple[int, float]] = []
            free: list[int] = []
            if self.is_tadpole[v]:
                fixed.append((int(self.parent[v]), 1.0))
            else:
                if v > 0:
                    free.append(int(self.parent[v]))
                free.extend(int(c) for c in self._core_children(v))
                if v in self.tadpole_of:
                    fixed.append((self.tadpole_of[v], d / (d + 1)))
                if self.top_star and v == 0:
                    fixed.append((self.star, 1 / (d + 1)))
                if self.top_star and v == self.star:
                    fixed.append((0, d / (d + 1)))
            rest = 1.0 - sum(w for _, w in fixed)
            for c, w in fixed:
                rows.append(v); cols.append(c); vals.append(w)
            for c in free:
                rows.append(v); cols.append(c); vals.append(rest / len(free))
        # duplicate (row, col) pairs (R = 2: star is a child of O) are summed
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def _core_children(self, v: int) -> Iterable[int]:
        if self.depth[v] >= self.R - 1 or v >= self.n_core:
            return ()
        first = self.d * v + 1
        return range(first, first + self.d)

    @cached_property
    def interior_vertex(self) -> int:
        """A core vertex maximising the tree distance to the boundary set."""
        best_v, best = 0, -1
        bottom = self.R - 1
        for r in range(self.R):
            dist = min(r, bottom - r)
            if dist > best:
                best, best_v = dist, (self.d**r - 1) // (self.d - 1)
        return best_v


def build_unit_graph(spec: RegularTreeSpec, top_star: bool = True,
                     vertex_cap: int = DEFAULT_VERTEX_CAP) -> UnitGraph:
    d, R = spec.d, spec.R
    if R < 2:
        raise ValueError("the unit needs R >= 2 (a root layer and a leaf layer)")
    n_core = (d**R - 1) // (d - 1)
    n_leaves = d ** (R - 1)
    n_total = n_core + n_leaves - 1
    if n_total > vertex_cap:
        raise InstanceTooLarge(f"unit with d={d}, R={R} has {n_total} vertices (cap {vertex_cap})")

    parent = np.full(n_total, -1, dtype=np.int64)
    depth = np.zeros(n_total, dtype=np.int64)
    # heap layout: children of v are d*v+1 .. d*v+d
    idx = np.arange(1, n_core)
    parent[1:n_core] = (idx - 1) // d
    for r in range(1, R):
        depth[(d**r - 1) // (d - 1) : (d ** (r + 1) - 1) // (d - 1)] = r

    leaves = np.arange(n_core - n_leaves, n_core)
    star = int(leaves[-1])
    tadpoles = np.arange(n_core, n_total)
    parent[tadpoles] = leaves[:-1]
    depth[tadpoles] = R
    tadpole_of = {int(x): int(t) for x, t in zip(leaves[:-1], tadpoles)}
    return UnitGraph(spec, parent, depth, n_core, leaves, star, tadpoles, tadpole_of, top_star)


@dataclass(frozen=True)
class DepthLine:
    """Depth projection: states 0..R are depths, R+1 is the tadpole state."""

    d: int
    R: int

    def __post_init__(self):
        if self.d < 2 or self.R < 1:
            raise ValueError("DepthLine needs d >= 2 and R >= 1")

    @property
    def n_states(self) -> int:
        return self.R + 2

    def exact_kernel(self) -> list[list[Fraction]]:
        d, R = self.d, self.R
        K = [[Fraction(0)] * (R + 2) for _ in range(R + 2)]
        K[0][0] = Fraction(2, d + 1)
        K[0][1] = Fraction(d - 1, d + 1)
        for k in range(1, R + 1):
            K[k][k + 1] = Fraction(1, d + 1)
            K[k][k - 1] = Fraction(d, d + 1)
        K[R + 1][R] = Fraction(1)
        return K

    @cached_property
    def kernel(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self.exact_kernel()])


def build_depth_line(d: int, R: int) -> DepthLine:
    return DepthLine(d, R)


# -- plain-text adjacency format ------------------------------------------------
#
# One line per vertex: "index depth parent child_list exit_degree", where the
# parent of a root is -1 and child_list is comma separated ("-" when empty).
# Lines starting with '#' carry metadata (kind, d, R, star, tadpoles, top_star).


def _children_lists(parent: np.ndarray) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(len(parent))]
    for v, p in enumerate(parent):
        if p >= 0:
            out[p].append(v)
    return out


def dumps_graph(graph: TruncatedTree | UnitGraph) -> str:
    lines = []
    if isinstance(graph, TruncatedTree):
        lines.append(f"# kind=ball d={graph.d} R={graph.R}")
        exit_degree = graph.exit_degree
    else:
        lines.append(f"# kind=unit d={graph.d} R={graph.R} star={graph.star} "
                     f"top_star={int(graph.top_star)}")
        exit_degree = np.zeros(graph.n_vertices, dtype=np.int64)
    kids = _children_lists(graph.parent)
    for v in range(len(graph.parent)):
        cl = ",".join(map(str, kids[v])) or "-"
        lines.append(f"{v} {graph.depth[v]} {graph.parent[v]} {cl} {exit_degree[v]}")
    return "\n".join(lines) + "\n"


def write_graph(graph: TruncatedTree | UnitGraph, path: str | Path) -> None:
    Path(path).write_text(dumps_graph(graph))


def loads_graph(text: str) -> TruncatedTree | UnitGraph:
    """Parse the adjacency format and rebuild the graph it describes.

    The metadata line fixes (kind, d, R); the vertex lines are checked against
    the canonical construction so a corrupted file is rejected.
    """
    meta: dict[str, str] = {}
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                meta[k] = v
            continue
        idx, dep, par, cl, ex = line.split()
        kids = [] if cl == "-" else [int(c) for c in cl.split(",")]
        rows.append((int(idx), int(dep), int(par), kids, int(ex)))
    spec = RegularTreeSpec(int(meta["d"]), int(meta["R"]))
    if meta.get("kind") == "ball":
        graph = build_truncated_tree(spec)
    elif meta.get("kind") == "unit":
        graph = build_unit_graph(spec, top_star=bool(int(meta.get("top_star", "1"))))
    else:
        raise ValueError(f"unknown graph kind {meta.get('kind')!r}")
    if dumps_graph(graph).splitlines()[1:] != [
        f"{i} {dp} {p} {','.join(map(str, k)) or '-'} {e}" for i, dp, p, k, e in rows
    ]:
        raise ValueError("adjacency lines do not match the declared graph")
    return graph


def read_graph(path: str | Path) -> TruncatedTree | UnitGraph:
    return loads_graph(Path(path).read_text())
