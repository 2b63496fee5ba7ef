"""Dirichlet form, entropy and the double-exponential cumulant.

Edge sets are picked with a selector string:

``"ball"``
    tree edges of a :class:`TruncatedTree` plus the edges leaving the ball; an
    exit edge at ``x`` contributes ``p(x)``.
``"hat"``
    core tree edges of a :class:`UnitGraph`.
``"tilde"``
    core tree edges plus leaf-tadpole edges of a :class:`UnitGraph`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .tree_topology import TruncatedTree, UnitGraph

PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EdgeSet:
    n: int
    edges: np.ndarray  # (m, 2)
    exit: np.ndarray  # (n,) number of dangling edges per vertex

    @property
    def degree(self) -> np.ndarray:
        deg = np.bincount(self.edges.ravel(), minlength=self.n).astype(float)
        return deg + self.exit


def edge_set(graph: TruncatedTree | UnitGraph, selector: str | None = None) -> EdgeSet:
    if isinstance(graph, TruncatedTree):
        selector = selector or "ball"
        if selector != "ball":
            raise ValueError(f"selector {selector!r} does not apply to a ball")
        return EdgeSet(graph.n_vertices, graph.edges, graph.exit_degree.astype(float))
    selector = selector or "tilde"
    zero = np.zeros(graph.n_vertices)
    if selector == "hat":
        return EdgeSet(graph.n_vertices, graph.tree_edges, zero)
    if selector == "tilde":
        return EdgeSet(graph.n_vertices, graph.extended_edges, zero)
    raise ValueError(f"unknown edge selector {selector!r}")


def check_prob_vector(p, n: int | None = None) -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("probability vector must be one-dimensional")
    if n is not None and len(p) != n:
        raise ValueError(f"probability vector has {len(p)} entries, graph has {n} vertices")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probability vector has negative or non-finite entries")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"probability vector sums to {p.sum()!r}")
    return p


def _resolve(graph, p, selector):
    es = graph if isinstance(graph, EdgeSet) else edge_set(graph, selector)
    return es, check_prob_vector(p, es.n)


def dirichlet_energy(graph, p, selector: str | None = None) -> float:
    r"""Sum over the selected edges of :math:`(\sqrt{p(x)} - \sqrt{p(y)})^2`."""
    es, p = _resolve(graph, p, selector)
    f = np.sqrt(p)
    u, v = es.edges[:, 0], es.edges[:, 1]
    return float(np.sum((f[u] - f[v]) ** 2) + np.sum(es.exit * p))


def entropy(p) -> float:
    p = check_prob_vector(p)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def objective(graph, p, rho: float, selector: str | None = None) -> float:
    return dirichlet_energy(graph, p, selector) + rho * entropy(p)


def objective_gradient(graph, p, rho: float, selector: str | None = None) -> np.ndarray:
    """Gradient of the objective with respect to the entries of ``p``.

    Component ``y`` is ``deg(y) - sum_{z~y} sqrt(p(z)/p(y)) - rho*log p(y) - rho``
    with ``deg`` the number of selected edges at ``y`` (exit edges included).
    Requires ``p > 0``; callers apply a floor first.
    """
    es = graph if isinstance(graph, EdgeSet) else edge_set(graph, selector)
    p = np.asarray(p, dtype=float)
    if len(p) != es.n:
        raise ValueError(f"probability vector has {len(p)} entries, graph has {es.n} vertices")
    if np.any(p <= 0):
        raise ValueError("gradient needs strictly positive p; apply a floor first")
    return _gradient_unchecked(es, p, rho)


def _gradient_unchecked(es: EdgeSet, p: np.ndarray, rho: float) -> np.ndarray:
    f = np.sqrt(p)
    u, v = es.edges[:, 0], es.edges[:, 1]
    nb = np.bincount(u, weights=f[v], minlength=es.n) + np.bincount(v, weights=f[u], minlength=es.n)
    return es.degree - nb / f - rho * np.log(p) - rho


def _value_unchecked(es: EdgeSet, p: np.ndarray, rho: float) -> float:
    f = np.sqrt(p)
    u, v = es.edges[:, 0], es.edges[:, 1]
    ie = np.sum((f[u] - f[v]) ** 2) + np.sum(es.exit * p)
    nz = p[p > 0]
    return float(ie - rho * np.sum(nz * np.log(nz)))


def double_exp_cumulant(u, rho: float):
    """H(u) = log Gamma(rho*u + 1), the cumulant of the double-exponential law."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("H is only evaluated for u >= 0")
    out = gammaln(rho * u + 1.0)
    return float(out) if out.ndim == 0 else out


def scaling_defect(c, t: float, rho: float):
    """(H(ct) - c H(t)) / t, which tends to rho*c*log(c) as t grows."""
    c = np.asarray(c, dtype=float)
    if np.any((c < 0) | (c > 1)):
        raise ValueError("c must lie in [0, 1]")
    if t <= 0:
        raise ValueError("t must be positive")
    out = (double_exp_cumulant(c * t, rho) - c * double_exp_cumulant(t, rho)) / t
    return float(out) if np.ndim(out) == 0 else out
