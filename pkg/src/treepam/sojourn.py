"""Sojourn-time laws of the renewal walks and their Legendre transforms.

Two laws appear:

* ``ExpRate(d + 1)`` -- exponential holding time with rate ``d + 1``;
* ``TreeReturn(d)`` -- the return time to the root of the rooted tree,
  conditioned on returning, built from ``2K - 1`` exponential holding times
  where ``2K`` is the number of steps of the excursion.

For both we provide the cumulant generating function ``cgf`` (value ``inf``
beyond the threshold), its Legendre transform, the maximiser ``theta(alpha)``,
the tangent intercept ``mu(alpha) = cgf(theta(alpha))`` and its inverse.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

THETA_BRACKET = 1e6
PMF_TAIL_CAP = 1e-14


@dataclass(frozen=True)
class ExpRate:
    """Exponential holding time; on the (d+1)-regular tree the rate is d + 1."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("rate must be positive")

    @classmethod
    def for_tree(cls, d: int) -> "ExpRate":
        return cls(d + 1)

    @property
    def threshold(self) -> float:
        """cgf is finite for theta strictly below this value."""
        return float(self.rate)

    @property
    def mean(self) -> float:
        return 1.0 / self.rate

    def cgf(self, theta: float) -> float:
        if theta >= self.threshold:
            return math.inf
        return math.log(self.rate / (self.rate - theta))

    def _dcgf_gap(self, gap: float) -> float:
        # derivative at theta = threshold - gap
        return 1.0 / gap

    def _cgf_gap(self, gap: float) -> float:
        return math.log(self.rate / gap)


@dataclass(frozen=True)
class TreeReturn:
    d: int

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")

    @property
    def return_probability(self) -> float:
        return 1.0 / self.d

    @property
    def threshold(self) -> float:
        """theta_c = (sqrt(d) - 1)^2; cgf is finite up to and including it."""
        return (math.sqrt(self.d) - 1.0) ** 2

    @property
    def mean(self) -> float:
        return alpha_c(self)

    def cgf(self, theta: float) -> float:
        if theta > self.threshold:
            return math.inf
        return self._cgf_gap(self.threshold - theta)

    # With c = (d+1-theta)/2 the moment generating function is c - sqrt(c^2 - d).
    # Writing theta = theta_c - gap gives c - sqrt(d) = gap/2 exactly, which keeps
    # c^2 - d accurate next to the cusp.
    def _mgf_parts(self, gap: float):
        sd = math.sqrt(self.d)
        c = sd + gap / 2.0
        root = math.sqrt((gap / 2.0) * (c + sd))
        return c, root

    def _cgf_gap(self, gap: float) -> float:
        c, root = self._mgf_parts(gap)
        # c - root == d / (c + root), which avoids cancellation for large c
        return math.log(self.d / (c + root))

    def _dcgf_gap(self, gap: float) -> float:
        c, root = self._mgf_parts(gap)
        if root == 0.0:
            return math.inf
        g = self.d / (c + root)
        dg = 0.5 * (c / root - 1.0)
        return dg / g


SojournLaw = ExpRate | TreeReturn


def cgf(law: SojournLaw, theta: float) -> float:
    return law.cgf(theta)


def cgf_derivative(law: SojournLaw, theta: float) -> float:
    gap = law.threshold - theta
    if gap < 0 or (gap == 0 and isinstance(law, ExpRate)):
        return math.inf
    return law._dcgf_gap(gap)


def cgf_inverse(law: SojournLaw, m: float) -> float:
    """Closed-form inverse of the cgf on its increasing branch."""
    if isinstance(law, ExpRate):
        return law.rate * (1.0 - math.exp(-m))
    return s_function(math.exp(m), law.d)


def s_function(beta: float, d: int) -> float:
    """S(beta) = d + 1 - beta - d/beta, the inverse of exp(cgf) for TreeReturn."""
    if not 0 < beta <= math.sqrt(d) * (1 + 1e-15):
        raise ValueError(f"beta must lie in (0, sqrt(d)], got {beta}")
    # d + 1 - beta - d/beta rewritten around the cusp to avoid cancellation
    return (math.sqrt(d) - 1.0) ** 2 - (math.sqrt(d) - beta) ** 2 / beta


def legendre_exp_closed(alpha: float, d: int) -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    x = alpha * (d + 1)
    return x - 1.0 - math.log(x)


def _theta_gap(law: SojournLaw, alpha: float) -> float:
    """Distance from theta(alpha) to the threshold, found on a log scale."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    f = lambda s: law._dcgf_gap(math.exp(s)) - alpha  # decreasing in s
    hi = math.log(law.threshold + THETA_BRACKET)
    while f(hi) > 0:
        hi += 5.0
        if hi > 700:
            raise ArithmeticError(f"no bracket for theta(alpha) at alpha={alpha}")
    lo = -5.0
    while f(lo) < 0:
        lo -= 5.0
        if lo < -745:
            raise ArithmeticError(f"no bracket for theta(alpha) at alpha={alpha}")
    s = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(s)


def theta_of_alpha(law: SojournLaw, alpha: float) -> float:
    return law.threshold - _theta_gap(law, alpha)


def legendre_numeric(law: SojournLaw, alpha: float) -> tuple[float, float]:
    """Return ``(L(alpha), theta(alpha))`` with ``L(alpha) = sup_theta [alpha theta - cgf(theta)]``."""
    gap = _theta_gap(law, alpha)
    theta = law.threshold - gap
    return alpha * theta - law._cgf_gap(gap), theta


def mu(law: SojournLaw, alpha: float) -> float:
    """Tangent intercept: cgf evaluated at the maximiser theta(alpha)."""
    return law._cgf_gap(_theta_gap(law, alpha))


def mu_sup(law: SojournLaw) -> float:
    return math.inf if isinstance(law, ExpRate) else 0.5 * math.log(law.d)


def mu_inverse(law: SojournLaw, m: float) -> float:
    """Solve ``mu(alpha) = m`` for alpha by bracketed root finding on log(alpha)."""
    top = mu_sup(law)
    if m > top:
        raise ValueError(f"{m} is outside the range of mu (sup {top})")
    if m == top:
        return math.inf
    f = lambda s: mu(law, math.exp(s)) - m
    lo, hi = -1.0, 1.0
    while f(lo) > 0:
        lo -= 5.0
        if lo < -700:
            raise ArithmeticError(f"no bracket for mu^-1({m})")
    while f(hi) < 0:
        hi += 5.0
        if hi > 700:
            raise ArithmeticError(f"no bracket for mu^-1({m})")
    return math.exp(brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500))


@lru_cache(maxsize=None)
def alpha_c(law: SojournLaw) -> float:
    """Mean sojourn time, i.e. cgf'(0), by Richardson-extrapolated central differences."""
    if isinstance(law, ExpRate):
        return law.mean

    def central(h):
        return (law.cgf(h) - law.cgf(-h)) / (2 * h)

    # Richardson table on h, h/2, h/4, ...; the error expansion is in even powers of h
    h = 1e-2
    table = [[central(h / 2**i)] for i in range(6)]
    for j in range(1, 6):
        for i in range(j, 6):
            table[i].append(table[i][j - 1] + (table[i][j - 1] - table[i - 1][j - 1]) / (4**j - 1))
    return table[-1][-1]


# -- return-time law -------------------------------------------------------------


def return_pmf_table(kmax: int, d: int) -> np.ndarray:
    """Array of P(2K = 2k) for k = 1..kmax.

    Uses the coefficient recurrence ``p_{2(k+1)} = p_{2k} * 2(2k-1)/(k+1) * p q``
    with up-probability p = 1/(d+1) and down-probability q = d/(d+1), starting
    from p_2 = q.
    """
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    pq = d / (d + 1) ** 2
    out = np.empty(kmax)
    out[0] = d / (d + 1)
    for k in range(1, kmax):
        out[k] = out[k - 1] * (2 * (2 * k - 1) / (k + 1)) * pq
    return out


def return_pmf(k: int, d: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(return_pmf_table(k, d)[-1])


def return_pmf_exact(k: int, d: int) -> Fraction:
    """Catalan form C_{k-1} p^{k-1} q^k in exact rational arithmetic."""
    if k < 1:
        raise ValueError("k must be >= 1")
    catalan = math.comb(2 * (k - 1), k - 1) // k
    return catalan * Fraction(1, d + 1) ** (k - 1) * Fraction(d, d + 1) ** k


@lru_cache(maxsize=None)
def _truncated_pmf(d: int) -> tuple[np.ndarray, int]:
    pmf = return_pmf_table(20, d)
    while pmf[-1] > 1e-20:
        pmf = return_pmf_table(2 * len(pmf), d)
    tail = np.cumsum(pmf[::-1])[::-1]  # tail[i] = sum_{j >= i} pmf[j]
    # first K whose tail beyond it is below the cap
    kcap = int(np.argmax(np.append(tail[1:], 0.0) < PMF_TAIL_CAP)) + 1
    trunc = pmf[:kcap] / pmf[:kcap].sum()
    return trunc, kcap


def tree_return_cap(d: int) -> int:
    """Largest excursion half-length K used by the mixture sampler."""
    return _truncated_pmf(d)[1]


def sample_sojourn(law: SojournLaw, rng: np.random.Generator, size=None):
    """Draw sojourn times.

    TreeReturn draws K from the (truncated, renormalised) return pmf and then a
    sum of 2K - 1 exponentials of rate d + 1, i.e. a Gamma(2K - 1) variable.
    """
    if isinstance(law, ExpRate):
        return rng.exponential(1.0 / law.rate, size=size)
    pmf, kcap = _truncated_pmf(law.d)
    k = rng.choice(np.arange(1, kcap + 1), size=size, p=pmf)
    return rng.gamma(2 * np.asarray(k) - 1, 1.0 / (law.d + 1), size=size)


def sample_tree_return_doob(d: int, rng: np.random.Generator, size: int) -> np.ndarray:
    """Sample the conditioned return time by running the Doob-transformed walk.

    The depth of the transformed walk leaves the root, then moves towards the
    root with probability d/(d+1) and away with probability 1/(d+1); every
    visit to a non-root vertex costs an Exp(d+1) holding time.
    """
    depth = np.ones(size, dtype=np.int64)
    total = np.zeros(size)
    active = np.arange(size)
    while active.size:
        total[active] += rng.exponential(1.0 / (d + 1), size=active.size)
        up = rng.random(active.size) < d / (d + 1)
        depth[active] += np.where(up, -1, 1)
        active = active[depth[active] > 0]
    return total


def hitting_probability(depth: int, d: int) -> float:
    """Probability that simple random walk on the rooted tree ever reaches the root."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return float(d) ** (-depth)


def hitting_probability_mc(depth: int, d: int, n: int, rng: np.random.Generator,
                           escape_depth: int = 50) -> tuple[float, float]:
    """Monte Carlo estimate and standard error of :func:`hitting_probability`."""
    if depth == 0:
        return 1.0, 0.0
    pos = np.full(n, depth, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        towards_root = rng.random(active.size) < 1.0 / (d + 1)
        pos[active] += np.where(towards_root, -1, 1)
        active = active[(pos[active] > 0) & (pos[active] < escape_depth)]
    hits = np.mean(pos == 0)
    return float(hits), float(math.sqrt(hits * (1 - hits) / n))


def doob_kernel_row(d: int) -> tuple[float, float]:
    """Transition masses (towards root, each child) of the Doob walk off the root."""
    return d / (d + 1), 1.0 / (d * (d + 1))


# -- tables ---------------------------------------------------------------------


@dataclass
class LegendreTable:
    law: SojournLaw
    alpha: np.ndarray
    L: np.ndarray
    theta: np.ndarray
    mu: np.ndarray
    alpha_c: float
    theta_c: float

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "L", "theta", "mu"])
            for row in zip(self.alpha, self.L, self.theta, self.mu):
                w.writerow([repr(float(x)) for x in row])


def legendre_table(law: SojournLaw, alphas) -> LegendreTable:
    alphas = np.asarray(alphas, dtype=float)
    L = np.empty_like(alphas)
    th = np.empty_like(alphas)
    m = np.empty_like(alphas)
    for i, a in enumerate(alphas):
        L[i], th[i] = legendre_numeric(law, a)
        m[i] = a * th[i] - L[i]
    return LegendreTable(law, alphas, L, th, m, alpha_c(law), law.threshold)
