"""Monte Carlo engines: killed walk on the ball, depth chain and unit walk.

Random streams are always derived from a caller-supplied seed or generator.
Batched runs are split into fixed-size chunks, each with its own child stream
spawned by a counter, so results do not depend on how chunks are scheduled.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .functionals import check_prob_vector
from .sojourn import TreeReturn, sample_sojourn, sample_tree_return_doob
from .tree_topology import DepthLine, RegularTreeSpec, TruncatedTree, UnitGraph, build_truncated_tree

CHUNK = 10_000
Z95 = 1.959963984540054
PATH_BLOCK = 1 << 15


def _as_rng(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


@dataclass
class LocalTimeRecord:
    occupation: np.ndarray
    horizon: float
    survived: bool = True
    kill_time: float | None = None
    seed: int | None = None
    n_jumps: int = 0
    batches: np.ndarray | None = field(default=None, repr=False)

    @property
    def elapsed(self) -> float:
        return self.horizon if self.kill_time is None else min(self.horizon, self.kill_time)

    @property
    def profile(self) -> np.ndarray:
        return self.occupation / self.occupation.sum()


# -- killed walk on the ball ------------------------------------------------------

def simulate_killed_walk(tree: TruncatedTree, t: float, rng) -> LocalTimeRecord:
    """One run of the walk killed on leaving the ball, up to time ``t``."""
    if t <= 0:
        raise ValueError("t must be positive")
    rng, seed = _as_rng(rng)
    d = tree.d
    slots = tree.neighbour_slots
    occ = np.zeros(tree.n_vertices)
    x, now, jumps = 0, 0.0, 0
    while True:
        hold = rng.exponential(1.0 / (d + 1))
        if now + hold >= t:
            occ[x] += t - now
            return LocalTimeRecord(occ, t, True, None, seed, jumps)
        occ[x] += hold
        now += hold
        jumps += 1
        y = slots[x, rng.integers(d + 1)]
        if y < 0:
            return LocalTimeRecord(occ, t, False, now, seed, jumps)
        x = int(y)


def _killed_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    """Occupation matrix and survival flags for one chunk of independent runs."""
    d, R, t, n, seed_seq, keep_occ = args
    tree = build_truncated_tree(RegularTreeSpec(d, R))
    rng = np.random.default_rng(seed_seq)
    slots = tree.neighbour_slots
    pos = np.zeros(n, dtype=np.int64)
    now = np.zeros(n)
    occ = np.zeros((n, tree.n_vertices)) if keep_occ else None
    survived = np.zeros(n, dtype=bool)
    active = np.arange(n)
    while active.size:
        hold = rng.exponential(1.0 / (d + 1), size=active.size)
        done = now[active] + hold >= t
        stay = np.where(done, t - now[active], hold)
        if keep_occ:
            occ[active, pos[active]] += stay
        survived[active[done]] = True
        active, hold = active[~done], hold[~done]
        now[active] += hold
        nxt = slots[pos[active], rng.integers(d + 1, size=active.size)]
        alive = nxt >= 0
        pos[active[alive]] = nxt[alive]
        active = active[alive]
    return occ, survived


def _chunk_tasks(d, R, t, n, rng: np.random.Generator, keep_occ):
    sizes = [CHUNK] * (n // CHUNK) + ([n % CHUNK] if n % CHUNK else [])
    seqs = np.random.SeedSequence(int(rng.integers(2**63))).spawn(len(sizes))
    return [(d, R, t, m, s, keep_occ) for m, s in zip(sizes, seqs)]


def simulate_killed_batch(d: int, R: int, t: float, n: int, rng, keep_occupation: bool = True,
                          jobs: int = 1) -> tuple[np.ndarray | None, np.ndarray]:
    """Run ``n`` independent killed walks; returns (occupations, survival flags)."""
    if t <= 0 or n < 1:
        raise ValueError("need t > 0 and n >= 1")
    rng, _ = _as_rng(rng)
    tasks = _chunk_tasks(d, R, t, n, rng, keep_occupation)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_killed_chunk, tasks))
    else:
        parts = [_killed_chunk(a) for a in tasks]
    survived = np.concatenate([s for _, s in parts])
    occ = np.vstack([o for o, _ in parts]) if keep_occupation else None
    return occ, survived


@dataclass
class ExponentEstimate:
    """An exponent ``-(1/t) log(mean)`` with a normal-approximation CI on log scale."""

    estimate: float
    ci_lo: float
    ci_hi: float
    n: int
    t: float
    successes: int
    lower_bound_only: bool = False
    method: str = "delta method, normal approximation on log scale"

    def brackets(self, value: float, slack: float = 0.0) -> bool:
        return self.ci_lo - slack <= value <= self.ci_hi + slack

    def csv_row(self) -> str:
        return ",".join(repr(float(x)) for x in (self.estimate, self.ci_lo, self.ci_hi)) + f",{self.n},{self.t!r}"


SUMMARY_COLUMNS = "estimate,ci_lo,ci_hi,n,t"


def _exponent_from_weights(w: np.ndarray, t: float) -> ExponentEstimate:
    n = len(w)
    k = int(np.count_nonzero(w))
    mean = float(np.mean(w))
    if mean <= 0 or k == 0:
        # rule of three: with no successes the mean is below 3/n at 95 %
        bound = -math.log(3.0 / n) / t
        return ExponentEstimate(bound, bound, math.inf, n, t, 0, True)
    se = float(np.std(w, ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    est = -math.log(mean) / t
    half = Z95 * se / mean / t
    return ExponentEstimate(est, est - half, est + half, n, t, k)


def estimate_survival_exponent(d: int, R: int, t: float, n: int, rng, jobs: int = 1) -> ExponentEstimate:
    """``-(1/t) log`` of the surviving fraction of ``n`` killed walks."""
    if n < 1000:
        raise ValueError("n must be at least 1000")
    _, survived = simulate_killed_batch(d, R, t, n, rng, keep_occupation=False, jobs=jobs)
    return _exponent_from_weights(survived.astype(float), t)


def _entropy_rows(L: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(L > 0, L * np.log(L), 0.0)
    return -terms.sum(axis=1)


def estimate_mass_exponents(d: int, R: int, rhos, t: float, n: int, rng, jobs: int = 1) -> list[ExponentEstimate]:
    """Mass exponents for several rho values from one common set of runs."""
    if t > 30:
        raise ValueError("t above 30 makes the estimator useless; keep t <= 30")
    occ, survived = simulate_killed_batch(d, R, t, n, rng, keep_occupation=True, jobs=jobs)
    J = _entropy_rows(occ / t)
    out = []
    for rho in rhos:
        if rho < 0:
            raise ValueError("rho must be non-negative")
        w = np.where(survived, np.exp(-rho * t * J), 0.0)
        out.append(_exponent_from_weights(w, t))
    return out


def estimate_mass_exponent(d: int, R: int, rho: float, t: float, n: int, rng, jobs: int = 1) -> ExponentEstimate:
    """``-(1/t) log E[exp(-rho t J(L_t)); survival]`` for the killed walk."""
    return estimate_mass_exponents(d, R, [rho], t, n, rng, jobs)[0]


def write_runs_csv(path: str | Path, seed: int | None, t: float, occ: np.ndarray, survived: np.ndarray,
                   header: str = "") -> None:
    lines = [header.rstrip("\n")] if header else []
    lines.append("seed,t,survived," + ",".join(f"occ_{i}" for i in range(occ.shape[1])))
    s = "" if seed is None else str(seed)
    for row, alive in zip(occ, survived):
        lines.append(f"{s},{t!r},{int(alive)}," + ",".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


# -- Markov renewal paths ------------------------------------------------------------

def _renewal_path(cum: list[np.ndarray], targets: list[np.ndarray], special: np.ndarray, d: int,
                  start: int, t: float, rng: np.random.Generator, sampler: str):
    """States and sojourns of a Markov renewal path truncated at time ``t``."""
    states_all, hold_all = [], []
    x, total = start, 0.0
    law = TreeReturn(d)
    while True:
        u = rng.random(PATH_BLOCK)
        states = np.empty(PATH_BLOCK, dtype=np.int64)
        for i in range(PATH_BLOCK):
            states[i] = x
            x = int(targets[x][np.searchsorted(cum[x], u[i], side="right")])
        hold = np.empty(PATH_BLOCK)
        sp = special[states]
        hold[~sp] = rng.exponential(1.0 / (d + 1), size=int((~sp).sum()))
        m = int(sp.sum())
        if m:
            hold[sp] = sample_tree_return_doob(d, rng, m) if sampler == "doob" else sample_sojourn(law, rng, m)
        ends = total + np.cumsum(hold)
        if ends[-1] >= t:
            k = int(np.searchsorted(ends, t, side="left"))
            hold = hold[: k + 1].copy()
            hold[k] = t - (ends[k - 1] if k else total)
            states_all.append(states[: k + 1])
            hold_all.append(hold)
            break
        states_all.append(states)
        hold_all.append(hold)
        total = float(ends[-1])
    return np.concatenate(states_all), np.concatenate(hold_all)


def _batch_occupation(states, hold, n_states, t, n_batches):
    bounds = np.linspace(0.0, t, n_batches + 1)
    ends = np.cumsum(hold)
    ends[-1] = t
    cuts = np.union1d(ends, bounds[1:-1])
    starts = np.concatenate([[0.0], cuts[:-1]])
    seg = np.searchsorted(ends, starts, side="right")
    seg = np.minimum(seg, len(states) - 1)
    batch = np.minimum(np.searchsorted(bounds, starts, side="right") - 1, n_batches - 1)
    key = batch * n_states + states[seg]
    out = np.bincount(key, weights=cuts - starts, minlength=n_batches * n_states)
    return out.reshape(n_batches, n_states)


def _rows(kernel) -> tuple[list[np.ndarray], list[np.ndarray]]:
    K = sparse.csr_matrix(kernel)
    cum, targets = [], []
    for i in range(K.shape[0]):
        lo, hi = K.indptr[i], K.indptr[i + 1]
        c = np.cumsum(K.data[lo:hi])
        c[-1] = 1.0
        cum.append(c[:-1])
        targets.append(K.indices[lo:hi])
    return cum, targets


def simulate_depth_chain(line: DepthLine, t: float, rng, sampler: str = "mixture",
                         n_batches: int = 50) -> LocalTimeRecord:
    """Depth-projected renewal chain: Exp(d+1) sojourns on 0..R, tree returns on R+1."""
    if t <= 0:
        raise ValueError("t must be positive")
    if sampler not in ("mixture", "doob"):
        raise ValueError("sampler must be 'mixture' or 'doob'")
    rng, seed = _as_rng(rng)
    special = np.zeros(line.n_states, dtype=bool)
    special[-1] = True
    cum, targets = _rows(line.kernel)
    states, hold = _renewal_path(cum, targets, special, line.d, 0, t, rng, sampler)
    batches = _batch_occupation(states, hold, line.n_states, t, n_batches)
    occ = np.bincount(states, weights=hold, minlength=line.n_states)
    return LocalTimeRecord(occ, t, True, None, seed, len(states) - 1, batches)


def batch_standard_errors(record: LocalTimeRecord) -> np.ndarray:
    """Batch-means standard error of each profile entry."""
    b = record.batches
    prof = b / b.sum(axis=1, keepdims=True)
    return prof.std(axis=0, ddof=1) / math.sqrt(len(prof))


def depth_zero_profile(d: int, R: int) -> np.ndarray:
    """Unique zero of the depth rate function: 1/2, (d-1)/2 d^-k, ..., d^-R / 2."""
    k = np.arange(1, R + 1)
    return np.concatenate([[0.5], 0.5 * (d - 1) * float(d) ** -k, [0.5 * float(d) ** -R]])


def depth_rate_function(d: int, R: int, p) -> float:
    """Rate function of the depth profile over the states 0..R+1."""
    if R < 1:
        raise ValueError("R must be >= 1")
    p = check_prob_vector(p, R + 2)
    s = math.sqrt
    val = (s((d - 1) * p[0]) - s(d * p[1])) ** 2
    for k in range(1, R):
        val += (s(p[k]) - s(d * p[k + 1])) ** 2
    val += (s(p[R] + p[R + 1]) - s(d * p[R + 1])) ** 2
    return float(val)


def simulate_unit_walk(unit: UnitGraph, t: float, rng, sampler: str = "mixture",
                       n_batches: int = 50) -> LocalTimeRecord:
    """Renewal walk on the unit: Exp(d+1) sojourns on core vertices, tree returns on tadpoles."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not unit.top_star:
        raise ValueError("the unit walk needs the top-star edge")
    rng, seed = _as_rng(rng)
    cum, targets = _rows(unit.kernel)
    states, hold = _renewal_path(cum, targets, unit.is_tadpole, unit.d, 0, t, rng, sampler)
    n = unit.n_vertices
    batches = _batch_occupation(states, hold, n, t, n_batches)
    occ = np.bincount(states, weights=hold, minlength=n)
    return LocalTimeRecord(occ, t, True, None, seed, len(states) - 1, batches)


def boundary_fraction(unit: UnitGraph, record: LocalTimeRecord) -> float:
    return float(record.occupation[unit.boundary_mask].sum() / record.horizon)
