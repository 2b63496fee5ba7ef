import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treepam.simulator import (
    ExponentEstimate,
    SUMMARY_COLUMNS,
    _exponent_from_weights,
    batch_standard_errors,
    boundary_fraction,
    depth_rate_function,
    depth_zero_profile,
    estimate_mass_exponent,
    estimate_mass_exponents,
    estimate_survival_exponent,
    simulate_depth_chain,
    simulate_killed_batch,
    simulate_killed_walk,
    simulate_unit_walk,
    write_runs_csv,
)
from treepam.tree_topology import RegularTreeSpec, build_depth_line, build_truncated_tree, build_unit_graph
from treepam.variational import principal_dirichlet_value


def ball(d, R):
    return build_truncated_tree(RegularTreeSpec(d, R))


# -- killed walk ----------------------------------------------------------------------


@given(st.integers(2, 4), st.integers(0, 3), st.floats(0.1, 20.0), st.integers(0, 2**32))
@settings(max_examples=50)
def test_single_walk_conserves_time(d, R, t, seed):
    rec = simulate_killed_walk(ball(d, R), t, seed)
    assert np.all(rec.occupation >= 0)
    assert rec.occupation.sum() == pytest.approx(rec.elapsed, abs=1e-9)
    if not rec.survived:
        assert rec.kill_time < t
    assert rec.seed == seed


def test_single_walk_is_deterministic():
    a = simulate_killed_walk(ball(2, 3), 5.0, 11)
    b = simulate_killed_walk(ball(2, 3), 5.0, 11)
    assert np.array_equal(a.occupation, b.occupation) and a.kill_time == b.kill_time


def test_single_walk_rejects_bad_horizon():
    with pytest.raises(ValueError):
        simulate_killed_walk(ball(2, 1), 0.0, 1)


@given(st.integers(2, 4), st.integers(0, 3), st.floats(0.1, 10.0), st.integers(0, 2**32))
@settings(max_examples=20, deadline=None)
def test_batch_conserves_time(d, R, t, seed):
    occ, survived = simulate_killed_batch(d, R, t, 300, seed)
    assert np.all(occ >= 0)
    totals = occ.sum(axis=1)
    assert np.allclose(totals[survived], t, atol=1e-9)
    assert np.all(totals[~survived] < t)


def test_batch_is_deterministic_and_chunk_parallel_safe():
    a = simulate_killed_batch(2, 2, 3.0, 25_000, 5)
    b = simulate_killed_batch(2, 2, 3.0, 25_000, 5, jobs=2)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_radius_zero_survival():
    _, survived = simulate_killed_batch(2, 0, 1.0, 10**5, 3, keep_occupation=False)
    p = math.exp(-3.0)
    se = math.sqrt(p * (1 - p) / len(survived))
    assert abs(survived.mean() - p) < 3 * se


def test_survival_exponent_star():
    oracle = 3 - math.sqrt(3)
    est = estimate_survival_exponent(2, 1, 8.0, 10**5, 1)
    assert est.brackets(oracle, 1 / 8)
    assert abs(est.estimate - oracle) < 0.1 * oracle + (est.ci_hi - est.ci_lo) / 2


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("R", [1, 2, 3])
def test_survival_exponent_matches_eigen_oracle(d, R):
    oracle, _ = principal_dirichlet_value(d, R)
    t = 8.0 / oracle
    est = estimate_survival_exponent(d, R, t, 10**5, 100 * d + R)
    assert est.successes > 0
    assert est.brackets(oracle, 1 / t)


def test_larger_ball_has_smaller_exponent():
    small = estimate_survival_exponent(2, 1, 12.0, 10**5, 2)
    large = estimate_survival_exponent(2, 3, 12.0, 10**5, 2)
    assert large.estimate < small.estimate


def test_bias_shrinks_when_horizon_doubles():
    oracle, _ = principal_dirichlet_value(2, 3)
    short = estimate_survival_exponent(2, 3, 5.0, 10**5, 4)
    long = estimate_survival_exponent(2, 3, 10.0, 10**5, 4)
    assert abs(long.estimate - oracle) < abs(short.estimate - oracle)


def test_survival_needs_enough_runs():
    with pytest.raises(ValueError):
        estimate_survival_exponent(2, 1, 1.0, 999, 1)


def test_zero_successes_give_a_lower_bound():
    est = _exponent_from_weights(np.zeros(1000), 10.0)
    assert est.lower_bound_only
    assert est.estimate == pytest.approx(-math.log(3 / 1000) / 10)
    assert est.ci_hi == math.inf


def test_summary_row_format():
    est = ExponentEstimate(1.5, 1.25, 1.75, 100, 2.0, 10)
    assert SUMMARY_COLUMNS == "estimate,ci_lo,ci_hi,n,t"
    assert est.csv_row() == "1.5,1.25,1.75,100,2.0"


def test_runs_csv(tmp_path):
    occ, survived = simulate_killed_batch(2, 1, 1.0, 5, 9)
    path = tmp_path / "runs.csv"
    write_runs_csv(path, 9, 1.0, occ, survived, header="# h")
    lines = path.read_text().splitlines()
    assert lines[0] == "# h"
    assert lines[1] == "seed,t,survived,occ_0,occ_1,occ_2,occ_3"
    assert len(lines) == 7
    assert lines[2].startswith("9,1.0,")


# -- mass exponent ------------------------------------------------------------------


def test_mass_exponent_at_zero_rho_is_survival_exponent():
    a = estimate_mass_exponent(2, 1, 0.0, 3.0, 20_000, 6)
    b = estimate_survival_exponent(2, 1, 3.0, 20_000, 6)
    assert a.estimate == pytest.approx(b.estimate, rel=1e-12)


def test_mass_exponent_increases_with_rho():
    ests = estimate_mass_exponents(2, 1, [0.5, 1.0, 2.0], 3.0, 20_000, 8)
    values = [e.estimate for e in ests]
    assert values[0] < values[1] < values[2]


def test_mass_exponent_rejects_long_horizon():
    with pytest.raises(ValueError):
        estimate_mass_exponent(2, 1, 1.0, 31.0, 1000, 1)


# -- depth chain --------------------------------------------------------------------


def test_depth_chain_profile_matches_zero():
    rec = simulate_depth_chain(build_depth_line(2, 5), 1e5, 0)
    se = batch_standard_errors(rec)
    target = depth_zero_profile(2, 5)
    assert np.all(np.abs(rec.profile - target) < 3 * se)
    assert rec.occupation.sum() == pytest.approx(1e5, abs=1e-6)


def test_depth_chain_seeds_and_doob_sampler_agree():
    line = build_depth_line(2, 3)
    a = simulate_depth_chain(line, 2e4, 1)
    b = simulate_depth_chain(line, 2e4, 2)
    c = simulate_depth_chain(line, 2e4, 3, sampler="doob")
    assert not np.array_equal(a.occupation, b.occupation)
    for other in (b, c):
        se = np.sqrt(batch_standard_errors(a) ** 2 + batch_standard_errors(other) ** 2)
        assert np.all(np.abs(a.profile - other.profile) < 4 * se)


def test_depth_chain_deterministic():
    line = build_depth_line(3, 2)
    a = simulate_depth_chain(line, 500.0, 4)
    b = simulate_depth_chain(line, 500.0, 4)
    assert np.array_equal(a.occupation, b.occupation)
    assert np.array_equal(a.batches, b.batches)
    assert a.batches.sum() == pytest.approx(500.0)


def test_depth_chain_rejects():
    with pytest.raises(ValueError):
        simulate_depth_chain(build_depth_line(2, 2), 10.0, 1, sampler="other")
    with pytest.raises(ValueError):
        simulate_depth_chain(build_depth_line(2, 2), -1.0, 1)


# -- depth rate function ------------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("R", range(1, 7))
def test_rate_function_zero(d, R):
    p = depth_zero_profile(d, R)
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert depth_rate_function(d, R, p) == pytest.approx(0.0, abs=1e-12)


def test_rate_function_positive_off_zero():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d, R = int(rng.integers(2, 5)), int(rng.integers(1, 7))
        p = depth_zero_profile(d, R) * np.exp(rng.normal(0, 0.3, R + 2))
        p /= p.sum()
        assert depth_rate_function(d, R, p) > 0


def test_rate_function_uniform_example():
    # direct evaluation at p = 1/4 everywhere, d = 2, R = 2
    q = 0.25
    expected = (math.sqrt(q) - math.sqrt(2 * q)) ** 2 * 2 + (math.sqrt(2 * q) - math.sqrt(2 * q)) ** 2
    assert depth_rate_function(2, 2, np.full(4, q)) == pytest.approx(expected, abs=1e-15)
    assert expected > 0


def test_rate_function_quadratic_near_zero():
    base = depth_zero_profile(3, 4)
    vals = []
    for eps in (1e-3, 5e-4, 2.5e-4):
        p = base.copy()
        p[1] += eps
        p /= p.sum()
        vals.append(depth_rate_function(3, 4, p) / eps**2)
    assert vals[0] > 0
    assert vals[1] == pytest.approx(vals[0], rel=0.05)
    assert vals[2] == pytest.approx(vals[1], rel=0.05)


def test_rate_function_rejects():
    with pytest.raises(ValueError):
        depth_rate_function(2, 2, [0.5, 0.6, -0.1, 0.0])
    with pytest.raises(ValueError):
        depth_rate_function(2, 2, [0.5, 0.5])


# -- unit walk ----------------------------------------------------------------------


def test_unit_walk_basic():
    unit = build_unit_graph(RegularTreeSpec(2, 3))
    rec = simulate_unit_walk(unit, 1e3, 5)
    again = simulate_unit_walk(unit, 1e3, 5)
    assert np.array_equal(rec.occupation, again.occupation)
    assert rec.occupation.sum() == pytest.approx(1e3)
    assert np.all(rec.occupation > 0)
    assert 0 < boundary_fraction(unit, rec) < 1


def test_unit_walk_profile_stable_across_seeds():
    unit = build_unit_graph(RegularTreeSpec(2, 3))
    a = simulate_unit_walk(unit, 1e5, 1)
    b = simulate_unit_walk(unit, 1e5, 2)
    se = np.sqrt(batch_standard_errors(a) ** 2 + batch_standard_errors(b) ** 2)
    assert np.all(np.abs(a.profile - b.profile) < 4 * se)


def test_unit_walk_transitions_follow_kernel():
    from treepam.simulator import _renewal_path, _rows

    unit = build_unit_graph(RegularTreeSpec(3, 3))
    cum, targets = _rows(unit.kernel)
    states, hold = _renewal_path(cum, targets, unit.is_tadpole, 3, 0, 200.0, np.random.default_rng(1), "mixture")
    K = unit.kernel.toarray()
    assert np.all(K[states[:-1], states[1:]] > 0)
    assert hold.sum() == pytest.approx(200.0)
    assert np.all(hold > 0)


def test_unit_walk_needs_top_star():
    unit = build_unit_graph(RegularTreeSpec(2, 3), top_star=False)
    with pytest.raises(ValueError):
        simulate_unit_walk(unit, 10.0, 1)
