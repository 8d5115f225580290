import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapnoise.core import dataset_from_records
from shapnoise.metrics import MetricKind, Utility
from shapnoise.model import TrainConfig
from shapnoise.shapley import (
    EfficiencyViolation,
    SamplerConfig,
    ShapleyRun,
    ShapleyVector,
    TooManyPlayersError,
    efficiency_gap,
    exact_game,
    exact_shapley,
    exact_shapley_multi,
    has_converged,
    mc_shapley,
    mc_shapley_multi,
    monte_carlo_game,
    permutation_marginals,
    sample_permutation,
    shapley_from_table,
)

from conftest import gaussian_pair
from oracles import direct_summation, permutation_enumeration

# from oracles.direct_summation on gaussian_pair(2, 3, seed=11, sep=2.0);
# permutation_enumeration agrees to 1e-16
FROZEN_N5 = {
    "accuracy": {0: 0.03166666666666666, 1: 0.06500000000000002, 2: 0.065, 3: 0.015000000000000027, 4: 0.02333333333333336},
    "recall": {0: -0.06666666666666667, 1: -0.025, 2: -0.025, 3: 0.4333333333333334, 4: 0.4333333333333334},
    "specificity": {0: 0.09722222222222222, 1: 0.125, 2: 0.125, 3: -0.2638888888888889, 4: -0.25},
}


# --- generic game engine -----------------------------------------------------


def test_glove_game():
    # players 0, 1 hold left gloves, player 2 the right one; a pair is worth 1
    def value(mask):
        left = (mask & 1) + (mask >> 1 & 1)
        right = mask >> 2 & 1
        return float(min(left, right))

    np.testing.assert_allclose(exact_game(3, value), [1 / 6, 1 / 6, 2 / 3], atol=1e-15)


def test_three_player_reference_game():
    table = {0: 0, 1: 12, 2: 8, 4: 4, 3: 20, 5: 13, 6: 18, 7: 19}
    np.testing.assert_allclose(
        exact_game(3, table.__getitem__), [47 / 6, 50 / 6, 17 / 6], atol=1e-12
    )


def test_null_player_stub():
    rng = np.random.default_rng(0)
    base = rng.uniform(size=1 << 5)
    # player 2 never changes the value: V(S) = base[S without 2]
    value = lambda mask: base[mask & ~(1 << 2)]
    sv = exact_game(5, value)
    assert sv[2] == pytest.approx(0.0, abs=1e-15)

    def game(rows, mask):
        return np.array([value(mask)])

    raw = monte_carlo_game(5, game, 1, SamplerConfig(max_permutations=50, early_stop=False))
    assert raw["means"][2, 0] == 0.0


def test_shapley_from_table_rejects_bad_length():
    with pytest.raises(ValueError):
        shapley_from_table(np.zeros(6))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_random_game_efficiency_and_permutation_form(n, seed):
    table = np.random.default_rng(seed).normal(size=1 << n)
    sv = shapley_from_table(table)
    assert math.fsum(sv) == pytest.approx(table[-1] - table[0], abs=1e-12)
    # permutation form over all n! orders as an independent route
    import itertools

    ref = np.zeros(n)
    for order in itertools.permutations(range(n)):
        mask = 0
        for p in order:
            ref[p] += table[mask | 1 << p] - table[mask]
            mask |= 1 << p
    ref /= math.factorial(n)
    np.testing.assert_allclose(sv, ref, atol=1e-12)


# --- dataset engines ---------------------------------------------------------


@pytest.mark.parametrize("kind", list(MetricKind))
def test_exact_matches_frozen_oracle(five_point_pair, kind):
    train, test = five_point_pair
    sv = exact_shapley(train, test, kind)
    assert sv.method == "exact" and sv.n_permutations == 0
    for i, v in FROZEN_N5[kind.value].items():
        assert sv.values[i] == pytest.approx(v, abs=1e-12)


def test_exact_matches_live_oracles():
    train, test = gaussian_pair(2, 3, seed=5, sep=1.5)
    for kind in MetricKind:
        sv = exact_shapley(train, test, kind)
        for oracle in (direct_summation, permutation_enumeration):
            ref = oracle(train, test, kind, TrainConfig())
            for i in sv.values:
                assert sv.values[i] == pytest.approx(ref[i], abs=1e-12)


def test_duplicate_points_get_equal_values():
    recs = [
        (0, [1.0, 0.5], "pos"),
        (1, [1.0, 0.5], "pos"),
        (2, [-1.0, 0.2], "neg"),
        (3, [-0.5, -1.0], "neg"),
        (4, [0.3, 0.1], "neg"),
    ]
    train = dataset_from_records(recs)
    _, test = gaussian_pair(4, 6, seed=2, sep=2.0)
    for sv in exact_shapley_multi(train, test, list(MetricKind)).values():
        assert abs(sv.values[0] - sv.values[1]) <= 1e-12


def test_exact_player_cap(five_point_pair):
    train, test = five_point_pair
    with pytest.raises(TooManyPlayersError):
        exact_shapley(train, test, "accuracy", max_players=4)


def test_exact_efficiency(five_point_pair):
    train, test = five_point_pair
    util = Utility(train, test)
    for kind, sv in exact_shapley_multi(train, test, list(MetricKind), utility=util).items():
        full = util(train.ids.tolist(), kind)
        empty = util([], kind)
        assert abs(efficiency_gap(sv, full, empty)) <= 1e-9


def test_efficiency_gap_detects_corruption(five_point_pair):
    train, test = five_point_pair
    sv = exact_shapley(train, test, "recall")
    util = Utility(train, test)
    full, empty = util(train.ids.tolist(), "recall"), util([], "recall")
    values = dict(sv.values)
    values[3] += 0.5
    bad = ShapleyVector(values, sv.metric, sv.method)
    assert efficiency_gap(bad, full, empty) == pytest.approx(0.5, abs=1e-12)


# --- Monte Carlo -------------------------------------------------------------


def test_permutations_are_counter_based():
    a = sample_permutation(7, 3, 20)
    assert a.tolist() == sample_permutation(7, 3, 20).tolist()
    assert sorted(a.tolist()) == list(range(20))
    assert a.tolist() != sample_permutation(7, 4, 20).tolist()
    assert a.tolist() != sample_permutation(8, 3, 20).tolist()


def test_single_permutation_telescopes(five_point_pair):
    train, test = five_point_pair
    for kind in MetricKind:
        run = mc_shapley(train, test, kind, sampler=SamplerConfig(max_permutations=1))
        assert run.n_permutations == 1
        assert run.estimates.total() == pytest.approx(run.v_full - run.v_empty, abs=1e-12)
        # with one permutation each estimate is exactly that permutation's marginal
        order = sample_permutation(0, 0, train.n)
        util = Utility(train, test)
        member, prev = [], util([], kind)
        for p in order:
            member.append(int(train.ids[p]))
            cur = util(member, kind)
            assert run.estimates.values[int(train.ids[p])] == pytest.approx(cur - prev, abs=1e-15)
            prev = cur


def test_telescoping_violation_raises():
    def game(rows, mask):
        return np.array([float(len(rows))])

    order = np.arange(4)
    with pytest.raises(EfficiencyViolation):
        permutation_marginals(order, game, np.array([0.0]), np.array([3.5]))


def test_mc_is_deterministic(five_point_pair):
    train, test = five_point_pair
    sampler = SamplerConfig(max_permutations=40, seed=9, early_stop=False)
    a = mc_shapley(train, test, "accuracy", sampler=sampler)
    b = mc_shapley(train, test, "accuracy", sampler=sampler)
    c = mc_shapley(train, test, "accuracy", sampler=sampler, threads=3)
    for other in (b, c):
        assert a.estimates == other.estimates
        assert a.trace.tobytes() == other.trace.tobytes()
        assert a.checkpoints.tolist() == other.checkpoints.tolist()


def test_mc_run_bookkeeping(five_point_pair):
    train, test = five_point_pair
    sampler = SamplerConfig(max_permutations=30, checkpoint_every=4, seed=1, early_stop=False)
    run = mc_shapley(train, test, "recall", sampler=sampler)
    assert run.n_permutations == 30
    assert (run.marginal_counts == 30).all()
    assert run.checkpoints.tolist() == [4, 8, 12, 16, 20, 24, 28, 30]
    assert np.all(np.diff(run.checkpoints) > 0)
    np.testing.assert_array_equal(run.trace[-1], run.estimates.as_array())


def test_metrics_share_one_stream(five_point_pair):
    train, test = five_point_pair
    sampler = SamplerConfig(max_permutations=25, seed=4, early_stop=False)
    runs = mc_shapley_multi(train, test, list(MetricKind), sampler=sampler)
    for kind, run in runs.items():
        alone = mc_shapley(train, test, kind, sampler=sampler)
        assert alone.estimates == run.estimates


def test_mc_reduction_order_independent():
    # accumulating the same per-permutation marginals in shuffled order
    rng = np.random.default_rng(3)
    table = rng.uniform(size=1 << 6)

    def game(rows, mask):
        return np.array([table[mask]])

    margs = [
        permutation_marginals(sample_permutation(0, j, 6), game, game(None, 0), game(None, 63))
        for j in range(200)
    ]
    forward = sum(margs) / 200
    shuffled = sum(margs[i] for i in rng.permutation(200)) / 200
    np.testing.assert_allclose(forward, shuffled, atol=1e-10, rtol=0)


def test_mc_approaches_exact_small():
    train, test = gaussian_pair(2, 4, seed=3, sep=2.0)
    exact = exact_shapley_multi(train, test, list(MetricKind))
    runs = mc_shapley_multi(
        train, test, list(MetricKind),
        sampler=SamplerConfig(max_permutations=2000, seed=0, early_stop=False),
    )
    for kind in MetricKind:
        err = np.abs(runs[kind].estimates.as_array() - exact[kind].as_array()).max()
        assert err <= 0.02


# --- convergence monitor -----------------------------------------------------


def _run_with_trace(trace):
    trace = np.asarray(trace, dtype=float)
    n = trace.shape[1]
    sv = ShapleyVector({i: float(trace[-1, i]) for i in range(n)}, MetricKind.ACCURACY, "monte_carlo", len(trace))
    return ShapleyRun(sv, np.full(n, len(trace)), np.arange(1, len(trace) + 1), trace, seed=0)


def test_identical_checkpoints_converge():
    run = _run_with_trace(np.tile([0.1, -0.2, 0.3], (6, 1)))
    assert has_converged(run, SamplerConfig(max_permutations=10, convergence_window=4))


def test_jump_in_window_blocks_convergence():
    trace = np.tile([0.1, -0.2, 0.3], (6, 1))
    trace[-2, 1] += 0.05  # 0.05 > 0.05 * spread(0.5)
    run = _run_with_trace(trace)
    assert not has_converged(run, SamplerConfig(max_permutations=10, convergence_window=4))
    # the same jump outside the window no longer matters
    assert has_converged(_run_with_trace(np.vstack([trace, np.tile(trace[-1], (5, 1))])),
                         SamplerConfig(max_permutations=20, convergence_window=4))


def test_too_few_checkpoints_not_converged():
    run = _run_with_trace(np.tile([0.0, 1.0], (3, 1)))
    assert not has_converged(run, SamplerConfig(max_permutations=10, convergence_window=3))


def test_early_stop_records_convergence(five_point_pair):
    train, test = five_point_pair
    run = mc_shapley(
        train, test, "accuracy",
        sampler=SamplerConfig(max_permutations=400, convergence_window=3, convergence_tol=0.2, seed=2),
    )
    assert run.converged_at is not None
    assert run.n_permutations == run.converged_at < 400


def test_sampler_defaults_resolve_to_3n():
    cfg = SamplerConfig().resolve(50)
    assert cfg.max_permutations == 150 and cfg.convergence_window == 50
    with pytest.raises(ValueError):
        SamplerConfig(max_permutations=10, convergence_window=10).resolve(5)
