import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from chasecs.adaptive import (
    AdaptiveState,
    ChasingConfig,
    centroid_picks,
    cc_raw_count,
    cc_sensor_count,
    check_termination,
    cluster_count_window,
    cluster_support,
    individual_chasing_round,
    individual_picks,
    initial_cluster_count,
    kmeans,
    nearest_sensor,
    nearest_sensors,
    random_exploration,
    run_adaptive,
    trace_to_jsonl,
    trim,
)
from chasecs.channel import build_channel, propagate
from chasecs.errors import ConfigError, DimensionError, EmptySupportError, MaxRoundsExceeded
from chasecs.field import GridField, generate_field
from chasecs.sensing import SamplePlan, take_samples
from chasecs.solver import SolverConfig

SOLVER = SolverConfig(nonneg=True, normalize_columns=True)


def _field(side, sensors, signal=None, g=10.0):
    sig = np.zeros(side * side) if signal is None else signal
    return GridField(side, g, sig, sensors)


# -- trim ---------------------------------------------------------------------


def test_trim_clamps_negatives():
    assert trim([-1.0, 0.0, 5.0], 1.0).tolist() == [0, 0, 5]


def test_trim_threshold():
    assert trim([100.0, 0.5, 2.0], 1.0).tolist() == [100, 0, 2]


def test_trim_all_zero():
    assert trim(np.zeros(4), 1.0).tolist() == [0, 0, 0, 0]


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(0.001, 99.0))
def test_trim_rule(values, alpha):
    v = np.array(values)
    out = trim(v, alpha)
    top = max(v.max(), 0.0)
    for a, b in zip(v, out):
        keep = a > 0 and a >= alpha / 100 * top
        assert b == (a if keep else 0.0)


# -- termination check --------------------------------------------------------


def test_termination_examples():
    assert not check_termination([0, 1.0], [1.0, 0], 5)
    assert check_termination([3.0, 0, 2.0], [3.0, 0, 2.0], 5)
    assert check_termination([0, 104.0], [0, 100.0], 5)
    assert not check_termination([0, 106.0], [0, 100.0], 5)
    assert check_termination(np.zeros(3), np.zeros(3), 5)
    with pytest.raises(DimensionError):
        check_termination([1.0], [1.0, 2.0], 5)


@given(
    a=st.lists(st.one_of(st.just(0.0), st.floats(0.1, 1e4)), min_size=1, max_size=12),
    b=st.lists(st.one_of(st.just(0.0), st.floats(0.1, 1e4)), min_size=1, max_size=12),
    delta=st.floats(0.01, 99),
)
def test_termination_matches_definition(a, b, delta):
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    same_support = all((x != 0) == (y != 0) for x, y in zip(a, b))
    close = all(abs(x - y) <= delta / 100 * abs(y) for x, y in zip(a, b) if y != 0)
    assert check_termination(a, b, delta) == (same_support and close)


# -- nearest sensors ----------------------------------------------------------


@given(
    side=st.integers(2, 10),
    frac=st.floats(0.05, 1.0),
    seed=st.integers(0, 10_000),
)
def test_nearest_sensor_exhaustive(side, frac, seed):
    n = side * side
    rng = np.random.default_rng(seed)
    sensors = rng.choice(n, size=max(1, int(frac * n)), replace=False)
    f = _field(side, sensors)
    for g in range(n):
        got = nearest_sensor(g, f)
        gx, gy = g % side, g // side
        best = min(sorted(sensors), key=lambda s: (math.hypot(s % side - gx, s // side - gy), s))
        assert got == best


def test_nearest_sensors_order_and_ties():
    f = _field(3, [1, 3, 5, 7])  # all four at one edge from the middle grid
    assert nearest_sensors(f.centers([4])[0], f, 4).tolist() == [1, 3, 5, 7]
    assert nearest_sensors(f.centers([4])[0], f, 0).size == 0


def test_individual_picks_hand_case():
    f = _field(4, [0, 5, 15])
    assert individual_picks({9, 14}, f) == [5, 15]


def test_individual_round_dedup_path():
    sig = np.zeros(16)
    sig[5] = 50.0
    f = _field(4, [5, 10], sig)
    ch = build_channel(f, rng_seed=0)
    x = propagate(ch, sig)
    plan = take_samples(SamplePlan(), [5, 10], x)
    s = np.zeros(16)
    s[5] = 50.0
    state = AdaptiveState(round=1, plan=plan, s_hat=s, s_trim=s, support=(5,))
    new = individual_chasing_round(state, f, ch, None, SOLVER, ChasingConfig())
    assert new.plan.m == 2
    assert new.history[-1]["added"] == 0
    assert new.reconstruction is not None


# -- clustering ---------------------------------------------------------------


def test_single_grid_cluster():
    f = _field(5, [])
    (cl,) = cluster_support([7], f)
    assert cl.members == (7,)
    assert cl.region_size == 1
    assert cl.density == 1.0


def test_two_far_grids_split():
    f = _field(10, [])
    clusters = cluster_support([0, 99], f, rng_seed=1)
    assert len(clusters) == 2
    assert all(c.region_size == 1 for c in clusters)


def test_initial_count_and_window():
    assert initial_cluster_count(8) == 2.0
    assert list(cluster_count_window(8)) == [1, 2, 3, 4]
    assert list(cluster_count_window(1)) == [1]


def test_empty_support_cluster():
    with pytest.raises(EmptySupportError):
        cluster_support([], _field(3, []))


def test_bounding_rectangle():
    f = _field(6, [])
    # a 2x3 block plus nothing else: one cluster spanning rows 1-2, cols 2-4
    block = [8, 9, 10, 14, 15, 16]
    (cl,) = cluster_support(block, f)
    assert (cl.rows, cl.cols) == ((1, 2), (2, 4))
    assert cl.region_size == 6


def test_cc_arithmetic():
    assert cc_raw_count(4, 8) == 2.0
    assert cc_sensor_count(4, 8) == 2
    assert cc_raw_count(6, 6) == 0.0
    assert cc_sensor_count(6, 6) == 1
    assert cc_sensor_count(3, 6) == 2  # 1.5 rounds half up


@given(members=st.integers(1, 50), extra=st.integers(0, 200))
def test_cc_raw_count_bounded(members, extra):
    r = members + extra
    assert 0 <= cc_raw_count(members, r) <= members


@given(
    sup=st.lists(st.integers(0, 99), min_size=1, max_size=20, unique=True),
    seed=st.integers(0, 1000),
)
def test_cc_adds_no_more_than_ic(sup, seed):
    f = _field(10, list(range(0, 100, 2)))
    clusters = cluster_support(sup, f, rng_seed=seed)
    raw = [cc_raw_count(len(c.members), c.region_size) for c in clusters]
    assume(all(r >= 0.5 for r in raw))  # no clamping
    budget = sum(cc_sensor_count(len(c.members), c.region_size) for c in clusters)
    assert len(centroid_picks(sup, f, rng_seed=seed)) == budget <= len(sup)


# -- exploration --------------------------------------------------------------


def test_exploration_exhausted_is_noop(small_problem):
    f, ch = small_problem
    x = propagate(ch, f.signal)
    plan = take_samples(SamplePlan(), f.sensor_locations, x)
    state = AdaptiveState(round=2, plan=plan)
    assert random_exploration(state, f, ch, None, 3, 0) is state


def test_exploration_adds_count(small_problem):
    f, ch = small_problem
    x = propagate(ch, f.signal)
    used = f.sensor_locations[:-10]
    plan = take_samples(SamplePlan(), used, x)
    state = AdaptiveState(round=2, plan=plan)
    new = random_exploration(state, f, ch, None, 3, 0)
    assert new.plan.m == plan.m + 3
    assert new.plan.tasked[: plan.m] == plan.tasked
    assert set(new.plan.tasked[plan.m:]) <= set(f.sensor_locations[-10:].tolist())
    # the next round solves on every row, including the explored ones
    nxt = individual_chasing_round(new, f, ch, None, SOLVER, ChasingConfig())
    assert nxt.plan.m >= plan.m + 3
    assert nxt.history[-1]["M"] == nxt.plan.m


# -- full runs ----------------------------------------------------------------


def test_null_signal_path():
    f = generate_field(8, 30.0, 0, (30, 500), num_sensors=30, rng_seed=2)
    ch = build_channel(f, rng_seed=3)
    rec, state, trace = run_adaptive(f, ch, None, SOLVER, ChasingConfig(), rng_seed=4)
    assert state.converged
    assert np.array_equal(rec.s_hat, np.zeros(f.n))
    assert [t["kind"] for t in trace] == ["init", "explore"]


def test_config_guards():
    for kw in (dict(alpha_pct=0), dict(delta_pct=100), dict(m0_factor=0), dict(algorithm="x"),
               dict(max_rounds=0), dict(exploration_count=0)):
        with pytest.raises(ConfigError):
            ChasingConfig(**kw)
    assert ChasingConfig().explore_count(10) == 3
    assert ChasingConfig(exploration_count=7).explore_count(10) == 7


def _run(seed, algorithm="ic", k=8, **kw):
    f = generate_field(12, 30.0, k, (30, 500), num_sensors=70, rng_seed=seed)
    ch = build_channel(f, rng_seed=seed + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxRoundsExceeded)
        out = run_adaptive(f, ch, None, SOLVER, ChasingConfig(algorithm=algorithm, **kw), rng_seed=seed + 2)
    return f, ch, out


@pytest.mark.parametrize("algorithm", ["ic", "cc"])
@given(seed=st.integers(0, 5000))
def test_run_invariants(algorithm, seed):
    f, ch, (rec, state, trace) = _run(seed, algorithm)
    ms = [t["M"] for t in trace]
    assert ms == sorted(ms)
    assert ms[-1] == state.plan.m
    assert sum(t["added"] for t in trace) == state.plan.m
    assert len(set(state.plan.tasked)) == state.plan.m
    assert set(state.plan.tasked) <= set(f.sensor_locations.tolist())
    assert state.plan.m < f.num_sensors or state.stop_reason in ("exhausted", "max_rounds")
    if state.converged and state.stop_reason == "converged":
        cfg = ChasingConfig()
        last = np.zeros(f.n)
        prev = np.zeros(f.n)
        for i, v in trace[-1]["s_hat"]:
            last[i] = v
        for i, v in trace[-2]["s_hat"]:
            prev[i] = v
        assert check_termination(trim(last, cfg.alpha_pct), trim(prev, cfg.alpha_pct), cfg.delta_pct)


@given(seed=st.integers(0, 5000))
def test_chasing_tasks_nearest_sensors(seed):
    f, ch, (rec, state, trace) = _run(seed, "ic")
    tasked_by_round = {}
    for t in trace:
        tasked_by_round[t["round"]] = set(state.plan.tasked[: t["M"]])
    for prev, cur in zip(trace, trace[1:]):
        if cur["kind"] != "chase":
            continue
        for g in prev["support"]:
            assert nearest_sensor(g, f) in tasked_by_round[cur["round"]]


def test_traces_are_deterministic():
    a = _run(17, "cc")[2]
    b = _run(17, "cc")[2]
    assert trace_to_jsonl(a[2]) == trace_to_jsonl(b[2])
    assert np.array_equal(a[0].s_hat, b[0].s_hat)


def test_budget_is_respected():
    f, ch, (rec, state, trace) = _run(3, "ic", k=10, max_sensors=25)
    assert state.plan.m <= 25


def test_max_rounds_warns():
    f = generate_field(12, 30.0, 10, (30, 500), num_sensors=70, rng_seed=5)
    ch = build_channel(f, rng_seed=6)
    with pytest.warns(MaxRoundsExceeded):
        rec, state, _ = run_adaptive(f, ch, None, SOLVER, ChasingConfig(max_rounds=1), rng_seed=7)
    assert not state.converged and not rec.converged
    assert state.stop_reason == "max_rounds"


def test_small_k_uses_few_sensors():
    # k=1 with a sensor on the source grid: 2k start plus a handful more
    sig = np.zeros(36)
    sig[14] = 200.0
    f = GridField(6, 30.0, sig, list(range(0, 36, 2)))
    ch = build_channel(f, rng_seed=1)
    rec, state, _ = run_adaptive(f, ch, None, SOLVER, ChasingConfig(), rng_seed=2)
    assert np.abs(rec.s_hat - sig).sum() < 1e-3
    assert state.plan.m <= 2 + 4


@given(
    cells=st.sets(st.tuples(st.integers(0, 14), st.integers(0, 14)), min_size=1, max_size=30),
    c_frac=st.floats(0, 1),
    seed=st.integers(0, 2**32 - 1),
)
def test_kmeans_keeps_every_cluster_populated(cells, c_frac, seed):
    pts = np.array(sorted(cells), dtype=float)
    c = 1 + int(c_frac * (len(pts) - 1))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        labels, centers = kmeans(pts, c, np.random.default_rng(seed))
    assert sorted(set(labels.tolist())) == list(range(c))
    assert np.all(np.isfinite(centers))


def test_lloyd_reseeding_never_empties_a_cluster():
    # reseeding at the globally worst point leaves a cluster empty here
    from chasecs.adaptive import _lloyd

    cells = [[0, 2], [0, 3], [0, 7], [1, 3], [1, 6], [2, 12], [3, 3], [3, 10], [3, 12], [4, 0], [4, 3],
             [4, 10], [5, 2], [6, 3], [7, 7], [8, 7], [9, 1], [9, 11], [10, 2], [10, 5], [12, 3]]
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        labels, centers, _ = _lloyd(np.array(cells, dtype=float), 12, np.random.default_rng(83771))
    assert len(set(labels.tolist())) == 12
    assert np.all(np.isfinite(centers))
