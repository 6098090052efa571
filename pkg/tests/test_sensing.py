import numpy as np
import pytest
from hypothesis import given, strategies as st

from chasecs.channel import ChannelMatrix
from chasecs.errors import ConfigError, DimensionError, UnknownSensorError
from chasecs.sensing import (
    NoiseSpec,
    SamplePlan,
    effective_sensing_matrix,
    noise_variance,
    phi_matrix,
    take_samples,
)


def test_phi_single_row():
    assert phi_matrix(SamplePlan((2,), (0.0,)), 4).tolist() == [[0, 0, 1, 0]]


def test_phi_two_rows():
    assert phi_matrix(SamplePlan((0, 3), (0.0, 0.0)), 4).tolist() == [[1, 0, 0, 0], [0, 0, 0, 1]]


def test_phi_out_of_range():
    with pytest.raises(IndexError):
        phi_matrix(SamplePlan((4,), (0.0,)), 4)


@given(st.lists(st.integers(0, 19), unique=True, max_size=20), st.integers(0, 100))
def test_phi_gathers(tasked, seed):
    x = np.random.default_rng(seed).normal(size=20)
    plan = SamplePlan(tuple(tasked), (0.0,) * len(tasked))
    assert np.array_equal(phi_matrix(plan, 20) @ x, x[list(tasked)])


def test_noise_free_copy():
    x = np.zeros(10)
    x[5] = 42.0
    plan = take_samples(SamplePlan(), [5], x)
    assert plan.tasked == (5,)
    assert plan.samples == (42.0,)


def test_dedup_rule():
    x = np.arange(10.0)
    plan = take_samples(SamplePlan(), [5], x)
    plan2 = take_samples(plan, [5, 7, 7], x)
    assert plan2.tasked == (5, 7)
    assert (plan.m, plan2.m) == (1, 2)
    assert plan2.rounds[-1][1] == 1


def test_unknown_sensor():
    with pytest.raises(UnknownSensorError):
        take_samples(SamplePlan(), [3], np.zeros(5), sensors=[0, 1, 2])


def test_noise_variance_matches_snr():
    # 10,000 readings of one clean level at 15 dB
    x = np.full(10_000, 3.0)
    plan = take_samples(SamplePlan(), range(10_000), x, NoiseSpec(15.0, rng_seed=2))
    target = 9.0 * 10**-1.5
    emp = np.var(np.array(plan.samples) - 3.0)
    assert abs(emp - target) / target < 0.03
    assert plan.noise_var[0] == pytest.approx(target, rel=1e-12)


def test_noise_uses_whole_accumulated_plan():
    x = np.array([1.0, 3.0])
    p1 = take_samples(SamplePlan(), [0], x, NoiseSpec(10.0, 1))
    p2 = take_samples(p1, [1], x, NoiseSpec(10.0, 1))
    assert p1.noise_var[0] == pytest.approx(noise_variance(np.array([1.0]), 10.0))
    assert p2.noise_var[1] == pytest.approx(noise_variance(np.array([1.0, 3.0]), 10.0))
    # earlier readings are frozen
    assert p2.samples[0] == p1.samples[0]
    assert p2.noise_var[0] == p1.noise_var[0]


def test_noise_spec_finite():
    with pytest.raises(ConfigError):
        NoiseSpec(float("inf"))


@given(
    batches=st.lists(st.lists(st.integers(0, 29), max_size=8), max_size=6),
    snr=st.one_of(st.none(), st.floats(0, 40)),
    seed=st.integers(0, 1000),
)
def test_append_only_and_unique(batches, snr, seed):
    x = np.random.default_rng(seed).uniform(1, 5, 30)
    noise = NoiseSpec(snr, seed)
    plan = SamplePlan()
    history = [plan]
    for b in batches:
        plan = take_samples(plan, b, x, noise, sensors=range(30))
        history.append(plan)
    for early, late in zip(history, history[1:]):
        m = early.m
        assert late.tasked[:m] == early.tasked
        assert late.samples[:m] == early.samples
        assert late.m >= m
    assert len(set(plan.tasked)) == plan.m <= 30
    if snr is None:
        assert np.array_equal(plan.y(), x[list(plan.tasked)])


def test_plan_invariants():
    with pytest.raises(DimensionError):
        SamplePlan((1, 2), (0.0,))
    with pytest.raises(ConfigError):
        SamplePlan((1, 1), (0.0, 0.0))


def test_plan_json_round_trip():
    plan = take_samples(take_samples(SamplePlan(), [3, 1], np.arange(5.0)), [4], np.arange(5.0))
    doc = plan.to_dict()
    assert doc == {"tasked": [3, 1, 4], "samples": [3.0, 1.0, 4.0], "rounds": [[0, 2], [1, 1]]}
    back = SamplePlan.from_json(plan.to_json())
    assert (back.tasked, back.samples, back.rounds) == (plan.tasked, plan.samples, plan.rounds)


def test_effective_matrix_row_extraction():
    psi = np.random.default_rng(0).normal(size=(8, 8))
    ch = ChannelMatrix(psi, 3.0)
    assert np.array_equal(effective_sensing_matrix(SamplePlan((6,), (0.0,)), ch), psi[[6]])
    eye = ChannelMatrix(np.eye(4), 3.0)
    assert effective_sensing_matrix(SamplePlan((1, 3), (0.0, 0.0)), eye).tolist() == [
        [0, 1, 0, 0],
        [0, 0, 0, 1],
    ]
    plan = SamplePlan((0, 4, 7), (0.0,) * 3)
    dense = phi_matrix(plan, 8) @ psi
    assert np.max(np.abs(effective_sensing_matrix(plan, ch) - dense)) <= 1e-14


def test_effective_matrix_needs_samples():
    with pytest.raises(DimensionError):
        effective_sensing_matrix(SamplePlan(), ChannelMatrix(np.eye(2), 3.0))
