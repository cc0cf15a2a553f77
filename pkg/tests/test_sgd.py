import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st

from aoi_lab.aoi import simulate_aoi
from aoi_lab.channels import STREAM_NOISE, Channel, IidChannel, NetworkSpec, stream
from aoi_lab.sgd import (AdditiveError, LeastSquares, NOISE_CHUNK, Quadratic, StepSchedule, centralized_delay_one,
                         empirical_growth_check, gradient_error, gradient_error_bound, run, step_size_check,
                         write_sgd_csv)


def complete(D, q):
    return NetworkSpec(D, [Channel(i, j, IidChannel(q)) for i in range(D) for j in range(D) if i != j])


def coupled(d=3, sigma=0.0):
    Q = np.eye(d) + 0.4 * (np.ones((d, d)) - np.eye(d))
    return Quadratic(np.arange(1.0, d + 1), Q, sigma)


def test_single_agent_contraction():
    obj = Quadratic([0.0])
    tr = run(obj, StepSchedule(0.5, constant=True), NetworkSpec(1), None, 3, seed=0, x0=[2.0])
    assert tr.x[0, :, 0].tolist() == [2.0, 1.0, 0.5, 0.25]
    assert tr.dist[0].tolist() == [2.0, 1.0, 0.5, 0.25]


def test_perfect_channels_match_delay_one_reference():
    obj = coupled()
    sched = StepSchedule(0.5, 0.8)
    x0 = np.array([-1.0, 0.5, 2.0])
    tr = run(obj, sched, complete(3, 1.0), None, 300, seed=4, x0=x0)
    ref = centralized_delay_one(obj, sched, 300, x0)
    assert np.array_equal(tr.x[0], ref)


def test_perfect_channels_match_reference_with_noise():
    obj = coupled(sigma=0.3)
    sched = StepSchedule(1.0, 1.0)
    T, seed = 200, 9
    xi = obj.draw_noise(stream(seed, 0, STREAM_NOISE, 0), NOISE_CHUNK)[:T]
    tr = run(obj, sched, complete(3, 1.0), None, T, seed=seed)
    ref = centralized_delay_one(obj, sched, T, np.zeros(3), xi)
    assert np.array_equal(tr.x[0], ref)


def test_fresh_beliefs_have_zero_error():
    obj = coupled()
    tr = run(obj, StepSchedule(), complete(3, 0.5), None, 50, seed=1, record_timestamps=True)
    fresh = np.full(3, 10)
    assert gradient_error(tr, obj, fresh, 10, 0) == 0.0


def test_gradient_error_equals_belief_gap_for_identity():
    obj = Quadratic([1.0, -2.0, 0.5], noise_sigma=0.2)
    tr = run(obj, StepSchedule(), complete(3, 0.4), None, 120, seed=3, record_timestamps=True)
    for n in (5, 40, 119):
        for i in range(3):
            st_ = tr.agent_state(0, n, i)
            gap = np.linalg.norm(st_.belief - tr.x[0, n])
            assert tr.grad_error[0, n, i] == pytest.approx(gap, rel=1e-12, abs=1e-15)
            assert gradient_error(tr, obj, st_.timestamps, n, i) == pytest.approx(gap, rel=1e-12, abs=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_gradient_error_pathwise_bound(seed, q):
    obj = coupled(sigma=0.5)
    tr = run(obj, StepSchedule(), complete(3, q), None, 60, seed=seed, record_timestamps=True)
    for n in range(0, 60, 7):
        for i in range(3):
            row = tr.timestamps[0, n, i]
            err = gradient_error(tr, obj, row, n, i)
            assert err == pytest.approx(tr.grad_error[0, n, i], rel=1e-12, abs=1e-14)
            assert err <= gradient_error_bound(tr, obj, row, n) * (1 + 1e-12) + 1e-14


def test_noise_draw_is_shared_and_indexed_by_slot():
    tr = run(coupled(sigma=1.0), StepSchedule(), complete(3, 0.5), None, 40, seed=0, replications=2)
    assert np.all(tr.noise_log == np.arange(40)[None, :, None])


def test_run_is_deterministic_and_batch_independent():
    obj, spec = coupled(sigma=1.0), complete(3, 0.5)
    a = run(obj, StepSchedule(), spec, AdditiveError(0.1, "symmetric"), 80, seed=5, replications=3)
    b = run(obj, StepSchedule(), spec, AdditiveError(0.1, "symmetric"), 80, seed=5, replications=[2])
    assert np.array_equal(a.x[2], b.x[0])
    c = run(obj, StepSchedule(), spec, AdditiveError(0.1, "symmetric"), 80, seed=6, replications=3)
    assert not np.array_equal(a.x, c.x)


def test_additive_error_shifts_limit():
    obj = Quadratic(np.zeros(2))
    tr = run(obj, StepSchedule(0.5, constant=True), complete(2, 1.0), AdditiveError(0.2, "biased"), 400, seed=0)
    assert np.all(tr.x[0, -1] < 0)
    assert tr.dist[0, -1] <= 2 * 0.2 / 0.5 + 1e-9


def test_step_size_examples():
    r = step_size_check(StepSchedule(1.0, 1.0), 1.0)
    assert (r.not_summable, r.square_summable, r.big_o_matches) == (True, True, True)
    r = step_size_check(StepSchedule(1.0, 0.6), 1.5)
    assert (r.not_summable, r.square_summable, r.big_o_matches) == (True, True, False)
    r = step_size_check(StepSchedule(1.0, 0.7), 1.5)
    assert r.big_o_matches
    r = step_size_check(StepSchedule(0.1, constant=True), 1.0)
    assert not r.square_summable
    with pytest.raises(ValueError):
        step_size_check(StepSchedule(), 2.0)
    with pytest.raises(ValueError):
        StepSchedule(1.0, 0.5)


def test_growth_zero_ages():
    rep = empirical_growth_check(np.zeros((3, 1000), dtype=int), 1.0, 0.5)
    assert rep.converged and rep.last_violation == [None] * 3
    assert rep.partial_sums[-1] == 0


def test_growth_iid_channel_flattens():
    spec = NetworkSpec(2, [Channel(0, 1, IidChannel(0.5)), Channel(1, 0, IidChannel(0.5))])
    tr = simulate_aoi(spec, 0, 50, 2000)
    rep = empirical_growth_check(tr.flood_pair(1, 0), 1.0, 0.5)
    assert rep.converged
    assert np.diff(rep.partial_sums)[100:].max() < 1e-3


def test_growth_linear_ages_flagged():
    ages = np.arange(2000)[None, :]
    rep = empirical_growth_check(ages, 1.0, 0.5)
    assert not rep.converged
    assert rep.last_violation == [1999]


def test_least_squares_oracle_unbiased():
    rng = np.random.default_rng(0)
    A, b = rng.normal(size=(30, 4)), rng.normal(size=30)
    obj = LeastSquares(A, b, layout=(2, 2))
    x = rng.normal(size=4)
    mean = np.mean([obj.grad(x, k) for k in range(30)], axis=0)
    assert np.allclose(mean, obj.grad_exact(x), rtol=1e-12, atol=1e-14)
    assert np.allclose(obj.grad_exact(obj.x_star), 0.0, atol=1e-12)


def test_least_squares_run_converges():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(50, 2))
    obj = LeastSquares(A, A @ np.array([1.0, -1.0]))
    tr = run(obj, StepSchedule(1.0, 1.0), complete(2, 0.7), None, 5000, seed=0)
    assert tr.dist[0, -1] < 0.05


def test_validation_errors():
    with pytest.raises(ValueError, match="blocks"):
        run(coupled(), StepSchedule(), complete(2, 0.5), None, 10, seed=0)
    with pytest.raises(ValueError):
        Quadratic([0.0, 0.0], Q=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ValueError):
        Quadratic([0.0, 0.0], layout=(3,))
    with pytest.raises(ValueError):
        AdditiveError(0.1, "skewed")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    obj = Quadratic([0.0])
    with pytest.raises(FloatingPointError):
        run(obj, StepSchedule(1e200, constant=True), NetworkSpec(1), None, 50, seed=0, x0=[1.0])


def test_sgd_csv(tmp_path):
    tr = run(coupled(), StepSchedule(), complete(3, 0.5), None, 10, seed=0)
    write_sgd_csv(tmp_path / "t.csv", tmp_path / "e.csv", tr, stride=5)
    t = (tmp_path / "t.csv").read_text().splitlines()
    e = (tmp_path / "e.csv").read_text().splitlines()
    assert t[0] == "replication,n,agent,coordinate,value"
    assert len(t) == 1 + 3 * 3
    assert e[0] == "replication,n,agent,grad_error_norm,dist_to_opt"
    assert len(e) == 1 + 2 * 3
