import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from smartseq.model import (ConstantMean, DecisionRecord, GroundTruth, ListMean, LossSpec, MixtureModel,
                            StageRecord, UniformMean, derive_seed, sample_ground_truth,
                            sample_stage_observations, stagewise_loss, weighted_loss)


def test_model_validation():
    with pytest.raises(ValueError):
        MixtureModel(p=10, pi=0.0, alt_means=ConstantMean(3))
    with pytest.raises(ValueError):
        MixtureModel(p=10, pi=1.0, alt_means=ConstantMean(3))
    with pytest.raises(ValueError):
        MixtureModel(p=10, pi=0.1, alt_means=ConstantMean(3), null_sd=0)
    with pytest.raises(ValueError):
        MixtureModel(p=0, pi=0.1, alt_means=ConstantMean(3))
    with pytest.raises(ValueError):
        UniformMean(4, 2)
    with pytest.raises(ValueError):
        ListMean(())
    m = MixtureModel(p=10, pi=0.1, alt_means=3.0)
    assert m.alt_means == ConstantMean(3.0)
    assert m.alt_prior_sd == 1.0


def test_ground_truth_invariant():
    with pytest.raises(ValueError):
        GroundTruth(theta=[False, True], mu=[0.5, 1.0])
    gt = GroundTruth(theta=[0, 1], mu=[0.0, 2.0])
    assert gt.n_signals == 1 and gt.p == 2


def test_signal_count_setting2():
    m = MixtureModel(p=100_000, pi=0.05, alt_means=ConstantMean(3))
    gt = sample_ground_truth(m, 11)
    sd = np.sqrt(m.p * m.pi * (1 - m.pi))
    assert abs(gt.n_signals - 5000) < 4 * sd
    assert np.all(gt.mu[~gt.theta] == 0)


def test_forced_all_null():
    m = MixtureModel(p=50, pi=0.3, alt_means=ConstantMean(3))
    gt = sample_ground_truth(m, 0, theta=np.zeros(50, bool))
    assert np.all(gt.mu == 0)


def test_uniform_centres_mean():
    m = MixtureModel(p=1_000_000, pi=0.999999, alt_means=UniformMean(2, 4), alt_prior_sd=0.0)
    gt = sample_ground_truth(m, 3)
    assert abs(gt.mu[gt.theta].mean() - 3.0) < 0.01


def test_list_centres_cycle():
    m = MixtureModel(p=6, pi=0.5, alt_means=ListMean((1.0, 2.0)), alt_prior_sd=0.0)
    gt = sample_ground_truth(m, 0, theta=np.ones(6, bool))
    assert gt.mu.tolist() == [1.0, 2.0, 1.0, 2.0, 1.0, 2.0]


def test_reproducible_and_binomial_across_seeds():
    m = MixtureModel(p=2000, pi=0.05, alt_means=ConstantMean(3))
    a, b = sample_ground_truth(m, 42), sample_ground_truth(m, 42)
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.mu, b.mu)
    counts = np.array([sample_ground_truth(m, s).n_signals for s in range(200)])
    se = np.sqrt(m.p * m.pi * (1 - m.pi) / 200)
    assert abs(counts.mean() - m.p * m.pi) < 4 * se


def test_observations_independent_of_active_set():
    m = MixtureModel(p=100, pi=0.1, alt_means=ConstantMean(3))
    gt = sample_ground_truth(m, 5)
    full = sample_stage_observations(m, gt, np.arange(100), 5, 3)
    sub = sample_stage_observations(m, gt, np.array([7, 42, 99]), 5, 3)
    assert np.array_equal(full[[7, 42, 99]], sub)
    assert sample_stage_observations(m, gt, np.array([], dtype=int), 5, 3).size == 0
    other = sample_stage_observations(m, gt, np.arange(100), 5, 4)
    assert not np.array_equal(full, other)


def test_null_observations_follow_null_law():
    m = MixtureModel(p=100_000, pi=0.01, alt_means=ConstantMean(3), null_mean=0.0, null_sd=1.0)
    gt = sample_ground_truth(m, 1, theta=np.zeros(m.p, bool))
    x = sample_stage_observations(m, gt, np.arange(m.p), 1, 1)
    assert abs(x.mean()) < 0.01
    pooled = np.concatenate([sample_stage_observations(m, gt, np.arange(20_000), 1, s) for s in range(1, 6)])
    ks = stats.kstest(pooled, "norm")
    assert ks.statistic < 1.63 / np.sqrt(pooled.size)


def test_noiseless_hook_and_hts_signal_mean():
    m = MixtureModel(p=3, pi=0.5, alt_means=ConstantMean(3.194), null_mean=0.2459, null_sd=0.6893,
                     alt_prior_sd=0.0)
    gt = sample_ground_truth(m, 0, theta=[True, False, True])
    x = sample_stage_observations(m, gt, np.arange(3), 0, 1, noise=False)
    assert x[0] == 3.194 and x[2] == 3.194
    assert x[1] == 0.2459
    big = MixtureModel(p=100_000, pi=0.5, alt_means=ConstantMean(3.194), null_mean=0.2459, null_sd=0.6893,
                       alt_prior_sd=0.0)
    gt = sample_ground_truth(big, 2, theta=np.ones(big.p, bool))
    xs = sample_stage_observations(big, gt, np.arange(big.p), 2, 1)
    assert abs(xs.mean() - 3.194) < 4 * 0.6893 / np.sqrt(big.p)


def test_derive_seed_deterministic():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)
    assert 0 <= derive_seed(2 ** 64 - 1, 0) < 2 ** 64


def _record(delta, stop):
    delta = np.asarray(delta, dtype=np.int8)
    stop = np.asarray(stop)
    trace = []
    for s in range(1, int(stop.max()) + 1):
        idx = np.flatnonzero(stop == s)
        trace.append(StageRecord(stage=s, n_active=int(np.sum(stop >= s)),
                                 discovered=idx[delta[idx] == 1], eliminated=idx[delta[idx] == 0]))
    return DecisionRecord(delta=delta, stop_times=stop, stage_trace=trace)


def test_weighted_loss_examples():
    gt = GroundTruth(theta=[False, True], mu=[0.0, 3.0])
    rec = _record([1, 1], [2, 3])
    assert weighted_loss(gt, rec, LossSpec(1, 2, 0.1)) == 1.5
    assert stagewise_loss(gt, rec, LossSpec(1, 2, 0.1)) == 1.5
    perfect = _record([0, 1], [1, 4])
    assert weighted_loss(gt, perfect, LossSpec(3, 5, 0)) == 0
    assert weighted_loss(gt, rec, LossSpec(0, 0, 0.25)) == 0.25 * 5
    with pytest.raises(ValueError):
        LossSpec(-1, 0, 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.integers(1, 8)), min_size=1, max_size=30),
       st.floats(0, 10), st.floats(0, 10), st.floats(0, 3))
def test_stagewise_loss_equals_flat(rows, l1, l2, c):
    theta = np.array([r[0] for r in rows])
    gt = GroundTruth(theta=theta, mu=np.where(theta, 1.0, 0.0))
    rec = _record([r[1] for r in rows], [r[2] for r in rows])
    loss = LossSpec(l1, l2, c)
    assert weighted_loss(gt, rec, loss) == stagewise_loss(gt, rec, loss)
