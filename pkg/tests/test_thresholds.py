import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from smartseq.model import ConstantMean, MixtureModel, derive_seed, sample_ground_truth
from smartseq.metrics import ensemble_metrics
from smartseq.posterior import oracle_hyper
from smartseq.procedures import ModelStream, run_simple_thresholding
from smartseq.thresholds import (ErrorBudget, InfeasibleBudgetError, MCConfig, ThresholdPair, approx_thresholds,
                                 calibrate_oracle_thresholds, kl_divergence_normal, limit_bounds,
                                 simulate_trajectories, stringent_upper, unstringent_upper, wald_boundaries)


def test_approx_thresholds_examples():
    thr = approx_thresholds(ErrorBudget(0.05, 0.05), 0.01)
    assert thr.t_l == 0.05
    assert thr.t_u == pytest.approx(0.99 / 0.9905, abs=1e-12)
    assert thr.t_u == pytest.approx(0.9994952, abs=1e-7)
    assert thr.B == pytest.approx(19 * 99, rel=1e-12)
    thr = approx_thresholds(ErrorBudget(0.05, 0.05), 0.05)
    assert thr.t_u == pytest.approx(0.9973753, abs=1e-7)
    thr = approx_thresholds(ErrorBudget(0.05, 0.999999), 0.2)
    assert thr.t_u == pytest.approx(0.8, abs=1e-5)


def test_budget_validation():
    for a, g in ((0, 0.1), (1, 0.1), (0.1, 0), (0.1, 1.0), (1e-9 - 1e-9, 0.5)):
        with pytest.raises(ValueError):
            ErrorBudget(a, g)


def test_threshold_pair_invariants():
    with pytest.raises(ValueError):
        ThresholdPair.from_cutoffs(0.5, 0.4, 0.1)
    thr = ThresholdPair.from_cutoffs(0.05, 0.99, 0.1)
    assert thr.A == pytest.approx(9 * 0.01 / 0.99, rel=1e-12)
    assert thr.B == pytest.approx(9 * 0.95 / 0.05, rel=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 0.999), st.floats(1e-4, 0.49), st.floats(0.5, 1 - 1e-4))
def test_threshold_round_trip(pi, t_l, t_u):
    a = ThresholdPair.from_cutoffs(t_l, t_u, pi)
    b = ThresholdPair.from_lr(a.A, a.B, pi)
    assert abs(b.t_l - t_l) <= 1e-12 and abs(b.t_u - t_u) <= 1e-12


def test_more_stringent_than_unstringent_upper():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        a, g, pi = rng.uniform(1e-4, 1 - 1e-4, 3)
        if pi * g + 1 - pi - a <= 0:
            continue  # the unstringent formula has a nonpositive denominator here
        b = ErrorBudget(a, g)
        assert stringent_upper(b, pi) > unstringent_upper(b, pi)
        checked += 1


def test_approx_rejects_overlapping_cutoffs():
    with pytest.raises(ValueError):
        approx_thresholds(ErrorBudget(0.9, 0.5), 0.5)


def test_wald_boundaries():
    a, b = wald_boundaries(0.05, 0.05)
    assert a == pytest.approx(-2.944439, abs=1e-6) and b == pytest.approx(2.944439, abs=1e-6)
    assert wald_boundaries(0.5, 0.5) == (0.0, 0.0)
    a, b = wald_boundaries(0.01, 0.2)
    assert a == pytest.approx(-1.599388, abs=1e-6) and b == pytest.approx(4.382027, abs=1e-6)
    with pytest.raises(ValueError):
        wald_boundaries(0, 0.1)


def _kl_quad(m0, s0, m1, s1):
    f = lambda x: stats.norm.pdf(x, m0, s0) * (stats.norm.logpdf(x, m0, s0) - stats.norm.logpdf(x, m1, s1))
    return integrate.quad(f, -40, 40, epsabs=1e-12, epsrel=1e-12, limit=200)[0]


def test_kl_divergence():
    assert kl_divergence_normal(0, 1, 3, 1) == pytest.approx((4.5, 4.5, 4.5))
    assert kl_divergence_normal(1, 2, 1, 2) == (0.0, 0.0, 0.0)
    d01, d10, d = kl_divergence_normal(0, 1, 0, 2)
    assert abs(d01 - _kl_quad(0, 1, 0, 2)) < 1e-6
    assert abs(d10 - _kl_quad(0, 2, 0, 1)) < 1e-6
    assert d01 != d10 and d == max(d01, d10)


def test_limit_bounds():
    b = limit_bounds(0.01, 4.5, 0.01, 100.0, 0.1)
    assert b.lower_tau == pytest.approx(math.log(25) / 4.5, rel=1e-15)
    assert b.lower_tau == pytest.approx(0.71532, abs=5e-5)  # quoted to about four decimals
    assert limit_bounds(0.01, 4.5, 0.25, 100.0, 0.1).lower_tau == 0.0
    b = limit_bounds(0.01, 4.5, 0.1, math.e, 0.1)
    assert b.upper_tau == pytest.approx(1.1 / 4.5) and b.upper_tau == pytest.approx(0.24444, abs=1e-5)
    nb = limit_bounds(0.4, 4.5, 0.1, math.e, 0.1)
    assert nb.lower_tau is None and not nb.lower_applicable
    for bad in (dict(eta=0), dict(eta=0.6), dict(f_p=1.0), dict(epsilon=0)):
        args = dict(pi=0.1, d_kl=1.0, eta=0.1, f_p=10.0, epsilon=0.1) | bad
        with pytest.raises(ValueError):
            limit_bounds(**args)


SETTING2 = MixtureModel(p=10_000, pi=0.05, alt_means=ConstantMean(3.0))


@pytest.fixture(scope="module")
def small_bank():
    return simulate_trajectories(SETTING2, MCConfig(p=5000, replications=6, seed=4), lo=0.01, hi=0.9995)


def test_bank_matches_engine(small_bank):
    # the path bank and the stepwise engine must agree exactly on shared seeds
    mc = MCConfig(p=5000, replications=6, seed=4)
    thr = ThresholdPair.from_cutoffs(0.05, 0.995, 0.05)
    m = SETTING2.with_(p=5000)
    runs = []
    for r in range(mc.replications):
        s = derive_seed(mc.seed, r)
        truth = sample_ground_truth(m, s)
        runs.append((truth, run_simple_thresholding(ModelStream(m, truth, s), thr, oracle_hyper(m))))
    ens = ensemble_metrics(runs)
    got = small_bank.evaluate(0.05, 0.995)
    assert got["fpr"] == pytest.approx(ens.fpr, abs=1e-15)
    assert got["mdr"] == pytest.approx(ens.mdr, abs=1e-15)
    assert got["east"] == pytest.approx(ens.east, abs=1e-15)
    assert small_bank.fpr_given_upper(0.995)(0.05) == pytest.approx(ens.fpr, abs=1e-15)


def test_fpr_monotone_in_lower_cut(small_bank):
    fprs = [small_bank.evaluate(t, 0.99)["fpr"] for t in (0.01, 0.03, 0.05)]
    assert fprs == sorted(fprs)
    with pytest.raises(ValueError):
        small_bank.evaluate(0.001, 0.99)


def test_calibration_tiny_alpha():
    res = calibrate_oracle_thresholds(SETTING2, ErrorBudget(1e-9, 0.05),
                                      MCConfig(p=2000, replications=4, seed=1, iterations=30))
    assert res.thresholds.t_l <= 1e-6
    assert res.achieved_fpr <= 1e-3


def test_calibration_infeasible():
    with pytest.raises(InfeasibleBudgetError) as ei:
        calibrate_oracle_thresholds(SETTING2, ErrorBudget(0.97, 0.05), MCConfig(p=1000, replications=3))
    assert ei.value.binding == "FPR"


@pytest.mark.slow
def test_calibration_setting2_within_tolerance():
    res = calibrate_oracle_thresholds(SETTING2, ErrorBudget(0.05, 0.05), MCConfig(p=10_000, replications=50, seed=3))
    thr = res.thresholds
    assert thr.t_l >= 0.05
    assert abs(res.achieved_fpr - 0.05) <= 0.005 and abs(res.achieved_mdr - 0.05) <= 0.005
    runs = []
    for r in range(50):
        s = derive_seed(1234, r)
        truth = sample_ground_truth(SETTING2, s)
        runs.append((truth, run_simple_thresholding(ModelStream(SETTING2, truth, s), thr, oracle_hyper(SETTING2))))
    ens = ensemble_metrics(runs)
    assert abs(ens.fpr - 0.05) <= 0.005 + 3 * ens.mc_se["fpr"]
    assert abs(ens.mdr - 0.05) <= 0.005 + 3 * ens.mc_se["mdr"]
