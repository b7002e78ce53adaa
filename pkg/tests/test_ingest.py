import numpy as np
import pytest

from smartseq.ingest import (DegenerateDataError, EmpiricalNullFit, PilotDataset, PilotStream,
                             build_semisynthetic_model, compute_z_scores, fit_empirical_null,
                             load_delimited_table, load_grayscale_image, parse_pgm)
from smartseq.model import sample_ground_truth, sample_stage_observations


def test_z_scores_trivial():
    assert np.all(compute_z_scores(PilotDataset([[0, 0, 0]] * 5, "delimited-table")) == 0)
    raw = np.array([1.0, 2.0, 3.0, 4.0, 100.0])
    z = compute_z_scores(PilotDataset([[v] for v in raw], "delimited-table"))
    med = np.median(raw)
    assert z == pytest.approx((raw - med) / (1.4826 * np.median(np.abs(raw - med))))
    with pytest.raises(ValueError):
        compute_z_scores(PilotDataset([[1, 2], [1, 2, 3]], "delimited-table"))
    with pytest.raises(DegenerateDataError):
        compute_z_scores(PilotDataset([[1, 1, 1], [2, 2, 2]], "delimited-table"))


def test_z_scores_standardized_nulls():
    rng = np.random.default_rng(0)
    X = rng.normal(0, 1, (10_000, 3))
    z = compute_z_scores(PilotDataset(list(X), "delimited-table"))
    assert abs(z.std() - 1) < 0.03
    Y = rng.normal(5.0, 2.0, (10_000, 3))
    zy = compute_z_scores(PilotDataset(list(Y), "delimited-table"))
    # location a standardized by b / sqrt(m)
    assert abs(np.median(zy) - 5.0 / (2.0 / np.sqrt(3))) < 0.05


def test_fit_pure_null():
    z = np.random.default_rng(1).normal(0, 1, 100_000)
    fit = fit_empirical_null(z)
    assert abs(fit.mu0_hat) < 0.02 and abs(fit.sigma0_hat - 1) < 0.02 and fit.pi_hat <= 0.01


def test_fit_errors():
    with pytest.raises(DegenerateDataError):
        fit_empirical_null(np.ones(500))
    with pytest.raises(ValueError):
        fit_empirical_null(np.arange(10.0))


def test_fit_equivariance():
    rng = np.random.default_rng(2)
    z = np.concatenate([rng.normal(0, 1, 5000), rng.normal(4, 1, 200)])
    base = fit_empirical_null(z)
    shifted = fit_empirical_null(z + 1.5)
    assert shifted.mu0_hat == pytest.approx(base.mu0_hat + 1.5)
    assert shifted.pi_hat == pytest.approx(base.pi_hat)
    scaled = fit_empirical_null(z * 2.5)
    assert scaled.sigma0_hat == pytest.approx(base.sigma0_hat * 2.5)
    assert scaled.pi_hat == pytest.approx(base.pi_hat)
    perm = fit_empirical_null(rng.permutation(z))
    assert perm == base


def test_hts_style_fit_and_model():
    rng = np.random.default_rng(3)
    p = 51_840
    theta = rng.random(p) < 0.0007
    z = np.where(theta, 3.194 + 0.6893 * rng.standard_normal(p), 0.2459 + 0.6893 * rng.standard_normal(p))
    fit = fit_empirical_null(z)
    assert abs(fit.mu0_hat - 0.2459) < 0.02 and abs(fit.sigma0_hat - 0.6893) < 0.02
    model, at_floor = build_semisynthetic_model(fit, p=p, pi_hat=0.0007, mu_signal_hat=3.194)
    assert not at_floor
    assert (model.pi, model.alt_means.value, model.alt_prior_sd) == (0.0007, 3.194, 0.0)


def test_build_from_screening_fit():
    fit = EmpiricalNullFit(pi_hat=0.0007, mu0_hat=0.2459, sigma0_hat=0.6893, mu_signal_hat=3.194, p=51_840)
    model, flag = build_semisynthetic_model(fit)
    assert (model.p, model.pi, model.null_mean, model.null_sd) == (51_840, 0.0007, 0.2459, 0.6893)
    assert not flag
    with pytest.warns(UserWarning):
        _, flag = build_semisynthetic_model(EmpiricalNullFit(1e-4, 0, 1, 3, p=100, at_floor=True))
    assert flag
    with pytest.raises(ValueError):
        build_semisynthetic_model(fit, pi_hat=0.0)


def test_round_trip_recovers_null():
    fit = EmpiricalNullFit(pi_hat=0.01, mu0_hat=0.3, sigma0_hat=0.7, mu_signal_hat=3.0, p=100_000)
    model, _ = build_semisynthetic_model(fit)
    truth = sample_ground_truth(model, 0)
    x = sample_stage_observations(model, truth, np.arange(model.p), 0, 1)
    refit = fit_empirical_null(x)
    assert abs(refit.mu0_hat - 0.3) <= 0.02 * 0.3 + 0.006  # 2% of the scale-free target
    assert abs(refit.sigma0_hat - 0.7) <= 0.02 * 0.7


def test_pilot_stream():
    fit = EmpiricalNullFit(pi_hat=0.05, mu0_hat=0.0, sigma0_hat=1.0, mu_signal_hat=3.0, p=200)
    model, _ = build_semisynthetic_model(fit)
    truth = sample_ground_truth(model, 1)
    z = np.arange(200.0)
    s = PilotStream(z, model, truth, 1)
    assert np.array_equal(s.observe(1, np.array([3, 5])), [3.0, 5.0])
    assert np.array_equal(s.observe(2, np.array([5])), s.observe(2, np.arange(200))[[5]])
    with pytest.raises(ValueError):
        PilotStream(z[:10], model, truth, 1)


def test_delimited_table(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("location_id,rep1,rep2,rep3\na,1,2,3\nb,0,0,3\n", encoding="utf-8")
    d = load_delimited_table(f)
    assert d.p == 2 and d.ids == ["a", "b"] and d.values[1].tolist() == [0, 0, 3]
    bad = tmp_path / "bad.csv"
    bad.write_text("id,x\na,1\n")
    with pytest.raises(ValueError):
        load_delimited_table(bad)


def test_pgm_ascii_and_binary(tmp_path):
    ascii_ = b"P2\n# comment\n2 2\n255\n0 0\n0 255\n"
    assert parse_pgm(ascii_).tolist() == [[0, 0], [0, 255]]
    binary = b"P5\n2 2\n255\n" + bytes([0, 0, 0, 255])
    assert parse_pgm(binary).tolist() == [[0, 0], [0, 255]]
    wide = b"P5 2 1 65535\n" + (1000).to_bytes(2, "big") + (65535).to_bytes(2, "big")
    assert parse_pgm(wide).tolist() == [[1000, 65535]]
    for bad in (b"P6\n1 1\n255\n\x00", b"P2\n2 2\n255\n1 2 3", b"P2\nx 2\n255\n", b"P2\n1 1\n10\n11\n"):
        with pytest.raises(ValueError):
            parse_pgm(bad)
    f = tmp_path / "tiny.pgm"
    f.write_bytes(binary)
    d = load_grayscale_image(f)
    z = np.concatenate(d.values)
    assert d.p == 4 and d.shape == (2, 2)
    assert np.sum(np.abs(z) > 1) == 1 and z.argmax() == 3
    const = tmp_path / "const.pgm"
    const.write_bytes(b"P2\n2 2\n255\n7 7 7 7\n")
    with pytest.raises(DegenerateDataError):
        load_grayscale_image(const)


def test_large_image_location_count(tmp_path):
    rng = np.random.default_rng(0)
    h, w = 616, 536
    pix = rng.integers(0, 256, h * w, dtype=np.uint8)
    f = tmp_path / "big.pgm"
    f.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pix.tobytes())
    assert load_grayscale_image(f).p == 330_176
