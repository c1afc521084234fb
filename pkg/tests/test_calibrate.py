import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from recalx import (
    BayesSubsetModel,
    CalibrationReport,
    CalibrationRow,
    MiscalibrationWrapper,
    PerturbationLevelBins,
    PerturbationSpec,
    RecalibratedModel,
    SeedSpec,
    SubsetMask,
    TemperatureProfile,
    calibration_curve,
    ce_kl_plugin,
    derive_rng,
    fit_recalx,
    generate_problem,
    mean_cross_entropy,
    minimize_temperature,
    recal_predict,
    sample_dataset,
    sample_uniform_subset,
    softmax,
    softmax_with_temperature,
)


def small_problem(seed=5):
    return generate_problem("planted-informative", 6, 3, 3, SeedSpec(seed),
                            informative_count=2)


def test_softmax_with_temperature_known_value():
    p = softmax_with_temperature(np.array([[2.0, 0.0]]), 2.0)
    assert_allclose(p[0, 0], 1.0 / (1.0 + np.exp(-1.0)), atol=1e-12)


def test_softmax_with_temperature_one_is_plain_softmax():
    z = np.random.default_rng(0).normal(size=(4, 3))
    assert_allclose(softmax_with_temperature(z, 1.0), softmax(z), atol=1e-14)


def test_temperature_preserves_argmax():
    z = np.random.default_rng(1).normal(size=(50, 4))
    base = np.argmax(z, axis=1)
    for T in (0.05, 0.5, 2.0, 50.0):
        assert_array_equal(np.argmax(softmax_with_temperature(z, T), axis=1), base)


def test_mean_cross_entropy_hand_value():
    logits = np.array([[np.log(3.0), 0.0]])
    labels = np.array([0])
    # p(class 0) = 3/4, so the loss is ln(4/3)
    assert_allclose(mean_cross_entropy(logits, labels, 1.0), np.log(4.0 / 3.0), atol=1e-12)


def test_mean_cross_entropy_extreme_logits_stay_finite():
    logits = np.array([[800.0, -800.0], [-600.0, 600.0]])
    val = mean_cross_entropy(logits, np.array([1, 0]), 1.0)
    assert np.isfinite(val) and val > 100


def test_minimize_temperature_quadratic_in_log():
    loss = lambda T: (np.log(T) - np.log(3.0)) ** 2
    assert_allclose(minimize_temperature(loss), 3.0, rtol=1e-3)


def test_minimize_temperature_falls_back_to_one():
    # pathological non-unimodal loss whose best point is exactly T = 1
    loss = lambda T: 0.0 if abs(T - 1.0) < 1e-12 else 1.0
    assert minimize_temperature(loss) == 1.0


def test_minimize_temperature_recovers_known_scale():
    # cross-entropy of c-scaled logits is minimized near T = c
    rng = np.random.default_rng(7)
    z = rng.normal(size=(4000, 3))
    p = softmax(z)
    labels = np.array([rng.choice(3, p=row) for row in p])
    for c in (2.0, 5.0):
        loss = lambda T: mean_cross_entropy(c * z, labels, T)
        assert_allclose(minimize_temperature(loss), c, rtol=0.15)


def test_temperature_profile_round_trip(tmp_path):
    profile = TemperatureProfile(
        PerturbationLevelBins(4), (1.0, 2.5, 0.5, 3.0), (0, 10, 20, 30),
        (None, 0.5, 0.25, 0.125), ("infeasible", "ok", "ok", "ok"),
    )
    path = tmp_path / "profile.json"
    profile.to_json_file(path)
    back = TemperatureProfile.from_json_file(path)
    assert back == profile


def test_temperature_profile_lookup_by_level():
    profile = TemperatureProfile(PerturbationLevelBins(4), (1.0, 2.0, 3.0, 4.0))
    assert profile.temperature_for_level(0.0) == 1.0
    assert profile.temperature_for_level(0.3) == 2.0
    assert profile.temperature_for_level(0.75) == 4.0
    assert profile.temperature_for_level(1.0) == 4.0


def test_temperature_profile_neutral_and_validation():
    neutral = TemperatureProfile.neutral(PerturbationLevelBins(3))
    assert neutral.temperatures == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        TemperatureProfile(PerturbationLevelBins(2), (1.0,))
    with pytest.raises(ValueError):
        TemperatureProfile(PerturbationLevelBins(2), (1.0, -2.0))


def test_fit_recalx_marks_infeasible_bins():
    problem = generate_problem("random-table", 4, 2, 2, SeedSpec(2))
    model = BayesSubsetModel(problem)
    data = sample_dataset(problem, 40, SeedSpec(3))
    spec = PerturbationSpec.zeros(4)
    profile = fit_recalx(model, data, spec, bin_count=10, samples_per_instance=3,
                         seed=SeedSpec(4))
    # with 4 units the levels m/4 reach bins {1, 3, 6, 8, 10} only
    feasible = {1, 3, 6, 8, 10}
    for b in range(1, 11):
        if b in feasible:
            assert profile.sample_counts[b - 1] == 40 * 3
        else:
            assert profile.notes[b - 1] == "infeasible"
            assert profile.temperatures[b - 1] == 1.0
            assert profile.sample_counts[b - 1] == 0


def test_fit_recalx_single_class_batch_keeps_unit_temperature():
    problem = small_problem()
    model = BayesSubsetModel(problem)
    data = sample_dataset(problem, 30, SeedSpec(6))
    data = type(data)(data.X, np.zeros(30, dtype=np.int64), data.class_count)
    profile = fit_recalx(model, data, PerturbationSpec.zeros(6), bin_count=4,
                         samples_per_instance=2, seed=SeedSpec(7))
    assert all(t == 1.0 for t in profile.temperatures)
    assert all(n == "single-class" for n in profile.notes)


def test_fit_recalx_recovers_constant_scale():
    problem = small_problem()
    base = BayesSubsetModel(problem)
    model = MiscalibrationWrapper(base, 3.0)
    data = sample_dataset(problem, 400, SeedSpec(8))
    profile = fit_recalx(model, data, PerturbationSpec.zeros(6), bin_count=5,
                         samples_per_instance=8, seed=SeedSpec(9))
    # every bin is feasible at B=5 with 6 units; fitted T should sit near c=3
    assert all(n == "ok" for n in profile.notes)
    for T in profile.temperatures:
        assert 2.0 < T < 4.5


def test_fit_recalx_deterministic():
    problem = small_problem()
    model = MiscalibrationWrapper(BayesSubsetModel(problem), 2.0)
    data = sample_dataset(problem, 50, SeedSpec(10))
    kwargs = dict(bin_count=5, samples_per_instance=3, seed=SeedSpec(11))
    a = fit_recalx(model, data, PerturbationSpec.zeros(6), **kwargs)
    b = fit_recalx(model, data, PerturbationSpec.zeros(6), **kwargs)
    assert a == b


def test_recal_predict_preserves_argmax():
    problem = small_problem()
    base = BayesSubsetModel(problem)
    model = MiscalibrationWrapper(base, 3.0)
    data = sample_dataset(problem, 60, SeedSpec(12))
    spec = PerturbationSpec.zeros(6)
    profile = fit_recalx(model, data, spec, bin_count=5, samples_per_instance=4,
                         seed=SeedSpec(13))
    recal = RecalibratedModel(model, spec, profile)
    rng = derive_rng(SeedSpec(14), "masks")
    from recalx import apply_perturbation

    for i in range(60):
        mask = sample_uniform_subset(6, rng)
        p_recal = recal_predict(recal, data.X[i], mask)
        p_base = model.eval_probs(apply_perturbation(data.X[i], mask, spec)[None, :])[0]
        assert int(np.argmax(p_recal)) == int(np.argmax(p_base))
        assert_allclose(p_recal.sum(), 1.0, atol=1e-12)


def test_ce_kl_plugin_zero_for_calibrated_groups():
    # two prediction groups whose labels match the stated frequencies exactly
    P = np.vstack([np.tile([0.8, 0.2], (10, 1)), np.tile([0.3, 0.7], (10, 1))])
    y = np.array([0] * 8 + [1] * 2 + [0] * 3 + [1] * 7)
    assert ce_kl_plugin(P, y, cluster_count=10) == pytest.approx(0.0, abs=1e-12)


def test_ce_kl_plugin_hand_value():
    P = np.tile([0.9, 0.1], (10, 1))
    y = np.array([0] * 5 + [1] * 5)
    expected = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
    assert_allclose(ce_kl_plugin(P, y, cluster_count=5), expected, atol=1e-12)


def test_ce_kl_plugin_clusters_when_predictions_spread():
    rng = np.random.default_rng(15)
    P = rng.dirichlet(np.ones(3), size=500)
    y = rng.integers(0, 3, size=500)
    val = ce_kl_plugin(P, y, cluster_count=20)
    assert np.isfinite(val) and val >= 0.0


def test_calibration_report_csv_format(tmp_path):
    rows = (CalibrationRow(0.0, 0.5, 0.125, 0.0625, 10),
            CalibrationRow(0.5, 1.0, 0.25, 0.125, 20))
    report = CalibrationReport(rows, estimator="plug-in", seed=0)
    path = tmp_path / "curve.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,ce_before,ce_after,n"
    assert lines[1].split(",") == ["0.0", "0.5", "0.125", "0.0625", "10"]
    assert report.max_ce("before") == 0.25
    assert report.max_ce("after") == 0.125


def test_calibration_curve_without_profile_reports_identical_columns():
    problem = small_problem()
    model = MiscalibrationWrapper(BayesSubsetModel(problem), 3.0)
    data = sample_dataset(problem, 80, SeedSpec(16))
    report = calibration_curve(model, data, PerturbationSpec.zeros(6),
                               PerturbationLevelBins(5), samples_per_instance=4,
                               seed=SeedSpec(17))
    assert len(report.rows) == 5
    for row in report.rows:
        assert row.ce_after == row.ce_before
        assert row.n == 80 * 4


def test_calibration_curve_profile_reduces_error():
    problem = small_problem()
    model = MiscalibrationWrapper(BayesSubsetModel(problem), 3.0)
    spec = PerturbationSpec.zeros(6)
    fit_data = sample_dataset(problem, 300, SeedSpec(18))
    profile = fit_recalx(model, fit_data, spec, bin_count=5, samples_per_instance=6,
                         seed=SeedSpec(19))
    eval_data = sample_dataset(problem, 300, SeedSpec(20))
    report = calibration_curve(model, eval_data, spec, PerturbationLevelBins(5),
                               samples_per_instance=6, seed=SeedSpec(21),
                               profile=profile)
    assert report.max_ce("after") < report.max_ce("before")


def test_calibration_curve_deterministic():
    problem = small_problem()
    model = BayesSubsetModel(problem)
    data = sample_dataset(problem, 40, SeedSpec(22))
    args = (model, data, PerturbationSpec.zeros(6), PerturbationLevelBins(5))
    a = calibration_curve(*args, samples_per_instance=3, seed=SeedSpec(23))
    b = calibration_curve(*args, samples_per_instance=3, seed=SeedSpec(23))
    assert a.rows == b.rows
