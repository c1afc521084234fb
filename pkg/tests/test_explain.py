import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from recalx import (
    Attribution,
    BayesSubsetModel,
    MiscalibrationWrapper,
    PerturbationSpec,
    SeedSpec,
    SubsetMask,
    SyntheticProblem,
    UndefinedMetricError,
    ValueFunction,
    apply_summary,
    build_summary_matrix,
    generate_problem,
    lime_explain,
    localization_score,
    sample_dataset,
    shapley_exact,
    shapley_sampled,
    spearman_alignment,
)


def brute_force_shapley(vals: np.ndarray, g: int) -> np.ndarray:
    """Average marginal contribution over all g! orderings, straight from the
    factorial definition. Exponential; only for tiny g."""
    phi = np.zeros(g)
    for order in itertools.permutations(range(g)):
        bits = 0
        prev = vals[0]
        for i in order:
            bits |= 1 << i
            phi[i] += vals[bits] - prev
            prev = vals[bits]
    return phi / math.factorial(g)


def random_game(g: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(size=2**g)


def test_exact_matches_brute_force_small_games():
    for g in (2, 3, 4, 5, 6):
        vals = random_game(g, 100 + g)
        att = shapley_exact(ValueFunction.from_table(vals))
        assert_allclose(att.scores, brute_force_shapley(vals, g), atol=1e-10)


def test_exact_known_three_player_game():
    # classic cooperative game: v({0,1})=90, v({0,2})=100, v({1,2})=120, v(N)=220
    vals = np.zeros(8)
    vals[0b011] = 90.0
    vals[0b101] = 100.0
    vals[0b110] = 120.0
    vals[0b111] = 220.0
    att = shapley_exact(ValueFunction.from_table(vals))
    assert_allclose(att.scores, [65.0, 75.0, 80.0], atol=1e-10)
    assert_allclose(att.scores.sum(), 220.0, atol=1e-10)


def test_exact_efficiency_symmetry_dummy_axioms():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = 4
        vals = rng.normal(size=2**g)
        att = shapley_exact(ValueFunction.from_table(vals))
        # efficiency
        assert_allclose(att.scores.sum(), vals[-1] - vals[0], atol=1e-9)
    # dummy: unit 2 of four never changes the value
    base = rng.normal(size=8)
    vals = np.array([base[(bits & 0b011) | ((bits >> 1) & 0b100)] for bits in range(16)])
    att = shapley_exact(ValueFunction.from_table(vals))
    assert abs(att.scores[2]) <= 1e-12
    # symmetry: swapping two interchangeable units leaves scores equal
    sym = np.array([float((bits & 1) + (bits >> 1 & 1)) for bits in range(8)])
    att = shapley_exact(ValueFunction.from_table(sym))
    assert_allclose(att.scores[0], att.scores[1], atol=1e-12)


def test_exact_additive_game_recovers_weights():
    g = 6
    a = np.linspace(-1.0, 1.5, g)
    vals = np.array([sum(a[i] for i in range(g) if bits >> i & 1) for bits in range(2**g)])
    att = shapley_exact(ValueFunction.from_table(vals))
    assert_allclose(att.scores, a, atol=1e-12)


def test_exact_evaluates_each_subset_once():
    v = ValueFunction.from_table(random_game(5, 3))
    att = shapley_exact(v)
    assert att.evals == 2**5
    assert v.eval_count == 2**5
    again = shapley_exact(v)
    assert again.evals == 0  # cache reused


def test_sampled_converges_to_exact():
    g = 6
    vals = random_game(g, 17)
    v = ValueFunction.from_table(vals)
    exact = shapley_exact(v)
    sampled = shapley_sampled(v, permutations=4000, seed=SeedSpec(21))
    assert np.max(np.abs(sampled.scores - exact.scores)) <= 0.05
    assert sampled.stderr is not None
    assert np.all(sampled.stderr > 0)
    # errors should sit within a few standard errors of zero
    assert np.all(np.abs(sampled.scores - exact.scores) <= 6 * sampled.stderr + 1e-12)


def test_sampled_deterministic_given_seed():
    v1 = ValueFunction.from_table(random_game(5, 9))
    v2 = ValueFunction.from_table(random_game(5, 9))
    a = shapley_sampled(v1, 50, SeedSpec(33))
    b = shapley_sampled(v2, 50, SeedSpec(33))
    assert_allclose(a.scores, b.scores, atol=0)


def test_summary_matrix_reproduces_exact_shapley():
    rng = np.random.default_rng(2)
    for g in (1, 2, 5, 8):
        vals = rng.normal(size=2**g)
        phi = apply_summary(build_summary_matrix(g), vals)
        exact = shapley_exact(ValueFunction.from_table(vals))
        assert_allclose(phi, exact.scores, atol=1e-10)


def test_summary_matrix_single_unit_sign():
    A = build_summary_matrix(1).matrix
    assert_allclose(A, [[-1.0, 1.0]])


def test_summary_matrix_rejects_bad_sizes():
    with pytest.raises(ValueError):
        build_summary_matrix(0)
    with pytest.raises(ValueError):
        build_summary_matrix(13)
    with pytest.raises(ValueError):
        apply_summary(build_summary_matrix(3), np.zeros(7))


def test_lime_enumerated_recovers_additive_game():
    g = 6
    a = np.random.default_rng(4).normal(size=g)
    vals = np.array([0.3 + sum(a[i] for i in range(g) if bits >> i & 1)
                     for bits in range(2**g)])
    att = lime_explain(ValueFunction.from_table(vals), 0, ridge=1e-8,
                       enumerate_all=True)
    assert_allclose(att.scores, a, atol=1e-6)


def test_lime_sampled_close_on_additive_game():
    g = 5
    a = np.random.default_rng(6).normal(size=g)
    vals = np.array([sum(a[i] for i in range(g) if bits >> i & 1) for bits in range(2**g)])
    att = lime_explain(ValueFunction.from_table(vals), samples=400, ridge=1e-8,
                       seed=SeedSpec(7))
    assert_allclose(att.scores, a, atol=1e-5)


def test_lime_validates_budget():
    v = ValueFunction.from_table(np.zeros(8))
    with pytest.raises(ValueError):
        lime_explain(v, samples=3)


def test_value_function_from_model_targets_predicted_class():
    problem = generate_problem("planted-informative", 5, 2, 3, SeedSpec(12),
                               informative_count=2)
    model = BayesSubsetModel(problem)
    data = sample_dataset(problem, 5, SeedSpec(13))
    spec = PerturbationSpec.zeros(5)
    for i in range(5):
        v = ValueFunction.from_model(model, data.X[i], spec)
        probs = model.eval_probs(data.X[i][None, :])[0]
        assert v.target_class == int(np.argmax(probs))
        assert_allclose(v(SubsetMask.full(5)), probs[v.target_class], atol=1e-12)


def test_value_function_rejects_bad_target():
    problem = generate_problem("random-table", 4, 2, 2, SeedSpec(14))
    model = BayesSubsetModel(problem)
    x = np.ones(4)
    with pytest.raises(ValueError):
        ValueFunction.from_model(model, x, PerturbationSpec.zeros(4), target_class=5)


def test_attribution_json_round_trip(tmp_path):
    att = Attribution("shapley-exact", 1, np.array([0.2, -0.1, 0.4]), evals=8, seed=3)
    path = tmp_path / "att.json"
    att.to_json_file(path)
    back = Attribution.from_json_file(path)
    assert back.method == att.method
    assert back.target_class == 1
    assert_allclose(back.scores, att.scores)
    assert back.evals == 8 and back.seed == 3


def test_attribution_csv_layout(tmp_path):
    att = Attribution("lime", 0, np.array([0.5, 0.25]), evals=4)
    path = tmp_path / "att.csv"
    att.to_csv_file(path)
    assert path.read_text() == "unit_index,score\n0,0.5\n1,0.25\n"


def test_spearman_alignment_perfect_and_reversed():
    assert spearman_alignment(np.array([0.1, 0.2, 0.3]), np.array([1.0, 2.0, 3.0])) == 1.0
    assert spearman_alignment(np.array([0.3, 0.2, 0.1]), np.array([1.0, 2.0, 3.0])) == -1.0


def test_spearman_alignment_undefined_for_constant_vectors():
    with pytest.raises(UndefinedMetricError):
        spearman_alignment(np.array([0.5, 0.5, 0.5]), np.array([1.0, 2.0, 3.0]))


def test_localization_score_positive_mass_share():
    scores = np.array([0.6, -0.3, 0.2, 0.2])
    region = SubsetMask.from_indices(4, [0, 2])
    assert_allclose(localization_score(scores, region), 0.8 / 1.0)
    with pytest.raises(UndefinedMetricError):
        localization_score(np.array([-1.0, -2.0]), SubsetMask.from_indices(2, [0]))
