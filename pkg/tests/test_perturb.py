import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from recalx import (
    FeatureGroups,
    InfeasibleBinError,
    PerturbationLevelBins,
    PerturbationSpec,
    SeedSpec,
    SubsetMask,
    apply_perturbation,
    apply_perturbation_batch,
    bin_for_perturbed_count,
    bin_of,
    derive_rng,
    enumerate_subsets,
    feasible_perturbed_counts,
    feature_observed_array,
    load_perturbation_spec,
    perturbation_level,
    sample_subset_in_bin,
    sample_uniform_subset,
    save_perturbation_spec,
)


def test_apply_perturbation_replaces_unobserved_with_baseline():
    spec = PerturbationSpec(np.array([9.0, 9.0, 9.0]))
    x = np.array([1.0, 2.0, 3.0])
    out = apply_perturbation(x, SubsetMask.from_indices(3, [1]), spec)
    assert_array_equal(out, [9.0, 2.0, 9.0])
    assert_array_equal(apply_perturbation(x, SubsetMask.full(3), spec), x)
    assert_array_equal(apply_perturbation(x, SubsetMask.empty(3), spec), spec.baseline)


def test_apply_perturbation_batch_matches_per_row():
    spec = PerturbationSpec.zeros(4)
    X = np.random.default_rng(2).normal(size=(6, 4))
    mask = SubsetMask.from_indices(4, [0, 2])
    batch = apply_perturbation_batch(X, mask, spec)
    for i in range(6):
        assert_array_equal(batch[i], apply_perturbation(X[i], mask, spec))


def test_grouped_masking_expands_to_member_features():
    groups = FeatureGroups(((0, 3), (1,), (2, 4)))
    spec = PerturbationSpec.zeros(5, groups)
    assert spec.unit_count == 3
    observed = feature_observed_array(SubsetMask.from_indices(3, [0, 2]), spec)
    assert_array_equal(observed, [True, False, True, True, True])


def test_feature_groups_validation():
    with pytest.raises(ValueError):
        FeatureGroups(((0, 1), (1, 2)))
    with pytest.raises(ValueError):
        FeatureGroups(((0,), (2,)))


def test_perturbation_level_ungrouped():
    spec = PerturbationSpec.zeros(10)
    assert perturbation_level(SubsetMask.full(10), spec) == 0.0
    assert perturbation_level(SubsetMask.empty(10), spec) == 1.0
    assert_allclose(perturbation_level(SubsetMask.from_indices(10, range(7)), spec), 0.3)


def test_perturbation_level_weights_groups_by_size():
    groups = FeatureGroups(((0, 1, 2), (3,)))
    spec = PerturbationSpec.zeros(4, groups)
    # perturbing the 3-feature group costs 3/4, the singleton 1/4
    assert_allclose(perturbation_level(SubsetMask.from_indices(2, [1]), spec), 0.75)
    assert_allclose(perturbation_level(SubsetMask.from_indices(2, [0]), spec), 0.25)


def test_bin_of_half_open_with_closed_last():
    bins = PerturbationLevelBins(10)
    assert bin_of(0.0, bins) == 1
    assert bin_of(0.05, bins) == 1
    assert bin_of(0.1, bins) == 2
    assert bin_of(0.95, bins) == 10
    assert bin_of(1.0, bins) == 10


def test_bin_of_snaps_float_noise_at_edges():
    bins = PerturbationLevelBins(10)
    # 3/10 computed via (d - |S|) / d carries rounding but must stay in bin 4
    level = (10 - 7) / 10
    assert bin_of(level, bins) == 4
    assert bin_of(0.3 + 2e-11, bins) == 4
    assert bin_of(0.3 - 2e-11, bins) == 4
    assert bin_of(0.2999, bins) == 3


def test_bin_for_perturbed_count_agrees_with_bin_of():
    for B in (1, 3, 7, 10):
        bins = PerturbationLevelBins(B)
        for g in (4, 6, 8, 10):
            for m in range(g + 1):
                assert bin_for_perturbed_count(m, g, bins) == bin_of(m / g, bins)


def test_feasible_counts_cover_every_mask_size_once():
    bins = PerturbationLevelBins(10)
    for g in (6, 8, 10):
        seen = []
        for b in range(1, 11):
            seen.extend(feasible_perturbed_counts(b, bins, g))
        assert sorted(seen) == list(range(g + 1))


def test_feasible_counts_known_gaps():
    bins = PerturbationLevelBins(10)
    assert feasible_perturbed_counts(5, bins, 8) == []
    assert feasible_perturbed_counts(1, bins, 10) == [0]
    # 0.9 sits on the closed side of the last bin, so m=9 joins m=10 there
    assert feasible_perturbed_counts(10, bins, 10) == [9, 10]


def test_sample_subset_in_bin_stays_in_bin():
    bins = PerturbationLevelBins(10)
    spec = PerturbationSpec.zeros(8)
    rng = derive_rng(SeedSpec(3), "sample")
    for _ in range(200):
        b = int(rng.integers(1, 11))
        if not feasible_perturbed_counts(b, bins, 8):
            continue
        mask = sample_subset_in_bin(b, bins, 8, rng)
        assert bin_of(perturbation_level(mask, spec), bins) == b


def test_sample_subset_in_bin_infeasible_raises():
    with pytest.raises(InfeasibleBinError):
        sample_subset_in_bin(5, PerturbationLevelBins(10), 8, np.random.default_rng(0))


def test_sample_uniform_subset_hits_all_masks():
    rng = derive_rng(SeedSpec(1), "uniform")
    seen = {sample_uniform_subset(3, rng).bits for _ in range(400)}
    assert seen == set(range(8))


def test_enumerate_subsets_order():
    masks = enumerate_subsets(2)
    assert [m.bits for m in masks] == [0, 1, 2, 3]
    assert [m.observed_indices() for m in masks] == [[], [0], [1], [0, 1]]
    with pytest.raises(ValueError):
        enumerate_subsets(26)


def test_perturbation_spec_round_trip(tmp_path):
    spec = PerturbationSpec(np.array([0.0, 1.5, 0.0, 2.5]),
                            FeatureGroups(((0, 2), (1,), (3,))))
    path = tmp_path / "spec.json"
    save_perturbation_spec(path, spec)
    back = load_perturbation_spec(path)
    assert_array_equal(back.baseline, spec.baseline)
    assert back.groups == spec.groups


def test_level_bins_edges_and_midpoints():
    bins = PerturbationLevelBins(4)
    assert_allclose(bins.edges, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert_allclose(bins.midpoints(), [0.125, 0.375, 0.625, 0.875])
    with pytest.raises(ValueError):
        PerturbationLevelBins(0)
