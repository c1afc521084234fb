"""Baseline-replacement perturbation, perturbation levels, level bins, and the
subset samplers used by calibration fitting and explanation methods.

Masks operate on "units": raw features by default, or feature groups when a
:class:`FeatureGroups` partition is supplied (groups keep the subset universe
tractable for high-dimensional inputs, analogous to superpixels). The
perturbation level always weights groups by the number of raw features they
contain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import InfeasibleBinError, SubsetMask, as_batch, as_instance

# Snap tolerance for levels that are mathematically exact bin edges but carry
# float rounding from (d - |S|) / d.
_EDGE_SNAP = 1e-9


@dataclass(frozen=True)
class FeatureGroups:
    """Disjoint, covering, nonempty index sets partitioning {0..d-1}."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        if not groups or any(len(g) == 0 for g in groups):
            raise ValueError("groups must be nonempty")
        flat = [i for g in groups for i in g]
        if len(flat) != len(set(flat)):
            raise ValueError("groups must be disjoint")
        if set(flat) != set(range(len(flat))):
            raise ValueError("groups must cover {0..d-1} exactly")
        object.__setattr__(self, "groups", groups)

    @property
    def count(self) -> int:
        return len(self.groups)

    @property
    def feature_count(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)


@dataclass(frozen=True)
class PerturbationSpec:
    """Fixed baseline values for perturbed features, plus optional grouping."""

    baseline: np.ndarray
    groups: FeatureGroups | None = None

    def __post_init__(self):
        baseline = as_instance(self.baseline)
        baseline.setflags(write=False)
        object.__setattr__(self, "baseline", baseline)
        if self.groups is not None and self.groups.feature_count != baseline.shape[0]:
            raise ValueError("groups must partition exactly the baseline's features")

    @classmethod
    def zeros(cls, feature_count: int, groups: FeatureGroups | None = None) -> "PerturbationSpec":
        return cls(np.zeros(feature_count), groups)

    @property
    def feature_count(self) -> int:
        return int(self.baseline.shape[0])

    @property
    def unit_count(self) -> int:
        """Number of maskable units: groups if present, else raw features."""
        return self.groups.count if self.groups is not None else self.feature_count


def load_perturbation_spec(path: str | Path) -> PerturbationSpec:
    """Read {"baseline": [...], "groups": [[idx, ...], ...]} (groups optional)."""
    obj = json.loads(Path(path).read_text())
    baseline = np.asarray(obj["baseline"], dtype=np.float64)
    groups = None
    if obj.get("groups") is not None:
        groups = FeatureGroups(tuple(tuple(g) for g in obj["groups"]))
    return PerturbationSpec(baseline, groups)


def save_perturbation_spec(path: str | Path, spec: PerturbationSpec) -> None:
    obj: dict = {"baseline": [float(v) for v in spec.baseline]}
    if spec.groups is not None:
        obj["groups"] = [list(g) for g in spec.groups.groups]
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


@dataclass(frozen=True)
class PerturbationLevelBins:
    """B equal-width bins over [0, 1]: [e_{b-1}, e_b) with the last bin closed."""

    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one bin")

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.count + 1) / self.count

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.count) + 0.5) / self.count


def feature_observed_array(mask: SubsetMask, spec: PerturbationSpec) -> np.ndarray:
    """Expand a unit mask to a per-feature boolean observed array."""
    d = spec.feature_count
    if spec.groups is None:
        if mask.size != d:
            raise ValueError(f"mask over {mask.size} units, expected {d} features")
        return mask.to_bool_array()
    if mask.size != spec.groups.count:
        raise ValueError(f"mask over {mask.size} units, expected {spec.groups.count} groups")
    observed = np.zeros(d, dtype=bool)
    for gi, members in enumerate(spec.groups.groups):
        if mask.contains(gi):
            observed[list(members)] = True
    return observed


def apply_perturbation(x: np.ndarray, mask: SubsetMask, spec: PerturbationSpec) -> np.ndarray:
    """Keep observed features of ``x``; replace the rest with baseline values."""
    x = as_instance(x, spec.feature_count)
    observed = feature_observed_array(mask, spec)
    return np.where(observed, x, spec.baseline)


def apply_perturbation_batch(X: np.ndarray, mask: SubsetMask, spec: PerturbationSpec) -> np.ndarray:
    X = as_batch(X, spec.feature_count)
    observed = feature_observed_array(mask, spec)
    return np.where(observed[None, :], X, spec.baseline[None, :])


def perturbation_level(mask: SubsetMask, spec: PerturbationSpec) -> float:
    """Fraction of perturbed raw features, in [0, 1].

    With groups, perturbed groups contribute their feature counts, so the
    level stays a fraction of the d raw features.
    """
    d = spec.feature_count
    if spec.groups is None:
        if mask.size != d:
            raise ValueError(f"mask over {mask.size} units, expected {d} features")
        return (d - mask.observed_count()) / d
    if mask.size != spec.groups.count:
        raise ValueError(f"mask over {mask.size} units, expected {spec.groups.count} groups")
    perturbed = sum(
        len(members) for gi, members in enumerate(spec.groups.groups) if not mask.contains(gi)
    )
    return perturbed / d


def bin_of(level: float, bins: PerturbationLevelBins) -> int:
    """Bin index in {1..B} for a perturbation level.

    Half-open assignment [e_{b-1}, e_b), except the last bin which is closed
    at 1. Levels within 1e-9 of an edge snap to it, so float noise in
    (d - |S|) / d cannot move an exact-edge level into the wrong bin.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"perturbation level {level} outside [0, 1]")
    scaled = level * bins.count
    nearest = round(scaled)
    k = nearest if abs(scaled - nearest) < _EDGE_SNAP else int(np.floor(scaled))
    return min(k + 1, bins.count)


def bin_for_perturbed_count(m: int, unit_mass: int, bins: PerturbationLevelBins) -> int:
    """Exact integer form of :func:`bin_of` for level m / unit_mass."""
    if not 0 <= m <= unit_mass:
        raise ValueError("perturbed count out of range")
    return min(m * bins.count // unit_mass + 1, bins.count)


def feasible_perturbed_counts(b: int, bins: PerturbationLevelBins, unit_count: int) -> list[int]:
    """Perturbed-unit counts m whose level m / unit_count lands in bin b.

    Can be empty when unit_count < B; callers decide whether that is an error.
    Only meaningful for ungrouped units or equal-size groups, where the level
    depends on the count alone.
    """
    if not 1 <= b <= bins.count:
        raise ValueError(f"bin index {b} out of range")
    return [m for m in range(unit_count + 1) if bin_for_perturbed_count(m, unit_count, bins) == b]


def sample_subset_in_bin(
    b: int, bins: PerturbationLevelBins, unit_count: int, rng: np.random.Generator
) -> SubsetMask:
    """Random mask whose perturbation level falls in bin b.

    Uniform over the feasible perturbed counts first, then uniform over
    subsets of that count; stratifying by count avoids the binomial
    concentration a plain uniform subset draw would have.
    """
    feasible = feasible_perturbed_counts(b, bins, unit_count)
    if not feasible:
        raise InfeasibleBinError(
            f"no subset of {unit_count} units has a perturbation level in bin {b}/{bins.count}"
        )
    m = feasible[int(rng.integers(len(feasible)))]
    perturbed = rng.choice(unit_count, size=m, replace=False)
    bits = (1 << unit_count) - 1
    for i in perturbed:
        bits &= ~(1 << int(i))
    return SubsetMask(unit_count, bits)


def sample_uniform_subset(unit_count: int, rng: np.random.Generator) -> SubsetMask:
    """Uniform draw over all 2^g masks."""
    bits = 0
    for i in range(unit_count):
        if rng.integers(2):
            bits |= 1 << i
    return SubsetMask(unit_count, bits)


def enumerate_subsets(unit_count: int) -> list[SubsetMask]:
    """All 2^g masks in binary-counter order (bit i = unit i observed)."""
    if unit_count > 25:
        raise ValueError(f"enumeration of 2^{unit_count} subsets refused (limit 25)")
    return [SubsetMask(unit_count, bits) for bits in range(1 << unit_count)]
