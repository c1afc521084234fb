"""Finite synthetic problems and exact verification of the decomposition results.

Everything here is exact arithmetic over explicit joint tables: predictive
power, mutual information between predictions and labels, KL calibration
error, the three-term decomposition of predictive power, the canonical
calibration map, and a numerical checker for the local explanation-error
bound. Problems are small by construction (at most 8 features, 4 values, 4
classes) so every expectation is a finite sum and every subset can be
enumerated.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .calibrate import CalibrationReport, CalibrationRow, TemperatureProfile
from .core import PROB_EPS, RecalxError, SeedSpec, SubsetMask, softmax
from .explain import ValueFunction, shapley_exact
from .models import ModelHandle
from .perturb import (
    PerturbationLevelBins,
    PerturbationSpec,
    feasible_perturbed_counts,
    feature_observed_array,
)

MAX_FEATURES = 8
MAX_CARDINALITY = 4
MAX_CLASSES = 4
GROUP_RESOLUTION = 12  # decimal digits for prediction-vector grouping


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    """Discrete joint distribution over features and labels, stored explicitly.

    Features take values in {1..V}; the value 0 never occurs in data and is
    reserved as the perturbation baseline, so a perturbed instance uniquely
    encodes which features were kept and what their values are. The joint
    table has shape (V,) * d + (K,).
    """

    cardinality: int
    feature_count: int
    class_count: int
    joint: np.ndarray
    informative: tuple[int, ...] | None = None

    def __post_init__(self):
        V, d, K = self.cardinality, self.feature_count, self.class_count
        if not 1 <= d <= MAX_FEATURES:
            raise ValueError(f"feature count must be in [1, {MAX_FEATURES}], got {d}")
        if not 1 <= V <= MAX_CARDINALITY:
            raise ValueError(f"cardinality must be in [1, {MAX_CARDINALITY}], got {V}")
        if not 2 <= K <= MAX_CLASSES:
            raise ValueError(f"class count must be in [2, {MAX_CLASSES}], got {K}")
        table = np.asarray(self.joint, dtype=np.float64)
        want = (V,) * d + (K,)
        if table.shape != want:
            raise ValueError(f"joint table must have shape {want}, got {table.shape}")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ValueError("joint table entries must be finite and nonnegative")
        if abs(table.sum() - 1.0) > 1e-9:
            raise ValueError(f"joint table must sum to 1, got {table.sum()!r}")
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "joint", table)
        if self.informative is not None:
            inf = tuple(sorted(int(i) for i in self.informative))
            if any(not 0 <= i < d for i in inf) or len(set(inf)) != len(inf):
                raise ValueError("informative indices must be distinct features")
            object.__setattr__(self, "informative", inf)

    @cached_property
    def p_x(self) -> np.ndarray:
        """Feature marginal, shape (V,) * d."""
        out = self.joint.sum(axis=-1)
        out.setflags(write=False)
        return out

    @cached_property
    def p_y(self) -> np.ndarray:
        """Label marginal, shape (K,)."""
        out = self.joint.sum(axis=tuple(range(self.feature_count)))
        out.setflags(write=False)
        return out

    @property
    def support_size(self) -> int:
        return self.cardinality**self.feature_count

    def instance_from_flat(self, index: int) -> np.ndarray:
        """Feature values (1..V) for a row-major flat index into the support."""
        V, d = self.cardinality, self.feature_count
        if not 0 <= index < self.support_size:
            raise ValueError(f"flat index {index} outside support")
        x = np.empty(d)
        for j in range(d):
            period = V ** (d - 1 - j)
            x[j] = (index // period) % V + 1
        return x

    def to_json_file(self, path: str | Path) -> None:
        obj = {
            "cardinality": self.cardinality,
            "features": self.feature_count,
            "classes": self.class_count,
            "joint": [float(v) for v in self.joint.reshape(-1)],
        }
        if self.informative is not None:
            obj["informative"] = list(self.informative)
        Path(path).write_text(json.dumps(obj, sort_keys=True) + "\n")

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SyntheticProblem":
        obj = json.loads(Path(path).read_text())
        V, d, K = int(obj["cardinality"]), int(obj["features"]), int(obj["classes"])
        flat = np.asarray(obj["joint"], dtype=np.float64)
        if flat.shape != (V**d * K,):
            raise ValueError(
                f"joint table needs {V**d * K} entries for V={V}, d={d}, K={K}, "
                f"got {flat.shape[0]}"
            )
        informative = obj.get("informative")
        return cls(
            cardinality=V,
            feature_count=d,
            class_count=K,
            joint=flat.reshape((V,) * d + (K,)),
            informative=None if informative is None else tuple(int(i) for i in informative),
        )


class BayesSubsetModel(ModelHandle):
    """Exact conditional label distribution given the observed features.

    Inputs follow the sentinel encoding: entry 0 means the feature was
    perturbed away, values 1..V mean it was observed. The returned
    probabilities are P(Y | X_S = x_S) by exact marginalization of the joint
    table, so the model is perfectly calibrated under every subset
    perturbation. Off-support queries fall back to the label marginal.
    """

    def __init__(self, problem: SyntheticProblem):
        self.problem = problem
        self.name = "bayes"
        self.feature_count = problem.feature_count
        self.class_count = problem.class_count
        self._marginals: dict[int, np.ndarray] = {}

    def _marginal(self, bits: int) -> np.ndarray:
        got = self._marginals.get(bits)
        if got is None:
            d = self.problem.feature_count
            axes = tuple(i for i in range(d) if not (bits >> i) & 1)
            got = self.problem.joint.sum(axis=axes) if axes else self.problem.joint
            self._marginals[bits] = got
        return got

    def _logits(self, X: np.ndarray) -> np.ndarray:
        V, d, K = self.problem.cardinality, self.problem.feature_count, self.problem.class_count
        vals = np.rint(X)
        bad = ~np.isclose(X, vals, atol=1e-9)
        if bad.any():
            r = int(np.argwhere(bad)[0, 0])
            raise RecalxError(f"input row {r} is not sentinel-encoded: {X[r]!r}")
        vals = vals.astype(np.int64)
        if np.any(vals < 0) or np.any(vals > V):
            r = int(np.argwhere((vals < 0) | (vals > V))[0, 0])
            raise RecalxError(f"input row {r} has values outside 0..{V}: {X[r]!r}")
        bits_arr = (vals != 0) @ (1 << np.arange(d, dtype=np.int64))
        out = np.empty((X.shape[0], K))
        for bits in np.unique(bits_arr):
            rows = np.flatnonzero(bits_arr == bits)
            obs = [f for f in range(d) if (int(bits) >> f) & 1]
            marg = self._marginal(int(bits))
            if obs:
                cells = marg[tuple(vals[rows][:, obs].T - 1)]
            else:
                cells = np.tile(marg, (rows.shape[0], 1))
            totals = cells.sum(axis=1, keepdims=True)
            p = np.where(totals > 0, cells / np.maximum(totals, PROB_EPS), self.problem.p_y)
            out[rows] = np.log(np.maximum(p, PROB_EPS))
        return out


# Exact oracle machinery -----------------------------------------------------


def _subset_inputs(problem: SyntheticProblem, spec: PerturbationSpec, mask: SubsetMask):
    """Distinct perturbed inputs pi(x, S) and their exact label joints.

    Returns (inputs, label_joint, weights): one row per combination of
    observed feature values in row-major order, where label_joint[c, y] =
    P(X_S = c, Y = y) and weights[c] = P(X_S = c).
    """
    V, d, K = problem.cardinality, problem.feature_count, problem.class_count
    if spec.feature_count != d:
        raise ValueError("perturbation spec feature count disagrees with the problem")
    obs = np.flatnonzero(feature_observed_array(mask, spec))
    unobs = tuple(i for i in range(d) if i not in set(obs.tolist()))
    margin = problem.joint.sum(axis=unobs) if unobs else problem.joint
    rows = V ** len(obs)
    label_joint = margin.reshape(rows, K)
    inputs = np.tile(spec.baseline, (rows, 1))
    for j, f in enumerate(obs):
        period = V ** (len(obs) - 1 - j)
        inputs[:, f] = (np.arange(rows) // period) % V + 1
    weights = label_joint.sum(axis=1)
    return inputs, label_joint, weights


def _subset_eval(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec, mask: SubsetMask
):
    """Model predictions over the distinct pi(x, S) with exact label joints."""
    inputs, label_joint, weights = _subset_inputs(problem, spec, mask)
    return model.eval_probs(inputs), label_joint, weights


def _group_predictions(preds: np.ndarray, label_joint: np.ndarray, weights: np.ndarray):
    """Partition support rows by prediction vector at fixed resolution.

    Zero-probability rows are dropped; they contribute to no expectation.
    Returns (q, group_joint, group_weight) where q is the probability-weighted
    mean prediction of each group, clamped away from zero so every logarithm
    below is finite. For exact models repeats are exact and the mean is just
    the shared vector.
    """
    keep = weights > 0
    preds, label_joint, weights = preds[keep], label_joint[keep], weights[keep]
    keys = np.round(preds, GROUP_RESOLUTION)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    G, K = uniq.shape[0], preds.shape[1]
    q = np.zeros((G, K))
    group_joint = np.zeros((G, K))
    group_weight = np.zeros(G)
    np.add.at(q, inv, weights[:, None] * preds)
    np.add.at(group_joint, inv, label_joint)
    np.add.at(group_weight, inv, weights)
    q = np.maximum(q / group_weight[:, None], PROB_EPS)
    return q, group_joint, group_weight


def _grouped(problem, model, spec, mask):
    return _group_predictions(*_subset_eval(problem, model, spec, mask))


def _expected_loss(q: np.ndarray, group_joint: np.ndarray) -> float:
    """E[-log q_Z(Y)] where Z is the prediction group of X."""
    return float(-(group_joint * np.log(q)).sum())


def _mi_from_groups(group_joint: np.ndarray) -> float:
    pz = group_joint.sum(axis=1)
    py = group_joint.sum(axis=0)
    total = 0.0
    for z in range(group_joint.shape[0]):
        for y in range(group_joint.shape[1]):
            p = group_joint[z, y]
            if p > 0:
                total += p * math.log(p / (pz[z] * py[y]))
    return max(total, 0.0)


def _ce_from_groups(q: np.ndarray, group_joint: np.ndarray, group_weight: np.ndarray) -> float:
    total = 0.0
    for z in range(q.shape[0]):
        w = group_weight[z]
        if w <= 0:
            continue
        cond = group_joint[z] / w
        support = cond > 0
        kl = float(np.sum(cond[support] * np.log(cond[support] / q[z, support])))
        total += w * max(kl, 0.0)
    return total


def exact_predictive_power(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec, mask: SubsetMask
) -> float:
    """Expected loss reduction of observing the subset versus observing nothing.

    Cross-entropy loss with natural logarithm, computed exactly over the joint
    table. Predictions are grouped at fixed resolution and clamped away from
    zero; for the models used here both are no-ops up to float noise.
    """
    g = spec.unit_count
    q0, j0, _ = _grouped(problem, model, spec, SubsetMask.empty(g))
    qs, js, _ = _grouped(problem, model, spec, mask)
    return _expected_loss(q0, j0) - _expected_loss(qs, js)


def exact_mutual_information(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec, mask: SubsetMask
) -> float:
    """Mutual information between the prediction group under S and the label."""
    _, group_joint, _ = _grouped(problem, model, spec, mask)
    return _mi_from_groups(group_joint)


def exact_ce_kl(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec, mask: SubsetMask
) -> float:
    """Exact KL calibration error of the model under perturbation subset S.

    E[KL(P(Y | f(pi(X, S))) || f(pi(X, S)))] over the prediction groups.
    """
    return _ce_from_groups(*_grouped(problem, model, spec, mask))


def decomposition_bias(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec
) -> float:
    """KL(P_Y || prediction on the fully perturbed input)."""
    g = spec.unit_count
    q0, j0, w0 = _grouped(problem, model, spec, SubsetMask.empty(g))
    # The fully perturbed input is a single point, hence a single group.
    py = j0.sum(axis=0)
    q = (q0 * w0[:, None]).sum(axis=0) / w0.sum()
    support = py > 0
    kl = float(np.sum(py[support] * np.log(py[support] / q[support])))
    return max(kl, 0.0)


@dataclass(frozen=True)
class DecompositionResult:
    """One subset's predictive power split into bias, information, and
    calibration-error terms, with the identity residual."""

    mask: SubsetMask
    v: float
    bias: float
    mi: float
    ce: float
    residual: float


def verify_decomposition(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec
) -> list[DecompositionResult]:
    """Check v(S) = bias + mi(S) - ce(S) for every subset of units.

    All four quantities are computed exactly from the joint table; the
    residual of each subset should vanish up to float roundoff. Violations
    are reported in the result rows, never raised.
    """
    g = spec.unit_count
    if 2**g > 2**MAX_FEATURES:
        raise ValueError(f"subset enumeration limited to {MAX_FEATURES} units")
    q0, j0, _ = _grouped(problem, model, spec, SubsetMask.empty(g))
    loss_empty = _expected_loss(q0, j0)
    bias = decomposition_bias(problem, model, spec)
    out = []
    for bits in range(2**g):
        mask = SubsetMask(g, bits)
        q, gj, gw = _grouped(problem, model, spec, mask)
        v = loss_empty - _expected_loss(q, gj)
        mi = _mi_from_groups(gj)
        ce = _ce_from_groups(q, gj, gw)
        out.append(DecompositionResult(mask, v, bias, mi, ce, v - (bias + mi - ce)))
    return out


def max_abs_residual(results: list[DecompositionResult]) -> float:
    return max(abs(r.residual) for r in results)


def write_decomposition_csv(results: list[DecompositionResult], path: str | Path) -> None:
    """One row per subset; the mask column holds the binary-counter index."""
    lines = ["mask,v,bias,mi,ce,residual"]
    for r in results:
        lines.append(
            f"{r.mask.bits},{repr(r.v)},{repr(r.bias)},{repr(r.mi)},{repr(r.ce)},{repr(r.residual)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


class _GroupConditionalModel(ModelHandle):
    """Replaces each prediction of an inner model by the exact conditional
    label distribution given that prediction (canonical calibration for one
    subset). Unrecognized predictions fall back to the label marginal."""

    def __init__(self, inner: ModelHandle, table: dict[tuple, np.ndarray], fallback: np.ndarray):
        self.inner = inner
        self.table = table
        self.fallback = fallback
        self.name = f"calibrated({getattr(inner, 'name', 'model')})"
        self.feature_count = inner.feature_count
        self.class_count = inner.class_count

    def _logits(self, X: np.ndarray) -> np.ndarray:
        preds = self.inner.eval_probs(X)
        out = np.empty_like(preds)
        keys = np.round(preds, GROUP_RESOLUTION)
        for r in range(preds.shape[0]):
            cond = self.table.get(tuple(keys[r]), self.fallback)
            out[r] = np.log(np.maximum(cond, PROB_EPS))
        return out


def calibrated_counterpart(
    problem: SyntheticProblem, model: ModelHandle, spec: PerturbationSpec, mask: SubsetMask
) -> ModelHandle:
    """Canonically calibrated version of the model for one subset.

    Each prediction group maps to its exact conditional label distribution,
    so the returned model has zero calibration error under this subset while
    inducing the same partition of the support, hence the same information
    term.
    """
    preds, label_joint, weights = _subset_eval(problem, model, spec, mask)
    keep = weights > 0
    keys = np.round(preds[keep], GROUP_RESOLUTION)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    K = preds.shape[1]
    group_joint = np.zeros((uniq.shape[0], K))
    np.add.at(group_joint, inv, label_joint[keep])
    table = {}
    for z in range(uniq.shape[0]):
        w = group_joint[z].sum()
        table[tuple(uniq[z])] = group_joint[z] / w
    return _GroupConditionalModel(model, table, problem.p_y)


@dataclass(frozen=True)
class LocalBoundReport:
    """Empirical check of the local explanation-error bound.

    ``lhs`` values are (1/g) * squared distance between the model's exact
    Shapley attribution and the one obtained from canonically calibrated
    counterparts, per sampled instance. The probability statement is read as
    over instances drawn from the feature marginal; subsets are enumerated
    exhaustively.
    """

    delta: float
    ce_max: float
    rhs: float
    trials: int
    satisfied: int
    worst_ratio: float
    lhs: tuple[float, ...]
    note: str = "instances drawn from the feature marginal; subsets enumerated exactly"

    @property
    def fraction(self) -> float:
        return self.satisfied / self.trials

    def to_json_file(self, path: str | Path) -> None:
        obj = {
            "delta": self.delta,
            "ce_max": self.ce_max,
            "rhs": self.rhs,
            "trials": self.trials,
            "satisfied": self.satisfied,
            "fraction": self.fraction,
            "worst_ratio": self.worst_ratio,
            "lhs": list(self.lhs),
            "note": self.note,
        }
        Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def verify_local_bound(
    problem: SyntheticProblem,
    model: ModelHandle,
    spec: PerturbationSpec,
    delta: float = 0.05,
    trials: int = 100,
    seed: SeedSpec = SeedSpec(0),
) -> LocalBoundReport:
    """Check (1/g) ||phi - phi*||^2 <= 2 ce_max + sqrt(8 log(1/delta)) empirically.

    ce_max is the maximum exact calibration error over all subsets; phi is the
    exact Shapley attribution of the model's target-class probability and
    phi* the one computed from the canonically calibrated counterpart of each
    subset. The target class is the model's predicted class on the
    unperturbed instance.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must be in (0, 1)")
    if trials < 1:
        raise ValueError("need at least one trial")
    g = spec.unit_count
    V, d = problem.cardinality, problem.feature_count

    # Per-subset tables: raw predictions, group index per combination, and the
    # exact conditional of each group.
    per_mask = []
    ce_max = 0.0
    for bits in range(2**g):
        mask = SubsetMask(g, bits)
        preds, label_joint, weights = _subset_eval(problem, model, spec, mask)
        q, gj, gw = _group_predictions(preds, label_joint, weights)
        ce_max = max(ce_max, _ce_from_groups(q, gj, gw))
        keys = np.round(preds, GROUP_RESOLUTION)
        uniq, inv = np.unique(keys, axis=0, return_inverse=True)
        K = preds.shape[1]
        cond = np.zeros((uniq.shape[0], K))
        np.add.at(cond, inv, label_joint)
        weight_sums = cond.sum(axis=1, keepdims=True)
        fallback = np.broadcast_to(problem.p_y, cond.shape)
        cond = np.where(weight_sums > 0, cond / np.maximum(weight_sums, PROB_EPS), fallback)
        obs = np.flatnonzero(feature_observed_array(mask, spec))
        per_mask.append((preds, inv, cond, obs))
    rhs = 2.0 * ce_max + math.sqrt(8.0 * math.log(1.0 / delta))

    rng = seed.generator()
    flat_px = problem.p_x.reshape(-1)
    draws = rng.choice(problem.support_size, size=trials, p=flat_px / flat_px.sum())
    full_preds = per_mask[2**g - 1][0]

    def combo_index(x_vals: np.ndarray, obs: np.ndarray) -> int:
        idx = 0
        for f in obs:
            idx = idx * V + (int(x_vals[f]) - 1)
        return idx

    lhs_vals = []
    satisfied = 0
    worst = 0.0
    for flat_idx in draws:
        x = problem.instance_from_flat(int(flat_idx))
        k = int(np.argmax(full_preds[combo_index(x, np.arange(d))]))
        theta = np.empty(2**g)
        theta_star = np.empty(2**g)
        for bits in range(2**g):
            preds, inv, cond, obs = per_mask[bits]
            c = combo_index(x, obs)
            theta[bits] = preds[c, k]
            theta_star[bits] = cond[inv[c], k]
        phi = shapley_exact(ValueFunction.from_table(theta, target_class=k)).scores
        phi_star = shapley_exact(ValueFunction.from_table(theta_star, target_class=k)).scores
        lhs = float(np.sum((phi - phi_star) ** 2) / g)
        lhs_vals.append(lhs)
        if lhs <= rhs:
            satisfied += 1
        worst = max(worst, lhs / rhs)
    return LocalBoundReport(
        delta=delta,
        ce_max=ce_max,
        rhs=rhs,
        trials=trials,
        satisfied=satisfied,
        worst_ratio=worst,
        lhs=tuple(lhs_vals),
    )


# Problem generators ---------------------------------------------------------

PROBLEM_KINDS = ("random-table", "noisy-parity", "planted-informative")


def generate_problem(
    kind: str,
    feature_count: int,
    cardinality: int,
    class_count: int,
    seed: SeedSpec,
    informative_count: int | None = None,
    dominant_mass: float = 0.9,
    prior_decay: float = 0.45,
) -> SyntheticProblem:
    """Deterministic synthetic problem of one of three kinds.

    random-table: independent positive cell masses, normalized. All
    conditionals are strictly positive.

    noisy-parity: uniform features; the label is the parity of the informative
    block's value sum, flipped with probability 0.1. Requires two classes.

    planted-informative: uniform independent features; the label depends only
    on a marked informative block. Each block combination gets one dominant
    class holding ``dominant_mass`` probability, drawn from a skewed prior
    (class k with weight ``prior_decay``^k), so the label marginal is skewed
    and conditionals are confident. The remaining features are exact dummies,
    which is the ground truth used by the explanation-quality metrics.
    """
    d, V, K = feature_count, cardinality, class_count
    if kind not in PROBLEM_KINDS:
        raise ValueError(f"unknown problem kind {kind!r}, expected one of {PROBLEM_KINDS}")
    rng = seed.generator()
    if kind == "random-table":
        flat = rng.uniform(0.05, 1.0, size=V**d * K)
        flat = flat / flat.sum()
        return SyntheticProblem(V, d, K, flat.reshape((V,) * d + (K,)))

    m = informative_count if informative_count is not None else max(1, d // 2)
    if not 1 <= m <= d:
        raise ValueError(f"informative count must be in [1, {d}], got {m}")
    if kind == "noisy-parity":
        if K != 2:
            raise ValueError("noisy-parity requires exactly two classes")
        informative = tuple(range(m))
        grids = np.indices((V,) * d)
        parity = np.zeros((V,) * d, dtype=np.int64)
        for i in informative:
            parity += grids[i] + 1
        parity %= 2
        joint = np.empty((V,) * d + (2,))
        flip = 0.1
        joint[..., 0] = np.where(parity == 0, 1 - flip, flip)
        joint[..., 1] = np.where(parity == 1, 1 - flip, flip)
        joint /= V**d
        return SyntheticProblem(V, d, 2, joint, informative=informative)

    # planted-informative
    if not 0.5 <= dominant_mass < 1.0:
        raise ValueError("dominant mass must lie in [0.5, 1)")
    if not 0.0 < prior_decay <= 1.0:
        raise ValueError("prior decay must lie in (0, 1]")
    informative = tuple(sorted(int(i) for i in rng.choice(d, size=m, replace=False)))
    dominant_prior = prior_decay ** np.arange(K)
    dominant_prior /= dominant_prior.sum()
    rest_mass = 1.0 - dominant_mass
    combos = V**m
    cond = np.empty((combos, K))
    for c in range(combos):
        dom = int(rng.choice(K, p=dominant_prior))
        rest = rest_mass * (0.8 * rng.dirichlet(np.ones(K - 1)) + 0.2 / (K - 1))
        row = np.empty(K)
        row[dom] = dominant_mass
        row[[k for k in range(K) if k != dom]] = rest
        cond[c] = row / row.sum()
    joint = np.empty((V,) * d + (K,))
    for flat in range(V**d):
        idx = []
        rem = flat
        for j in range(d):
            period = V ** (d - 1 - j)
            idx.append(rem // period)
            rem %= period
        combo = 0
        for f in informative:
            combo = combo * V + idx[f]
        joint[tuple(idx)] = cond[combo]
    joint /= V**d
    return SyntheticProblem(V, d, K, joint, informative=informative)


def sample_dataset(problem: SyntheticProblem, n: int, seed: SeedSpec):
    """Draw labeled instances from the joint table as a Dataset."""
    from .core import Dataset

    if n < 1:
        raise ValueError("need at least one sample")
    rng = seed.generator()
    flat = problem.joint.reshape(-1)
    cells = rng.choice(flat.shape[0], size=n, p=flat / flat.sum())
    K = problem.class_count
    X = np.empty((n, problem.feature_count))
    y = np.empty(n, dtype=np.int64)
    for r, cell in enumerate(cells):
        X[r] = problem.instance_from_flat(int(cell) // K)
        y[r] = int(cell) % K
    return Dataset(X, y, class_count=K)


def exact_calibration_curve(
    problem: SyntheticProblem,
    model: ModelHandle,
    spec: PerturbationSpec,
    bins: PerturbationLevelBins,
    profile: TemperatureProfile | None = None,
) -> CalibrationReport:
    """Exact per-bin calibration error, before and after temperature scaling.

    Each bin pools every subset whose perturbed-unit count is feasible for it,
    weighting subsets exactly as the in-bin sampler draws them: uniform over
    feasible counts, then uniform over subsets of that count. Predictions are
    pooled across subsets before grouping, which is the calibration error of
    the deployed predictor restricted to that bin. The n column counts pooled
    subsets.
    """
    g = spec.unit_count
    if g > MAX_FEATURES:
        raise ValueError(f"subset enumeration limited to {MAX_FEATURES} units")
    if profile is not None and profile.bins.count != bins.count:
        raise ValueError("profile binning disagrees with requested binning")
    edges = bins.edges
    rows = []
    for b in range(1, bins.count + 1):
        lo, hi = float(edges[b - 1]), float(edges[b])
        counts = feasible_perturbed_counts(b, bins, g)
        if not counts:
            rows.append(CalibrationRow(lo, hi, 0.0, 0.0, 0))
            continue
        T = 1.0 if profile is None else float(profile.temperatures[b - 1])
        pooled = {"before": [], "after": []}
        joints, weights = [], []
        n_masks = 0
        for m_perturbed in counts:
            size = g - m_perturbed
            mask_weight = 1.0 / (len(counts) * math.comb(g, m_perturbed))
            for combo in itertools.combinations(range(g), size):
                mask = SubsetMask.from_indices(g, combo)
                n_masks += 1
                inputs, label_joint, w = _subset_inputs(problem, spec, mask)
                z = model.eval_logits(inputs)
                pooled["before"].append(softmax(z))
                pooled["after"].append(softmax(z / T))
                joints.append(label_joint * mask_weight)
                weights.append(w * mask_weight)
        label_joint = np.concatenate(joints)
        w = np.concatenate(weights)
        ce = {}
        for key in ("before", "after"):
            preds = np.concatenate(pooled[key])
            ce[key] = _ce_from_groups(*_group_predictions(preds, label_joint, w))
        rows.append(CalibrationRow(lo, hi, ce["before"], ce["after"], n_masks))
    return CalibrationReport(tuple(rows), "exact")
