"""Perturbation-based explainers and explanation-quality metrics.

All explainers consume a ValueFunction: a memoized map from subset masks to
the probability of a target class under the perturbed input. Exact Shapley,
sampled Shapley, a weighted-least-squares surrogate explainer, and the
equivalent summary-matrix formulation are provided, plus rank-alignment and
localization metrics for judging attributions against a known ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import json

import numpy as np
from scipy import stats

from .calibrate import RecalibratedModel, recal_predict
from .core import RecalxError, SeedSpec, SubsetMask, UndefinedMetricError, argmax_class, as_instance
from .models import ModelHandle
from .perturb import PerturbationSpec, apply_perturbation

MAX_EXACT_UNITS = 20
MAX_SUMMARY_UNITS = 12


class ValueFunction:
    """Memoized game v(S): probability of a fixed target class under pi(x, S).

    Calls are cached by mask bits, so explainers never query the underlying
    model twice for the same subset. ``eval_count`` counts cache misses.
    """

    def __init__(self, query: Callable[[SubsetMask], float], unit_count: int,
                 target_class: int, name: str = "custom"):
        if unit_count < 1:
            raise ValueError("need at least one unit")
        self._query = query
        self.unit_count = int(unit_count)
        self.target_class = int(target_class)
        self.name = name
        self._cache: dict[int, float] = {}

    @classmethod
    def from_model(
        cls,
        model: ModelHandle | RecalibratedModel,
        x: np.ndarray,
        spec: PerturbationSpec,
        target_class: int | None = None,
    ) -> "ValueFunction":
        """Game over a model's class probability at perturbations of one instance.

        With a RecalibratedModel the temperature of each mask's level bin is
        applied, so attributions reflect the recalibrated probabilities. The
        target class defaults to the predicted class on the unperturbed input;
        recalibration cannot change that prediction.
        """
        x = as_instance(x, spec.feature_count)
        if isinstance(model, RecalibratedModel):
            if model.spec is not spec and model.spec != spec:
                raise ValueError("recalibrated model was fitted for a different perturbation spec")
            full = SubsetMask.full(spec.unit_count)
            base_probs = recal_predict(model, x, full)

            def query(mask: SubsetMask) -> float:
                return float(recal_predict(model, x, mask)[k])
        else:
            base_probs = model.eval_probs(x[None, :])[0]

            def query(mask: SubsetMask) -> float:
                xp = apply_perturbation(x, mask, spec)
                return float(model.eval_probs(xp[None, :])[0, k])

        k = int(target_class) if target_class is not None else argmax_class(base_probs)
        K = base_probs.shape[0]
        if not 0 <= k < K:
            raise ValueError(f"target class {k} outside [0, {K})")
        return cls(query, spec.unit_count, k, name=getattr(model, "name", "model"))

    @classmethod
    def from_table(cls, values: np.ndarray, target_class: int = 0) -> "ValueFunction":
        """Game tabulated over all 2^g subsets in binary-counter order."""
        vals = np.asarray(values, dtype=np.float64)
        g = int(round(math.log2(vals.shape[0])))
        if vals.ndim != 1 or 2**g != vals.shape[0]:
            raise ValueError("table length must be a power of two")
        return cls(lambda m: float(vals[m.bits]), g, target_class, name="table")

    def __call__(self, mask: SubsetMask) -> float:
        if mask.size != self.unit_count:
            raise ValueError(f"mask size {mask.size} != unit count {self.unit_count}")
        got = self._cache.get(mask.bits)
        if got is None:
            got = float(self._query(mask))
            if not math.isfinite(got):
                raise RecalxError(f"value function returned non-finite {got} on {mask}")
            self._cache[mask.bits] = got
        return got

    @property
    def eval_count(self) -> int:
        return len(self._cache)


@dataclass(frozen=True)
class Attribution:
    """Importance scores for each perturbation unit of one explained instance."""

    method: str
    target_class: int
    scores: np.ndarray
    evals: int
    seed: int | None = None
    stderr: np.ndarray | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.shape[0] < 1:
            raise ValueError("scores must be a nonempty vector")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", scores)
        if self.stderr is not None:
            object.__setattr__(self, "stderr", np.asarray(self.stderr, dtype=np.float64))

    @property
    def unit_count(self) -> int:
        return self.scores.shape[0]

    def to_json_file(self, path: str | Path) -> None:
        obj = {
            "method": self.method,
            "target_class": self.target_class,
            "scores": [float(s) for s in self.scores],
            "evals": self.evals,
            "seed": self.seed,
        }
        Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")

    @classmethod
    def from_json_file(cls, path: str | Path) -> "Attribution":
        obj = json.loads(Path(path).read_text())
        return cls(
            method=str(obj["method"]),
            target_class=int(obj["target_class"]),
            scores=np.asarray(obj["scores"], dtype=np.float64),
            evals=int(obj["evals"]),
            seed=None if obj.get("seed") is None else int(obj["seed"]),
        )

    def to_csv_file(self, path: str | Path) -> None:
        lines = ["unit_index,score"]
        for i, s in enumerate(self.scores):
            lines.append(f"{i},{repr(float(s))}")
        Path(path).write_text("\n".join(lines) + "\n")


def _shapley_weights(g: int) -> np.ndarray:
    """w[s] = s! (g - s - 1)! / g! for s = 0..g-1."""
    w = np.empty(g)
    for s in range(g):
        w[s] = math.factorial(s) * math.factorial(g - s - 1) / math.factorial(g)
    return w


def shapley_exact(v: ValueFunction) -> Attribution:
    """Exact Shapley values by full enumeration of the 2^g subsets.

    phi_i = sum over S not containing i of
    |S|! (g-|S|-1)! / g! * (v(S + i) - v(S)). Each subset is evaluated once.
    """
    g = v.unit_count
    if g > MAX_EXACT_UNITS:
        raise ValueError(f"exact enumeration limited to {MAX_EXACT_UNITS} units, got {g}")
    before = v.eval_count
    vals = np.empty(2**g)
    for bits in range(2**g):
        vals[bits] = v(SubsetMask(g, bits))
    all_bits = np.arange(2**g, dtype=np.int64)
    sizes = np.bitwise_count(all_bits).astype(np.int64)
    w = _shapley_weights(g)
    phi = np.empty(g)
    for i in range(g):
        without = all_bits[(all_bits >> i) & 1 == 0]
        phi[i] = np.sum(w[sizes[without]] * (vals[without | (1 << i)] - vals[without]))
    return Attribution("shapley-exact", v.target_class, phi, v.eval_count - before)


def shapley_sampled(v: ValueFunction, permutations: int, seed: SeedSpec) -> Attribution:
    """Monte-Carlo Shapley: mean marginal contribution over random orderings.

    Each permutation contributes one marginal for every unit via its prefix
    masks, so the estimate is unbiased for the exact value. The per-unit
    standard error of the mean is reported when at least two permutations were
    drawn.
    """
    if permutations < 1:
        raise ValueError("need at least one permutation")
    g = v.unit_count
    rng = seed.generator()
    before = v.eval_count
    contrib = np.empty((permutations, g))
    empty_val = v(SubsetMask.empty(g))
    for p in range(permutations):
        order = rng.permutation(g)
        bits = 0
        prev = empty_val
        for i in order:
            bits |= 1 << int(i)
            cur = v(SubsetMask(g, bits))
            contrib[p, i] = cur - prev
            prev = cur
    scores = contrib.mean(axis=0)
    stderr = None
    if permutations >= 2:
        stderr = contrib.std(axis=0, ddof=1) / math.sqrt(permutations)
    return Attribution(
        "shapley-sampled", v.target_class, scores, v.eval_count - before,
        seed=seed.master_seed, stderr=stderr,
    )


def lime_explain(
    v: ValueFunction,
    samples: int,
    kernel_width: float = 0.25,
    ridge: float = 1e-6,
    seed: SeedSpec = SeedSpec(0),
    enumerate_all: bool = False,
) -> Attribution:
    """Sparse-mask surrogate explainer: weighted ridge regression on the game.

    Draws masks uniformly over {0,1}^g, weights each by
    exp(-(1 - |S|/g)^2 / kernel_width^2), and fits weighted least squares with
    an intercept; the ridge penalty applies to the coefficients only. The
    coefficient vector is the attribution. With ``enumerate_all`` every one of
    the 2^g masks is used exactly once instead of sampling, which makes the
    fit deterministic and, for games additive in the mask, recovers the
    per-unit effects up to the ridge bias.
    """
    g = v.unit_count
    if enumerate_all:
        if g > MAX_EXACT_UNITS:
            raise ValueError(f"enumeration limited to {MAX_EXACT_UNITS} units, got {g}")
        samples = 2**g
    elif samples < g + 2:
        raise ValueError(f"need at least g + 2 = {g + 2} samples, got {samples}")
    if kernel_width <= 0:
        raise ValueError("kernel width must be positive")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    before = v.eval_count
    if enumerate_all:
        all_bits = np.arange(samples, dtype=np.int64)
        Z = ((all_bits[:, None] >> np.arange(g)) & 1).astype(np.float64)
    else:
        rng = seed.generator()
        Z = rng.integers(0, 2, size=(samples, g)).astype(np.float64)
    y = np.empty(samples)
    for j in range(samples):
        bits = 0
        for i in range(g):
            if Z[j, i] > 0:
                bits |= 1 << i
        y[j] = v(SubsetMask(g, bits))
    lam = 1.0 - Z.sum(axis=1) / g
    w = np.exp(-(lam**2) / kernel_width**2)
    X = np.hstack([np.ones((samples, 1)), Z])
    penalty = np.diag([0.0] + [ridge] * g)
    lhs = X.T @ (w[:, None] * X) + penalty
    rhs = X.T @ (w * y)
    beta = np.linalg.solve(lhs, rhs)
    return Attribution(
        "lime", v.target_class, beta[1:], v.eval_count - before, seed=seed.master_seed
    )


@dataclass(frozen=True)
class SummaryMatrix:
    """Dense g x 2^g matrix A with phi = A @ theta for tabulated game values.

    Columns follow binary-counter subset order: column index bits encode the
    subset, bit i meaning unit i observed.
    """

    matrix: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=np.float64)
        g = A.shape[0]
        if A.ndim != 2 or A.shape[1] != 2**g:
            raise ValueError(f"matrix must be g x 2^g, got {A.shape}")
        object.__setattr__(self, "matrix", A)

    @property
    def unit_count(self) -> int:
        return self.matrix.shape[0]


def build_summary_matrix(g: int, method: str = "shapley") -> SummaryMatrix:
    """Summary matrix whose product with the 2^g game table gives Shapley values.

    Entry (i, T) is +w(|T| - 1) when i is in T and -w(|T|) otherwise, with
    w(s) = s! (g - s - 1)! / g!. At g = 1 this is [-1, +1] over the column
    order (empty, {0}), matching phi_0 = v({0}) - v(empty).
    """
    if method != "shapley":
        raise ValueError(f"unknown summary method {method!r}")
    if not 1 <= g <= MAX_SUMMARY_UNITS:
        raise ValueError(f"summary matrix limited to {MAX_SUMMARY_UNITS} units, got {g}")
    all_bits = np.arange(2**g, dtype=np.int64)
    sizes = np.bitwise_count(all_bits).astype(np.int64)
    w = _shapley_weights(g)
    A = np.empty((g, 2**g))
    for i in range(g):
        has_i = ((all_bits >> i) & 1) == 1
        A[i, has_i] = w[sizes[has_i] - 1]
        A[i, ~has_i] = -w[sizes[~has_i]]
    return SummaryMatrix(A)


def apply_summary(summary: SummaryMatrix, theta: np.ndarray) -> np.ndarray:
    """Plain matrix-vector product of the summary matrix with game values."""
    theta = np.asarray(theta, dtype=np.float64)
    g = summary.unit_count
    if theta.shape != (2**g,):
        raise ValueError(f"need {2**g} game values, got shape {theta.shape}")
    return summary.matrix @ theta


def _scores_of(phi) -> np.ndarray:
    if isinstance(phi, Attribution):
        return phi.scores
    return np.asarray(phi, dtype=np.float64)


def spearman_alignment(phi, reference) -> float:
    """Spearman rank correlation between an attribution and a reference vector.

    Ties receive average ranks. Raises UndefinedMetricError when either side
    has zero rank variance, where the correlation has no value.
    """
    a = _scores_of(phi)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] < 2:
        raise ValueError("need two equal-length vectors of at least 2 entries")
    if np.unique(a).size < 2 or np.unique(b).size < 2:
        raise UndefinedMetricError("rank correlation undefined for a constant vector")
    rho = stats.spearmanr(a, b).statistic
    return float(rho)


def localization_score(phi, region: SubsetMask) -> float:
    """Share of positive attribution mass falling inside a ground-truth region."""
    scores = _scores_of(phi)
    if region.size != scores.shape[0]:
        raise ValueError(f"region size {region.size} != score count {scores.shape[0]}")
    positive = scores > 0
    total = scores[positive].sum()
    if not positive.any():
        raise UndefinedMetricError("localization undefined without positive scores")
    inside = region.to_bool_array() & positive
    return float(scores[inside].sum() / total)
