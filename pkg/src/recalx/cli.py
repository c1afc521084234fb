"""Command-line interface: synthesis, fitting, reports, explanations, checks.

Every run writes a resolved-config snapshot next to its outputs so the run is
reproducible from the snapshot plus the input files. All outputs are
deterministic given the seed: JSON is emitted with sorted keys, CSV floats use
repr, and nothing embeds timestamps.

Exit codes: 0 success, 1 verification or conformance failure, 2 usage error,
3 model-transport error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibrate import (
    CalibrationReport,
    RecalibratedModel,
    TemperatureProfile,
    calibration_curve,
    fit_recalx,
)
from .core import (
    Dataset,
    ModelTransportError,
    ProtocolError,
    RecalxError,
    SeedSpec,
    SubsetMask,
    UndefinedMetricError,
    load_dataset_csv,
    save_dataset_csv,
)
from .explain import (
    ValueFunction,
    lime_explain,
    localization_score,
    shapley_exact,
    shapley_sampled,
    spearman_alignment,
)
from .models import (
    ExternalModelClient,
    LinearSoftmaxModel,
    MiscalibrationWrapper,
    TableModel,
    _LineChannel,
    _validate_hello,
)
from .perturb import PerturbationLevelBins, PerturbationSpec, load_perturbation_spec
from .theory import (
    BayesSubsetModel,
    SyntheticProblem,
    generate_problem,
    max_abs_residual,
    sample_dataset,
    verify_decomposition,
    verify_local_bound,
    write_decomposition_csv,
)

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_TRANSPORT = 3

MAX_EXACT_CLI_UNITS = 12


class UsageError(RecalxError):
    """Bad flags, config entries, or input files."""


_DEFAULTS: dict[str, dict] = {
    "synth": {
        "kind": "planted-informative",
        "features": 6,
        "cardinality": 3,
        "classes": 3,
        "informative": None,
        "train": 200,
        "val": 200,
        "eval": 200,
        "seed": 0,
        "out_dir": ".",
    },
    "fit": {
        "model": None,
        "data": None,
        "groups": None,
        "bins": 10,
        "masks": 10,
        "miscalibrate": None,
        "seed": 0,
        "out_dir": ".",
    },
    "calib-report": {
        "model": None,
        "data": None,
        "groups": None,
        "profile": None,
        "bins": 10,
        "samples": 10,
        "clusters": 50,
        "miscalibrate": None,
        "seed": 0,
        "out_dir": ".",
    },
    "explain": {
        "model": None,
        "data": None,
        "problem": None,
        "groups": None,
        "profile": None,
        "method": "shapley",
        "permutations": 2000,
        "samples": 1000,
        "kernel_width": 0.25,
        "ridge": 1e-6,
        "rows": None,
        "target_class": None,
        "miscalibrate": None,
        "seed": 0,
        "out_dir": ".",
    },
    "verify": {
        "problem": None,
        "model": None,
        "groups": None,
        "delta": 0.05,
        "trials": 100,
        "miscalibrate": None,
        "seed": 0,
        "out_dir": ".",
    },
    "model-check": {
        "model": None,
        "reference": None,
        "timeout": 10.0,
        "seed": 0,
        "out_dir": ".",
    },
}


def _merge_params(command: str, explicit: dict) -> dict:
    merged = dict(_DEFAULTS[command])
    config_path = explicit.pop("config", None)
    if config_path is not None:
        try:
            loaded = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {config_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {config_path} must hold a JSON object")
        for key, value in loaded.items():
            name = key.replace("-", "_")
            if name not in merged:
                raise UsageError(f"config key {key!r} is not a {command} parameter")
            merged[name] = value
    merged.update(explicit)
    required = {"fit": {"model", "data"}, "calib-report": {"model", "data"},
                "explain": {"model", "data"}, "verify": {"problem"},
                "model-check": {"model"}}.get(command, set())
    for name in sorted(required):
        if merged.get(name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required for {command}")
    return merged


def _out_dir(params: dict) -> Path:
    out = Path(params["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_snapshot(out: Path, command: str, params: dict) -> None:
    _write_json(out / f"{command}-config.json", {"command": command, "parameters": params})


def _load_model(source: str, miscalibrate: float | None):
    """Build a model from a prefixed source string.

    Returns (model, problem-or-None). The problem is populated only for
    bayes: sources so commands can reuse it.
    """
    prefix, sep, rest = source.partition(":")
    if not sep or not rest:
        raise UsageError(
            f"model source {source!r} must look like linear:<file>, table:<file>, "
            "bayes:<problem>, or exec:<command>"
        )
    problem = None
    try:
        if prefix == "linear":
            model = LinearSoftmaxModel.from_json_file(rest)
        elif prefix == "table":
            model = TableModel.from_json_file(rest)
        elif prefix == "bayes":
            problem = SyntheticProblem.from_json_file(rest)
            model = BayesSubsetModel(problem)
        elif prefix == "exec":
            model = ExternalModelClient(rest)
        else:
            raise UsageError(f"unknown model source prefix {prefix!r}")
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load model from {source!r}: {exc}") from exc
    if miscalibrate is not None:
        if not float(miscalibrate) > 0:
            raise UsageError("--miscalibrate must be positive")
        model = MiscalibrationWrapper(model, float(miscalibrate))
    return model, problem


def _close_model(model) -> None:
    inner = model
    while isinstance(inner, MiscalibrationWrapper):
        inner = inner.inner
    if isinstance(inner, ExternalModelClient):
        inner.close()


def _load_spec(params: dict, feature_count: int) -> PerturbationSpec:
    if params.get("groups"):
        try:
            spec = load_perturbation_spec(params["groups"])
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot load groups file {params['groups']!r}: {exc}") from exc
        if spec.feature_count != feature_count:
            raise UsageError(
                f"groups file covers {spec.feature_count} features, data has {feature_count}"
            )
        return spec
    return PerturbationSpec.zeros(feature_count)


def _load_dataset(params: dict) -> Dataset:
    try:
        return load_dataset_csv(params["data"])
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load data file {params['data']!r}: {exc}") from exc


def _load_profile(params: dict) -> TemperatureProfile | None:
    if not params.get("profile"):
        return None
    try:
        return TemperatureProfile.from_json_file(params["profile"])
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load profile {params['profile']!r}: {exc}") from exc


# SVG ------------------------------------------------------------------------


def _write_curve_svg(path: Path, report: CalibrationReport) -> None:
    """Two-series calibration curve, drawn without plotting dependencies.

    Fixed 800 x 500 view box; x is the bin midpoint (perturbation level), y is
    the calibration error. Bins with no samples are skipped.
    """
    W, H = 800, 500
    ml, mr, mt, mb = 80, 30, 50, 70
    rows = [r for r in report.rows if r.n > 0]
    ys = [r.ce_before for r in rows] + [r.ce_after for r in rows]
    ymax = max(max(ys, default=0.0), 1e-6) * 1.08

    def xp(level: float) -> float:
        return ml + level * (W - ml - mr)

    def yp(ce: float) -> float:
        return H - mb - (ce / ymax) * (H - mt - mb)

    def poly(values) -> str:
        return " ".join(f"{xp((r.bin_lo + r.bin_hi) / 2):.2f},{yp(v):.2f}"
                        for r, v in zip(rows, values))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>',
        f'<line x1="{ml}" y1="{H - mb}" x2="{W - mr}" y2="{H - mb}" stroke="#333333" stroke-width="1"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{H - mb}" stroke="#333333" stroke-width="1"/>',
        f'<text x="{W // 2}" y="28" text-anchor="middle" font-size="16" fill="#222222">'
        "calibration error by perturbation level</text>",
        f'<text x="{W // 2}" y="{H - 20}" text-anchor="middle" font-size="13" fill="#222222">'
        "perturbation level (bin midpoint)</text>",
    ]
    for i in range(5):
        level = i / 4
        parts.append(
            f'<text x="{xp(level):.2f}" y="{H - mb + 20}" text-anchor="middle" '
            f'font-size="12" fill="#444444">{level:.2f}</text>'
        )
        ce = ymax * i / 4
        parts.append(
            f'<text x="{ml - 8}" y="{yp(ce):.2f}" text-anchor="end" '
            f'font-size="12" fill="#444444">{ce:.3g}</text>'
        )
    if rows:
        parts.append(
            f'<polyline points="{poly([r.ce_before for r in rows])}" fill="none" '
            'stroke="#c0392b" stroke-width="2"/>'
        )
        parts.append(
            f'<polyline points="{poly([r.ce_after for r in rows])}" fill="none" '
            'stroke="#2980b9" stroke-width="2" stroke-dasharray="6,3"/>'
        )
    parts.append(
        f'<text x="{W - mr - 8}" y="{mt + 18}" text-anchor="end" font-size="13" '
        'fill="#c0392b">before</text>'
    )
    parts.append(
        f'<text x="{W - mr - 8}" y="{mt + 36}" text-anchor="end" font-size="13" '
        'fill="#2980b9">after</text>'
    )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


# Commands -------------------------------------------------------------------


def cmd_synth(params: dict) -> int:
    out = _out_dir(params)
    seed = SeedSpec(int(params["seed"]))
    informative = params["informative"]
    try:
        problem = generate_problem(
            params["kind"],
            int(params["features"]),
            int(params["cardinality"]),
            int(params["classes"]),
            seed.child("problem"),
            informative_count=None if informative is None else int(informative),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    problem.to_json_file(out / "problem.json")
    for split in ("train", "val", "eval"):
        n = int(params[split])
        if n < 1:
            raise UsageError(f"--{split} must be at least 1")
        save_dataset_csv(out / f"{split}.csv", sample_dataset(problem, n, seed.child(split)))
    _write_snapshot(out, "synth", params)
    print(f"wrote problem.json and train/val/eval splits to {out}")
    return EXIT_OK


def cmd_fit(params: dict) -> int:
    out = _out_dir(params)
    dataset = _load_dataset(params)
    spec = _load_spec(params, dataset.feature_count)
    model, _ = _load_model(params["model"], params["miscalibrate"])
    try:
        if dataset.class_count > model.class_count:
            raise UsageError(
                f"data has {dataset.class_count} classes but the model outputs "
                f"{model.class_count}"
            )
        profile = fit_recalx(
            model,
            dataset,
            spec,
            bin_count=int(params["bins"]),
            samples_per_instance=int(params["masks"]),
            seed=SeedSpec(int(params["seed"])).child("fit"),
        )
    finally:
        _close_model(model)
    profile.to_json_file(out / "profile.json")
    _write_snapshot(out, "fit", params)
    fitted = sum(1 for n in profile.sample_counts if n > 0)
    print(f"fitted {fitted}/{profile.bins.count} bins; profile.json written to {out}")
    return EXIT_OK


def cmd_calib_report(params: dict) -> int:
    out = _out_dir(params)
    dataset = _load_dataset(params)
    spec = _load_spec(params, dataset.feature_count)
    profile = _load_profile(params)
    model, _ = _load_model(params["model"], params["miscalibrate"])
    try:
        report = calibration_curve(
            model,
            dataset,
            spec,
            PerturbationLevelBins(int(params["bins"])),
            samples_per_instance=int(params["samples"]),
            seed=SeedSpec(int(params["seed"])).child("curve"),
            profile=profile,
            cluster_count=int(params["clusters"]),
        )
    finally:
        _close_model(model)
    report.write_csv(out / "calibration.csv")
    _write_curve_svg(out / "calibration.svg", report)
    _write_snapshot(out, "calib-report", params)
    print(
        f"max ce before {report.max_ce('before'):.6g}, "
        f"after {report.max_ce('after'):.6g}; calibration.csv written to {out}"
    )
    return EXIT_OK


def _explain_one(vf: ValueFunction, method: str, params: dict, seed: SeedSpec):
    if method == "shapley":
        if vf.unit_count <= MAX_EXACT_CLI_UNITS:
            return shapley_exact(vf)
        return shapley_sampled(vf, int(params["permutations"]), seed)
    if method == "shapley-sampled":
        return shapley_sampled(vf, int(params["permutations"]), seed)
    if method == "lime":
        try:
            return lime_explain(
                vf,
                int(params["samples"]),
                kernel_width=float(params["kernel_width"]),
                ridge=float(params["ridge"]),
                seed=seed,
            )
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    raise UsageError(f"unknown method {method!r}; use shapley, shapley-sampled, or lime")


def cmd_explain(params: dict) -> int:
    out = _out_dir(params)
    dataset = _load_dataset(params)
    spec = _load_spec(params, dataset.feature_count)
    profile = _load_profile(params)
    model, problem = _load_model(params["model"], params["miscalibrate"])
    if params.get("problem"):
        try:
            problem = SyntheticProblem.from_json_file(params["problem"])
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot load problem {params['problem']!r}: {exc}") from exc
    target = params["target_class"]
    target = None if target is None else int(target)
    limit = dataset.n if params["rows"] is None else min(int(params["rows"]), dataset.n)
    seed = SeedSpec(int(params["seed"]))
    explained = model if profile is None else RecalibratedModel(model, spec, profile)

    reference_model = None
    region = None
    if problem is not None and problem.informative is not None:
        reference_model = BayesSubsetModel(problem)
        region = SubsetMask.from_indices(spec.unit_count, problem.informative)

    row_reports = []
    alignments, localizations = [], []
    try:
        for i in range(limit):
            x = dataset.X[i]
            vf = ValueFunction.from_model(explained, x, spec, target_class=target)
            att = _explain_one(vf, params["method"], params, seed.child("row", i))
            att.to_json_file(out / f"row-{i:04d}.attribution.json")
            att.to_csv_file(out / f"row-{i:04d}.attribution.csv")
            row = {
                "row": i,
                "method": att.method,
                "predicted_class": vf.target_class,
                "evals": att.evals,
                "efficiency_gap": float(
                    att.scores.sum()
                    - (vf(SubsetMask.full(vf.unit_count)) - vf(SubsetMask.empty(vf.unit_count)))
                ),
            }
            if reference_model is not None:
                ref = shapley_exact(
                    ValueFunction.from_model(
                        reference_model, x, spec, target_class=vf.target_class
                    )
                ).scores
                try:
                    row["alignment"] = spearman_alignment(att, ref)
                    alignments.append(row["alignment"])
                except UndefinedMetricError:
                    row["alignment"] = None
                try:
                    row["localization"] = localization_score(att, region)
                    localizations.append(row["localization"])
                except UndefinedMetricError:
                    row["localization"] = None
            row_reports.append(row)
    finally:
        _close_model(model)
    metrics = {"rows": row_reports}
    if alignments:
        metrics["mean_alignment"] = float(np.mean(alignments))
    if localizations:
        metrics["mean_localization"] = float(np.mean(localizations))
    _write_json(out / "metrics.json", metrics)
    _write_snapshot(out, "explain", params)
    print(f"explained {limit} rows; metrics.json written to {out}")
    return EXIT_OK


def cmd_verify(params: dict) -> int:
    out = _out_dir(params)
    try:
        problem = SyntheticProblem.from_json_file(params["problem"])
    except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load problem {params['problem']!r}: {exc}") from exc
    spec = _load_spec(params, problem.feature_count)
    if params["model"] is None:
        model: object = BayesSubsetModel(problem)
        if params["miscalibrate"] is not None:
            model = MiscalibrationWrapper(model, float(params["miscalibrate"]))
    else:
        model, _ = _load_model(params["model"], params["miscalibrate"])
    seed = SeedSpec(int(params["seed"]))
    try:
        results = verify_decomposition(problem, model, spec)
        bound = verify_local_bound(
            problem,
            model,
            spec,
            delta=float(params["delta"]),
            trials=int(params["trials"]),
            seed=seed.child("bound"),
        )
    finally:
        _close_model(model)
    write_decomposition_csv(results, out / "decomposition.csv")
    bound.to_json_file(out / "bound.json")
    _write_snapshot(out, "verify", params)
    residual = max_abs_residual(results)
    print(f"decomposition: {len(results)} subsets, max |residual| = {residual:.3g}")
    print(
        f"local bound: {bound.satisfied}/{bound.trials} trials satisfied, "
        f"worst ratio {bound.worst_ratio:.3g}"
    )
    if residual > 1e-9:
        print("verification FAILED: residual exceeds 1e-9", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# Model conformance check ----------------------------------------------------


def cmd_model_check(params: dict) -> int:
    source = params["model"]
    prefix, _, command = source.partition(":")
    if prefix != "exec" or not command:
        raise UsageError("model-check needs --model exec:<command>")
    out = _out_dir(params)
    timeout = float(params["timeout"])
    rng = SeedSpec(int(params["seed"])).child("model-check").generator()

    checks: list[dict] = []
    transport_failure = False

    def record(name: str, ok: bool, detail: str = "") -> None:
        checks.append({"check": name, "status": "pass" if ok else "fail", "detail": detail})
        marker = "ok  " if ok else "FAIL"
        line = f"{marker} {name}"
        if detail and not ok:
            line += f": {detail}"
        print(line)

    try:
        channel = _LineChannel(command, timeout)
    except ModelTransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT

    info = None
    try:
        # 1. hello metadata
        try:
            channel.send({"op": "hello"})
            obj, number = channel.recv_json()
            info = _validate_hello(obj, number)
            record("hello-metadata", True)
        except ProtocolError as exc:
            record("hello-metadata", False, str(exc))

        def ask_logits(batch, request_id):
            channel.send({"op": "logits", "id": request_id, "batch": batch})
            obj, number = channel.recv_json()
            if "error" in obj:
                raise ProtocolError(f"reply line {number}: adapter error {obj['error']!r}")
            if obj.get("id") != request_id:
                raise ProtocolError(
                    f"reply line {number}: id mismatch, sent {request_id}, got {obj.get('id')!r}"
                )
            logits = obj.get("logits")
            arr = np.asarray(logits, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[0] != len(batch):
                raise ProtocolError(f"reply line {number}: logits shape {arr.shape} wrong")
            if info is not None and arr.shape[1] != info.class_count:
                raise ProtocolError(
                    f"reply line {number}: got {arr.shape[1]} classes, hello said "
                    f"{info.class_count}"
                )
            if not np.all(np.isfinite(arr)):
                raise ProtocolError(f"reply line {number}: non-finite logits")
            return arr

        d = info.feature_count if info is not None else 3
        if info is not None:
            for name, size in (("logits-batch", 3), ("logits-single-row", 1), ("logits-large-batch", 64)):
                try:
                    batch = rng.normal(size=(size, d)).tolist()
                    ask_logits(batch, request_id=len(checks))
                    record(name, True)
                except ProtocolError as exc:
                    record(name, False, str(exc))

            try:
                batch = rng.normal(size=(4, d)).tolist()
                first = ask_logits(batch, request_id=101)
                second = ask_logits(batch, request_id=102)
                same = np.array_equal(first, second)
                record("deterministic-replies", same, "" if same else "same batch, different logits")
            except ProtocolError as exc:
                record("deterministic-replies", False, str(exc))

        # malformed input resilience
        try:
            channel.send_raw(b"this is not json\n")
            obj, number = channel.recv_json()
            ok = "error" in obj
            record("malformed-line-error-reply", ok,
                   "" if ok else f"reply line {number} lacks an error field")
        except ProtocolError as exc:
            record("malformed-line-error-reply", False, str(exc))
        try:
            channel.send({"op": "bogus", "id": 777})
            obj, number = channel.recv_json()
            ok = "error" in obj
            record("unknown-op-error-reply", ok,
                   "" if ok else f"reply line {number} lacks an error field")
        except ProtocolError as exc:
            record("unknown-op-error-reply", False, str(exc))
        if info is not None:
            try:
                ask_logits(rng.normal(size=(2, d)).tolist(), request_id=321)
                record("session-survives-errors", True)
            except ProtocolError as exc:
                record("session-survives-errors", False, str(exc))

        # numeric agreement with the reference linear model
        if params["reference"] is not None and info is not None:
            try:
                reference = LinearSoftmaxModel.from_json_file(params["reference"])
                X = rng.uniform(-3.0, 3.0, size=(1000, info.feature_count))
                hosted = np.vstack([
                    ask_logits(X[i : i + 250].tolist(), request_id=500 + i)
                    for i in range(0, 1000, 250)
                ])
                local = reference.eval_logits(X)
                gap = float(np.max(np.abs(hosted - local)))
                ok = gap <= 1e-9
                record("reference-agreement", ok, f"max abs logit gap {gap:.3g}")
            except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
                record("reference-agreement", False, f"cannot evaluate reference: {exc}")
            except ProtocolError as exc:
                record("reference-agreement", False, str(exc))

        code = channel.close(graceful=True)
        record("shutdown-exit-zero", code == 0, f"exit status {code}")
    except ModelTransportError as exc:
        record("transport", False, str(exc))
        transport_failure = True
    finally:
        channel.close()

    passed = sum(1 for c in checks if c["status"] == "pass")
    report = {"command": command, "checks": checks, "passed": passed, "total": len(checks)}
    _write_json(out / "model-check.json", report)
    _write_snapshot(out, "model-check", params)
    print(f"{passed}/{len(checks)} checks passed; model-check.json written to {out}")
    if transport_failure:
        return EXIT_TRANSPORT
    return EXIT_OK if passed == len(checks) else EXIT_VERIFY


# Parser ---------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser, *names: str) -> None:
    S = argparse.SUPPRESS
    if "seed" in names:
        sub.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    sub.add_argument("--config", default=S, help="JSON config file; flags override it")
    sub.add_argument("--out-dir", dest="out_dir", default=S, help="output directory")
    if "model" in names:
        sub.add_argument(
            "--model",
            default=S,
            help="model source: linear:<file> | table:<file> | bayes:<problem> | exec:<command>",
        )
    if "miscalibrate" in names:
        sub.add_argument(
            "--miscalibrate",
            type=float,
            default=S,
            help="wrap the model, scaling its logits by this factor",
        )
    if "profile" in names:
        sub.add_argument("--profile", default=S, help="temperature profile JSON")
    if "groups" in names:
        sub.add_argument("--groups", default=S, help="perturbation spec JSON (baseline + groups)")


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(
        prog="recalx",
        description="Bin-wise temperature recalibration for perturbation-based explanations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic problem and dataset splits")
    p.add_argument("--kind", default=S, help="random-table | noisy-parity | planted-informative")
    p.add_argument("--features", type=int, default=S)
    p.add_argument("--cardinality", type=int, default=S)
    p.add_argument("--classes", type=int, default=S)
    p.add_argument("--informative", type=int, default=S, help="informative feature count")
    p.add_argument("--train", type=int, default=S, help="training split size")
    p.add_argument("--val", type=int, default=S, help="validation split size")
    p.add_argument("--eval", type=int, default=S, help="evaluation split size")
    _add_common(p, "seed")

    p = sub.add_parser("fit", help="fit per-bin temperatures on perturbed validation data")
    p.add_argument("--data", default=S, help="validation CSV")
    p.add_argument("--bins", type=int, default=S, help="perturbation-level bins (default 10)")
    p.add_argument("--masks", type=int, default=S, help="mask samples per instance (default 10)")
    _add_common(p, "seed", "model", "miscalibrate", "groups")

    p = sub.add_parser("calib-report", help="empirical calibration curve CSV and SVG")
    p.add_argument("--data", default=S, help="evaluation CSV")
    p.add_argument("--bins", type=int, default=S)
    p.add_argument("--samples", type=int, default=S, help="mask samples per instance")
    p.add_argument("--clusters", type=int, default=S, help="prediction clusters for the estimator")
    _add_common(p, "seed", "model", "miscalibrate", "profile", "groups")

    p = sub.add_parser("explain", help="attribute rows of a dataset")
    p.add_argument("--data", default=S, help="CSV of rows to explain")
    p.add_argument("--problem", default=S, help="problem JSON supplying ground truth")
    p.add_argument("--method", default=S, help="shapley | shapley-sampled | lime")
    p.add_argument("--permutations", type=int, default=S)
    p.add_argument("--samples", type=int, default=S, help="mask samples for lime")
    p.add_argument("--kernel-width", dest="kernel_width", type=float, default=S)
    p.add_argument("--ridge", type=float, default=S)
    p.add_argument("--rows", type=int, default=S, help="explain only the first N rows")
    p.add_argument("--target-class", dest="target_class", type=int, default=S)
    _add_common(p, "seed", "model", "miscalibrate", "profile", "groups")

    p = sub.add_parser("verify", help="check the decomposition identity and the local bound")
    p.add_argument("--problem", default=S, help="problem JSON")
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--trials", type=int, default=S)
    _add_common(p, "seed", "model", "miscalibrate", "groups")

    p = sub.add_parser("model-check", help="conformance-check an external model adapter")
    p.add_argument("--reference", default=S, help="linear weights JSON for numeric agreement")
    p.add_argument("--timeout", type=float, default=S, help="per-reply timeout in seconds")
    _add_common(p, "seed", "model")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "calib-report": cmd_calib_report,
    "explain": cmd_explain,
    "verify": cmd_verify,
    "model-check": cmd_model_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    explicit = {k: v for k, v in vars(ns).items() if k != "command"}
    try:
        params = _merge_params(ns.command, explicit)
        return _COMMANDS[ns.command](params)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except ModelTransportError as exc:
        print(f"model transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (RecalxError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
