"""`uncal` command line: deterministic orchestration over trace files.

Every subcommand reads files, writes files, and embeds its fully resolved
configuration in the report it emits. Identical configurations (and seed)
produce byte-identical outputs. Exit codes: 0 success, 1 validation or usage
failure, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calib, jsonio, matio, probe, ragctl, recal, reprgeo, rewards, trajspace
from .errors import (
    DegenerateRatio,
    HypothesisViolated,
    IoError,
    UncalError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="uncal", description=__doc__)
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for randomized procedures (UNCAL_SEED overrides)")
    sub = parser.add_subparsers(dest="command")

    theory = sub.add_parser("theory", help="tilted-policy verification").add_subparsers(
        dest="theory_command"
    )
    verify = theory.add_parser("verify", help="mass-ratio bound check per space")
    verify.add_argument("--in", dest="input", required=True)
    verify.add_argument("--eta", type=float, default=1.0)
    verify.add_argument("--out", default=None)
    iterate = theory.add_parser("iterate", help="repeated tilt trace per space")
    iterate.add_argument("--in", dest="input", required=True)
    iterate.add_argument("--eta", type=float, default=1.0)
    iterate.add_argument("--steps", type=int, default=5)
    iterate.add_argument("--out", default=None)

    match = sub.add_parser("match", help="annotate records with match results")
    match.add_argument("--in", dest="input", required=True)
    match.add_argument("--f1-threshold", type=float, default=rewards.DEFAULT_F1_THRESHOLD)
    match.add_argument("--out", default=None, help="default: rewrite in place")

    cal = sub.add_parser("calib", help="calibration report over a record batch")
    cal.add_argument("--in", dest="input", required=True)
    cal.add_argument("--bins", type=int, default=calib.DEFAULT_ECE_BINS)
    cal.add_argument("--nll-epsilon", type=float, default=calib.DEFAULT_NLL_EPSILON)
    cal.add_argument("--f1-threshold", type=float, default=rewards.DEFAULT_F1_THRESHOLD)
    cal.add_argument("--out", default=None)
    cal.add_argument("--csv", default=None, help="reliability-diagram bins as CSV")

    rec = sub.add_parser("recal", help="post-hoc recalibration").add_subparsers(
        dest="recal_command"
    )
    for name in ("ts", "ats"):
        p = rec.add_parser(name)
        p.add_argument("--fit", required=True)
        p.add_argument("--apply", dest="apply_path", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--model-out", default=None)
        p.add_argument("--f1-threshold", type=float, default=rewards.DEFAULT_F1_THRESHOLD)
        if name == "ats":
            p.add_argument("--l2", type=float, default=0.0)
    ptrue = rec.add_parser("ptrue")
    ptrue.add_argument("--in", dest="input", required=True)
    ptrue.add_argument("--out", required=True)

    pr = sub.add_parser("probe", help="hidden-state wrongness probe").add_subparsers(
        dest="probe_command"
    )
    sweep = pr.add_parser("sweep")
    sweep.add_argument("--hidden", required=True, help="directory of layer_<k>.mat files")
    sweep.add_argument("--preds", required=True)
    sweep.add_argument("--layers", required=True, help="comma-separated layer indices")
    sweep.add_argument("--window", type=int, default=probe.DEFAULT_WINDOW)
    sweep.add_argument("--span-tokens", type=int, default=probe.DEFAULT_SPAN_TOKENS)
    sweep.add_argument("--l2", type=float, default=probe.DEFAULT_L2)
    sweep.add_argument("--out", default=None)
    sweep.add_argument("--csv", default=None)
    fitp = pr.add_parser("fit")
    fitp.add_argument("--hidden", required=True, help="one layer_<k>.mat file")
    fitp.add_argument("--preds", required=True)
    fitp.add_argument("--layer", type=int, default=-1)
    fitp.add_argument("--window", type=int, default=probe.DEFAULT_WINDOW)
    fitp.add_argument("--span-tokens", type=int, default=probe.DEFAULT_SPAN_TOKENS)
    fitp.add_argument("--l2", type=float, default=probe.DEFAULT_L2)
    fitp.add_argument("--out", required=True)
    evalp = pr.add_parser("eval")
    evalp.add_argument("--model", required=True)
    evalp.add_argument("--hidden", required=True)
    evalp.add_argument("--preds", required=True)
    evalp.add_argument("--out", default=None)

    rag = sub.add_parser("rag", help="retrieval-controller simulation")
    rag.add_argument("--policy", required=True,
                     help="always|never|emit|conf:T|emit+probe:T|flare:T[:W]|external")
    rag.add_argument("--in", dest="input", required=True)
    rag.add_argument("--f1-threshold", type=float, default=rewards.DEFAULT_F1_THRESHOLD)
    rag.add_argument("--out", default=None)
    rag.add_argument("--csv", default=None, help="per-dataset EM/F1/T table")

    rep = sub.add_parser("repr", help="representation analytics").add_subparsers(
        dest="repr_command"
    )
    cka = rep.add_parser("cka")
    cka.add_argument("--x", required=True)
    cka.add_argument("--y", required=True)
    cka.add_argument("--out", default=None)
    klp = rep.add_parser("kl")
    klp.add_argument("--pairs", required=True)
    klp.add_argument("--annotations", required=True)
    klp.add_argument("--epsilon", type=float, default=reprgeo.KL_EPSILON)
    klp.add_argument("--out", default=None)
    klp.add_argument("--csv", default=None)
    pca = rep.add_parser("pca")
    pca.add_argument("--in", dest="input", required=True)
    pca.add_argument("--k", type=int, required=True)
    pca.add_argument("--out", default=None)
    pca.add_argument("--csv", default=None, help="projected rows as CSV")
    drift = rep.add_parser("drift")
    drift.add_argument("--base", required=True)
    drift.add_argument("--cal", required=True)
    drift.add_argument("--interest", default=None, help="comma-separated row indices")
    drift.add_argument("--baseline", default=None, help="comma-separated row indices")
    drift.add_argument("--out", default=None)
    return parser


def _resolve_seed(args) -> int:
    env = os.environ.get("UNCAL_SEED")
    return int(env) if env is not None else args.seed


def _emit(args, payload: dict) -> None:
    out = getattr(args, "out", None)
    text = jsonio.dumps_canonical(payload)
    if out:
        try:
            Path(out).write_text(text + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write {out}: {exc}") from exc
    else:
        print(text)


def _emit_lines(args, lines: list[dict]) -> None:
    out = getattr(args, "out", None)
    if out:
        jsonio.write_jsonl(out, lines)
    else:
        for line in lines:
            print(jsonio.dumps_canonical(line))


def _load_spaces(path) -> list[trajspace.TrajectorySpace]:
    result = jsonio.load_lines(
        path, lambda obj, label: trajspace.space_from_dict(obj)
    )
    for line_no, message in result.errors:
        print(f"{path}:{line_no}: {message}", file=sys.stderr)
    return result.records


def _load_preds(path) -> list[rewards.PredictionRecord]:
    result = jsonio.load_predictions(path)
    for line_no, message in result.errors:
        print(f"{path}:{line_no}: {message}", file=sys.stderr)
    return result.records


# ---------------------------------------------------------------------------
# Subcommand bodies
# ---------------------------------------------------------------------------


def _cmd_theory_verify(args) -> int:
    spaces = _load_spaces(args.input)
    lines = []
    for index, space in enumerate(spaces):
        line = {"index": index, "eta": args.eta, "gold_answer": space.gold_answer}
        competitors = sorted(
            {t.answer for t in space.trajectories if t.answer != space.gold_answer},
            key=lambda y: (-trajspace.answer_mass(space, y), y),
        )
        if not competitors:
            line["status"] = "no_competitor"
            lines.append(line)
            continue
        competing = competitors[0]
        line["competing"] = competing
        try:
            check = trajspace.verify_mass_ratio_bound(
                space, trajspace.RewardSpec.verbal(), args.eta,
                space.gold_answer, competing,
            )
        except HypothesisViolated:
            line["status"] = "hypothesis_violated"
        except DegenerateRatio:
            line["status"] = "degenerate_ratio"
        else:
            line.update(
                status="ok",
                a=check.a,
                b=check.b,
                lhs=check.lhs,
                rhs=check.rhs,
                holds=check.holds,
                support_preserved=check.support_preserved,
            )
        lines.append(line)
    _emit_lines(args, lines)
    return 0


def _cmd_theory_iterate(args) -> int:
    spaces = _load_spaces(args.input)
    lines = []
    for index, space in enumerate(spaces):
        steps = trajspace.iterate_tilt(
            space, trajspace.RewardSpec.verbal(), args.eta, args.steps
        )
        lines.append(
            {
                "index": index,
                "eta": args.eta,
                "steps": [
                    {
                        "step": s.step,
                        "gold_mass": s.summary.gold_mass,
                        "margin": s.summary.margin,
                        "mean_wrong_confidence": s.summary.mean_wrong_confidence,
                    }
                    for s in steps
                ],
            }
        )
    _emit_lines(args, lines)
    return 0


def _cmd_match(args) -> int:
    records = _load_preds(args.input)
    annotated = [rewards.annotate_record(r, args.f1_threshold) for r in records]
    out = args.out or args.input
    jsonio.write_jsonl(out, [jsonio.prediction_to_dict(r) for r in annotated])
    return 0


def _cmd_calib(args) -> int:
    records = _load_preds(args.input)
    report = calib.calibration_report(
        records, args.bins, args.nll_epsilon, args.f1_threshold
    )
    taxonomy = calib.error_taxonomy(records, f1_threshold=args.f1_threshold)
    payload = {
        "schema": "uncal-calib-report-v1",
        "config": {
            "input": str(args.input),
            "bins": args.bins,
            "nll_epsilon": args.nll_epsilon,
            "f1_threshold": args.f1_threshold,
            "seed": _resolve_seed(args),
        },
        "n": report.n,
        "accuracy": report.accuracy,
        "mean_confidence": report.mean_confidence,
        "overconfidence_gap": report.overconfidence_gap,
        "ece": report.ece,
        "brier": report.brier,
        "nll": report.nll,
        "parse_rate": report.parse_rate,
        "ausc": report.ausc,
        "bins_used": args.bins,
        "bins": [
            {
                "lo": b.lo, "hi": b.hi, "count": b.count,
                "mean_conf": b.mean_conf, "accuracy": b.accuracy,
            }
            for b in report.bins
        ],
        "error_taxonomy": {
            "total_wrong": taxonomy.total_wrong,
            "epistemic": taxonomy.epistemic,
            "aleatoric": taxonomy.aleatoric,
            "strict_epistemic": taxonomy.strict_epistemic,
            "epistemic_with_emit": taxonomy.epistemic_with_emit,
            "epistemic_without_emit": taxonomy.epistemic_without_emit,
            "bands": [
                {"label": b.label, "count": b.count, "fraction": b.fraction}
                for b in taxonomy.bands
            ],
        },
    }
    _emit(args, payload)
    if args.csv:
        jsonio.write_csv(
            args.csv,
            ["lo", "hi", "count", "mean_conf", "accuracy"],
            [[b.lo, b.hi, b.count, b.mean_conf, b.accuracy] for b in report.bins],
        )
    return 0


def _cmd_recal_ts(args) -> int:
    fit_records = _load_preds(args.fit)
    model = recal.fit_global_ts(fit_records, args.f1_threshold)
    apply_records = _load_preds(args.apply_path)
    rewritten = []
    skipped = 0
    for r in apply_records:
        conf = rewards.record_confidence(r)
        if conf is None:
            skipped += 1
            rewritten.append(r)
        else:
            rewritten.append(replace(r, verbal_confidence=recal.apply_ts(model, conf)))
    jsonio.write_jsonl(args.out, [jsonio.prediction_to_dict(r) for r in rewritten])
    if args.model_out:
        jsonio.write_report(
            args.model_out,
            {
                "schema": "uncal-ts-model-v1",
                "temperature": model.temperature,
                "fit_nll": model.fit_nll,
                "config": {
                    "fit": str(args.fit),
                    "f1_threshold": args.f1_threshold,
                    "seed": _resolve_seed(args),
                },
            },
        )
    if skipped:
        print(f"skipped {skipped} records without parseable confidence", file=sys.stderr)
    return 0


def _cmd_recal_ats(args) -> int:
    fit_records = _load_preds(args.fit)
    model = recal.fit_ats(fit_records, args.l2, args.f1_threshold)
    apply_records = _load_preds(args.apply_path)
    rewritten = []
    skipped = 0
    for r in apply_records:
        if rewards.record_confidence(r) is None:
            skipped += 1
            rewritten.append(r)
        else:
            rewritten.append(replace(r, verbal_confidence=recal.apply_ats(model, r)))
    jsonio.write_jsonl(args.out, [jsonio.prediction_to_dict(r) for r in rewritten])
    if args.model_out:
        jsonio.write_report(
            args.model_out,
            {
                "schema": "uncal-ats-model-v1",
                "weights": list(model.weights),
                "bias": model.bias,
                "l2": model.l2,
                "feature_means": list(model.feature_means),
                "feature_stds": list(model.feature_stds),
                "temperature_floor": recal.ATS_TEMPERATURE_FLOOR,
                "fit_nll": model.fit_nll,
                "config": {
                    "fit": str(args.fit),
                    "l2": args.l2,
                    "f1_threshold": args.f1_threshold,
                    "seed": _resolve_seed(args),
                },
            },
        )
    if skipped:
        print(f"skipped {skipped} records without parseable confidence", file=sys.stderr)
    return 0


def _cmd_recal_ptrue(args) -> int:
    records = _load_preds(args.input)
    rewritten = []
    skipped = 0
    for r in records:
        if r.p_affirmative is None:
            skipped += 1
            rewritten.append(r)
        else:
            rewritten.append(
                replace(r, verbal_confidence=recal.ptrue_combine(r, r.p_affirmative))
            )
    jsonio.write_jsonl(args.out, [jsonio.prediction_to_dict(r) for r in rewritten])
    if skipped:
        print(f"skipped {skipped} records without p_affirmative", file=sys.stderr)
    return 0


def _parse_layers(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"bad --layers value {text!r}") from exc


def _load_token_stack(mat_path) -> dict[str, np.ndarray]:
    """qid -> (tokens x dims) matrix from a layer file plus its sidecar."""
    values = matio.read_matrix(mat_path)
    rows = matio.read_row_ids(str(mat_path) + ".ids.jsonl")
    if len(rows) != values.shape[0]:
        raise IoError(f"{mat_path}: sidecar row count does not match matrix")
    grouped: dict[str, list[tuple[int, int]]] = {}
    for i, row in enumerate(rows):
        grouped.setdefault(str(row["qid"]), []).append((int(row.get("token_index", i)), i))
    out = {}
    for qid, members in grouped.items():
        members.sort()
        out[qid] = values[[i for _, i in members]]
    return out


def _cmd_probe_sweep(args) -> int:
    seed = _resolve_seed(args)
    layers = _parse_layers(args.layers)
    records = _load_preds(args.preds)
    stacks = {}
    for layer in layers:
        mat_path = Path(args.hidden) / f"layer_{layer}.mat"
        stacks[layer] = _load_token_stack(mat_path)
    rows = probe.layer_sweep(
        stacks, records, layers,
        window=args.window, span_token_count=args.span_tokens,
        l2=args.l2, seed=seed,
    )
    payload = {
        "schema": "uncal-probe-sweep-v1",
        "config": {
            "hidden": str(args.hidden),
            "preds": str(args.preds),
            "layers": layers,
            "window": args.window,
            "span_tokens": args.span_tokens,
            "l2": args.l2,
            "seed": seed,
        },
        "rows": [
            {
                "layer": r.layer, "auroc": r.auroc, "auprc": r.auprc,
                "precision": r.precision, "recall": r.recall, "f1": r.f1,
                "n_train": r.n_train, "n_dev": r.n_dev,
            }
            for r in rows
        ],
    }
    _emit(args, payload)
    if args.csv:
        jsonio.write_csv(
            args.csv,
            ["layer", "auroc", "auprc", "precision", "recall", "f1"],
            [[r.layer, r.auroc, r.auprc, r.precision, r.recall, r.f1] for r in rows],
        )
    return 0


def _probe_dataset(records, stack, window, span_tokens):
    feats = []
    labels = []
    qids = []
    for record in records:
        if not record.emissions or record.qid not in stack:
            continue
        feats.append(
            probe.build_features(stack[record.qid], record, window, span_tokens)
        )
        labels.append(0 if rewards.record_correct(record) else 1)
        qids.append(record.qid)
    return feats, np.asarray(labels, dtype=int), qids


def _cmd_probe_fit(args) -> int:
    seed = _resolve_seed(args)
    records = _load_preds(args.preds)
    stack = _load_token_stack(args.hidden)
    feats, labels, qids = _probe_dataset(records, stack, args.window, args.span_tokens)
    train_idx, dev_idx = probe.split_by_qid(qids, seed)
    x = np.stack([f.vector() for f in feats])
    model = probe.fit_probe(x[train_idx], labels[train_idx], l2=args.l2, layer=args.layer)
    model = probe.tune_threshold(model, x[dev_idx], labels[dev_idx])
    jsonio.write_report(
        args.out,
        {
            "schema": "uncal-probe-model-v1",
            "layer": model.layer,
            "weights": [float(v) for v in model.weights],
            "bias": model.bias,
            "threshold": model.threshold,
            "feature_means": [float(v) for v in model.feature_means],
            "feature_stds": [float(v) for v in model.feature_stds],
            "config": {
                "hidden": str(args.hidden),
                "preds": str(args.preds),
                "layer": args.layer,
                "window": args.window,
                "span_tokens": args.span_tokens,
                "l2": args.l2,
                "seed": seed,
            },
        },
    )
    return 0


def _load_probe_model(path) -> tuple[probe.ProbeModel, dict]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read model {path}: {exc}") from exc
    model = probe.ProbeModel(
        layer=int(obj["layer"]),
        weights=np.array(obj["weights"], dtype=float),
        bias=float(obj["bias"]),
        threshold=float(obj["threshold"]),
        feature_means=np.array(obj["feature_means"], dtype=float),
        feature_stds=np.array(obj["feature_stds"], dtype=float),
        loss_trace=(),
    )
    return model, obj.get("config", {})


def _cmd_probe_eval(args) -> int:
    model, model_config = _load_probe_model(args.model)
    records = _load_preds(args.preds)
    stack = _load_token_stack(args.hidden)
    feats, labels, _ = _probe_dataset(
        records,
        stack,
        int(model_config.get("window", probe.DEFAULT_WINDOW)),
        int(model_config.get("span_tokens", probe.DEFAULT_SPAN_TOKENS)),
    )
    x = np.stack([f.vector() for f in feats])
    scores = model.scores(x)
    precision, recall, f1 = probe.trigger_prf(scores, labels, model.threshold)
    payload = {
        "schema": "uncal-probe-eval-v1",
        "config": {
            "model": str(args.model),
            "hidden": str(args.hidden),
            "preds": str(args.preds),
            "seed": _resolve_seed(args),
        },
        "n": int(len(labels)),
        "auroc": probe.auroc(scores, labels),
        "auprc": probe.auprc(scores, labels),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "threshold": model.threshold,
    }
    _emit(args, payload)
    return 0


def _trigger_report_dict(report: ragctl.TriggerReport) -> dict:
    return {
        "n": report.n,
        "triggered": report.triggered,
        "noret_wrong": report.noret_wrong,
        "triggered_and_wrong": report.triggered_and_wrong,
        "trigger_rate": report.trigger_rate,
        "final_em": report.final_em,
        "final_f1": report.final_f1,
        "trigger_precision": report.trigger_precision,
        "trigger_recall": report.trigger_recall,
        "untouched_accuracy": report.untouched_accuracy,
        "wrong_within_triggered": report.wrong_within_triggered,
        "global_wrong_coverage": report.global_wrong_coverage,
    }


def _cmd_rag(args) -> int:
    result = jsonio.load_rag_traces(args.input)
    for line_no, message in result.errors:
        print(f"{args.input}:{line_no}: {message}", file=sys.stderr)
    records = result.records
    policy = ragctl.parse_policy_spec(args.policy)
    report = ragctl.simulate(policy, records, args.f1_threshold)
    per_dataset = ragctl.simulate_by_dataset(policy, records, args.f1_threshold)
    payload = {
        "schema": "uncal-rag-report-v1",
        "config": {
            "input": str(args.input),
            "policy": args.policy,
            "f1_threshold": args.f1_threshold,
            "seed": _resolve_seed(args),
        },
        "overall": _trigger_report_dict(report),
        "per_dataset": {name: _trigger_report_dict(r) for name, r in per_dataset.items()},
    }
    _emit(args, payload)
    if args.csv:
        jsonio.write_csv(
            args.csv,
            ["dataset", "em", "f1", "trigger_rate"],
            [
                [name, r.final_em, r.final_f1, r.trigger_rate]
                for name, r in per_dataset.items()
            ]
            + [["overall", report.final_em, report.final_f1, report.trigger_rate]],
        )
    return 0


def _cmd_repr_cka(args) -> int:
    x = matio.read_matrix(args.x)
    y = matio.read_matrix(args.y)
    payload = {
        "schema": "uncal-repr-cka-v1",
        "config": {"x": str(args.x), "y": str(args.y), "seed": _resolve_seed(args)},
        "cka": reprgeo.linear_cka(x, y),
        "rows": int(x.shape[0]),
    }
    _emit(args, payload)
    return 0


def _cmd_repr_kl(args) -> int:
    pairs_result = jsonio.load_lines(
        args.pairs,
        lambda obj, label: reprgeo.TokenDistPair(
            position=int(obj["position"]),
            base_probs=np.array(obj["base_probs"], dtype=float),
            calibrated_probs=np.array(obj["calibrated_probs"], dtype=float),
        ),
    )
    ann_result = jsonio.load_lines(
        args.annotations,
        lambda obj, label: reprgeo.TokenAnnotation(
            position=int(obj["position"]),
            type=reprgeo.TokenType(obj["type"]),
        ),
    )
    for path, result in ((args.pairs, pairs_result), (args.annotations, ann_result)):
        for line_no, message in result.errors:
            print(f"{path}:{line_no}: {message}", file=sys.stderr)
    table = reprgeo.kl_by_type(pairs_result.records, ann_result.records, args.epsilon)
    rows = {
        token_type.value: {
            "count": row.count,
            "mean_kl": row.mean_kl,
            "mass_fraction": row.mass_fraction,
        }
        for token_type, row in table.items()
    }
    payload = {
        "schema": "uncal-repr-kl-v1",
        "config": {
            "pairs": str(args.pairs),
            "annotations": str(args.annotations),
            "epsilon": args.epsilon,
            "seed": _resolve_seed(args),
        },
        "by_type": rows,
    }
    _emit(args, payload)
    if args.csv:
        jsonio.write_csv(
            args.csv,
            ["type", "count", "mean_kl", "mass_fraction"],
            [
                [name, row["count"], row["mean_kl"], row["mass_fraction"]]
                for name, row in sorted(rows.items())
            ],
        )
    return 0


def _cmd_repr_pca(args) -> int:
    seed = _resolve_seed(args)
    x = matio.read_matrix(args.input)
    result = reprgeo.pca_project(x, args.k, seed=seed)
    payload = {
        "schema": "uncal-repr-pca-v1",
        "config": {"input": str(args.input), "k": args.k, "seed": seed},
        "explained_variance_ratio": [float(v) for v in result.explained_variance_ratio],
    }
    _emit(args, payload)
    if args.csv:
        header = [f"pc{i + 1}" for i in range(args.k)]
        jsonio.write_csv(
            args.csv, header, [[float(v) for v in row] for row in result.projection]
        )
    return 0


def _parse_rows(text):
    return [int(v) for v in text.split(",") if v.strip() != ""]


def _cmd_repr_drift(args) -> int:
    base = matio.read_matrix(args.base)
    cal = matio.read_matrix(args.cal)
    payload = {
        "schema": "uncal-repr-drift-v1",
        "config": {
            "base": str(args.base),
            "cal": str(args.cal),
            "interest": args.interest,
            "baseline": args.baseline,
            "seed": _resolve_seed(args),
        },
        "relative_frobenius_drift": reprgeo.frobenius_drift(base, cal),
    }
    if args.interest and args.baseline:
        report = reprgeo.embedding_drift_report(
            _parse_rows(args.interest), _parse_rows(args.baseline), base, cal
        )
        payload["embedding_drift"] = {
            "interest_mean_drift": report.interest_mean_drift,
            "baseline_mean_drift": report.baseline_mean_drift,
            "ratio": ("inf" if report.ratio == float("inf") else report.ratio),
        }
    _emit(args, payload)
    return 0


_THEORY = {"verify": _cmd_theory_verify, "iterate": _cmd_theory_iterate}
_RECAL = {"ts": _cmd_recal_ts, "ats": _cmd_recal_ats, "ptrue": _cmd_recal_ptrue}
_PROBE = {"sweep": _cmd_probe_sweep, "fit": _cmd_probe_fit, "eval": _cmd_probe_eval}
_REPR = {
    "cka": _cmd_repr_cka,
    "kl": _cmd_repr_kl,
    "pca": _cmd_repr_pca,
    "drift": _cmd_repr_drift,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        if args.command == "theory":
            handler = _THEORY.get(args.theory_command)
        elif args.command == "recal":
            handler = _RECAL.get(args.recal_command)
        elif args.command == "probe":
            handler = _PROBE.get(args.probe_command)
        elif args.command == "repr":
            handler = _REPR.get(args.repr_command)
        elif args.command == "match":
            handler = _cmd_match
        elif args.command == "calib":
            handler = _cmd_calib
        elif args.command == "rag":
            handler = _cmd_rag
        else:
            handler = None
        if handler is None:
            parser.print_usage(sys.stderr)
            return 1
        return handler(args)
    except UsageError as exc:
        print(f"uncal: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except IoError as exc:
        print(f"uncal: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"uncal: {exc}", file=sys.stderr)
        return 2
    except (UncalError, ValueError) as exc:
        print(f"uncal: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
