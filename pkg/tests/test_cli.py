import json
import shutil
from pathlib import Path

import numpy as np
import pytest

import uncal
from uncal import jsonio, matio, trajspace
from uncal.cli import main
from uncal.errors import CorruptInput
from uncal.jsonio import load_predictions, load_rag_traces, prediction_to_dict

from conftest import planted_stack

GOLDEN_CALIB = Path(__file__).parent / "data" / "golden_calib.json"
PREDS_FIXTURE = Path(str(uncal.fixture_path("preds20.jsonl")))
RAG_FIXTURE = Path(str(uncal.fixture_path("ragtraces20.jsonl")))


def write_spaces(path, count=6, seed=1):
    rng = np.random.default_rng(seed)
    with open(path, "w") as fh:
        for _ in range(count):
            space = trajspace.random_space(rng)
            fh.write(jsonio.dumps_canonical(trajspace.space_to_dict(space)) + "\n")


def write_hidden_dir(directory, layers=(0, 8), seed=2, n=120):
    records, stacks = planted_stack(
        np.random.default_rng(seed), layers=layers, signal_layer=layers[-1], n=n
    )
    directory.mkdir(exist_ok=True)
    for layer, per_qid in stacks.items():
        mats, ids = [], []
        for qid in sorted(per_qid):
            m = per_qid[qid]
            mats.append(m)
            ids.extend({"qid": qid, "token_index": t} for t in range(m.shape[0]))
        matio.write_matrix(directory / f"layer_{layer}.mat", np.vstack(mats))
        matio.write_row_ids(directory / f"layer_{layer}.mat.ids.jsonl", ids)
    preds = directory / "preds.jsonl"
    jsonio.write_jsonl(preds, [prediction_to_dict(r) for r in records])
    return preds


class TestLoadPredictions:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        result = load_predictions(path)
        assert result.records == [] and result.errors == []

    def test_one_malformed_line_among_ten(self, tmp_path):
        lines = [
            jsonio.dumps_canonical(
                {"qid": f"q{i}", "gold_answers": ["a"], "response_text": "Answer: a"}
            )
            for i in range(9)
        ]
        lines.insert(4, "{broken json")
        path = tmp_path / "preds.jsonl"
        path.write_text("\n".join(lines) + "\n")
        result = load_predictions(path)
        assert len(result.records) == 9
        assert len(result.errors) == 1 and result.errors[0][0] == 5

    def test_majority_invalid_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("nope\nnope\n" + '{"qid":"q","gold_answers":["a"],"response_text":"x"}\n')
        with pytest.raises(CorruptInput):
            load_predictions(path)

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "extra.jsonl"
        good = '{"qid":"g","gold_answers":["a"],"response_text":"x"}'
        path.write_text(
            good + "\n"
            + '{"qid":"q","gold_answers":["a"],"response_text":"x","bogus":1}\n'
            + good.replace('"g"', '"h"') + "\n"
        )
        result = load_predictions(path)
        assert len(result.records) == 2 and len(result.errors) == 1
        assert "bogus" in result.errors[0][1]

    def test_round_trip_fixture(self, tmp_path):
        result = load_predictions(PREDS_FIXTURE)
        assert result.total_lines == 20 and not result.errors
        out = tmp_path / "again.jsonl"
        jsonio.write_jsonl(out, [prediction_to_dict(r) for r in result.records])
        again = load_predictions(out)
        assert again.records == result.records

    def test_rag_fixture_round_trip(self, tmp_path):
        result = load_rag_traces(RAG_FIXTURE)
        assert result.total_lines == 20 and not result.errors
        out = tmp_path / "rag.jsonl"
        jsonio.write_jsonl(out, [jsonio.rag_to_dict(r) for r in result.records])
        assert load_rag_traces(out).records == result.records

    def test_match_output_reloads_with_annotations(self, tmp_path):
        out = tmp_path / "matched.jsonl"
        assert main(["match", "--in", str(PREDS_FIXTURE), "--out", str(out)]) == 0
        result = load_predictions(out)
        assert not result.errors
        assert all(r.match is not None for r in result.records)
        assert all(r.extracted_answer is not None or r.match.correct is False
                   for r in result.records)


class TestExitCodes:
    def test_unknown_subcommand_exits_one(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_subcommand_exits_one(self, capsys):
        assert main([]) == 1

    def test_missing_file_exits_two(self, tmp_path, capsys):
        assert main(["calib", "--in", str(tmp_path / "absent.jsonl")]) == 2

    def test_validation_failure_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "traces.jsonl"
        bad.write_text(
            jsonio.dumps_canonical(
                {
                    "qid": "q", "gold_answers": ["a"], "noret_answer": "a",
                    "ret_answer": "a",
                }
            )
            + "\n"
        )
        # confidence policy over a record without confidence
        assert main(["rag", "--policy", "conf:0.5", "--in", str(bad)]) == 1

    def test_success_exit_zero(self, tmp_path):
        out = tmp_path / "r.json"
        assert main(["calib", "--in", str(PREDS_FIXTURE), "--out", str(out)]) == 0


class TestFunctional:
    def test_theory_verify_one_line_per_space(self, tmp_path):
        spaces = tmp_path / "spaces.jsonl"
        write_spaces(spaces, count=7)
        out = tmp_path / "tv.jsonl"
        assert main(["theory", "verify", "--in", str(spaces), "--eta", "1.0",
                     "--out", str(out)]) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 7
        assert all("status" in line for line in lines)
        for line in lines:
            if line["status"] == "ok":
                assert line["holds"] and line["support_preserved"]

    def test_ptrue_replaces_confidence(self, tmp_path):
        records = [
            {"qid": "a", "gold_answers": ["x"], "response_text": "Answer: x",
             "verbal_confidence": 0.9, "p_affirmative": 0.25},
            {"qid": "b", "gold_answers": ["x"], "response_text": "Answer: x",
             "verbal_confidence": 0.9},
        ]
        src = tmp_path / "in.jsonl"
        src.write_text("".join(jsonio.dumps_canonical(r) + "\n" for r in records))
        out = tmp_path / "out.jsonl"
        assert main(["recal", "ptrue", "--in", str(src), "--out", str(out)]) == 0
        loaded = load_predictions(out).records
        assert loaded[0].verbal_confidence == 0.25   # replaced
        assert loaded[1].verbal_confidence == 0.9    # no p_affirmative: untouched


class TestGoldenReport:
    def test_calib_matches_frozen_golden(self, tmp_path, monkeypatch):
        shutil.copy(PREDS_FIXTURE, tmp_path / "preds20.jsonl")
        monkeypatch.chdir(tmp_path)
        assert main(["calib", "--in", "preds20.jsonl", "--bins", "10",
                     "--out", "report.json"]) == 0
        assert Path("report.json").read_bytes() == GOLDEN_CALIB.read_bytes()


def _run_twice(argv_template, tmp_path, outputs):
    """Run a CLI invocation into two sibling directories; compare bytes."""
    blobs = []
    for run in ("a", "b"):
        run_dir = tmp_path / run
        run_dir.mkdir(exist_ok=True)
        argv = [arg.replace("{out}", str(run_dir)) for arg in argv_template]
        assert main(argv) == 0
        blobs.append(b"".join((run_dir / name).read_bytes() for name in outputs))
    assert blobs[0] == blobs[1]


class TestDeterminism:
    def test_theory_subcommands(self, tmp_path):
        spaces = tmp_path / "spaces.jsonl"
        write_spaces(spaces)
        _run_twice(
            ["theory", "verify", "--in", str(spaces), "--eta", "1.0",
             "--out", "{out}/tv.jsonl"],
            tmp_path, ["tv.jsonl"],
        )
        _run_twice(
            ["theory", "iterate", "--in", str(spaces), "--eta", "0.5",
             "--steps", "3", "--out", "{out}/ti.jsonl"],
            tmp_path, ["ti.jsonl"],
        )

    def test_match_calib_rag(self, tmp_path):
        _run_twice(
            ["match", "--in", str(PREDS_FIXTURE), "--out", "{out}/m.jsonl"],
            tmp_path, ["m.jsonl"],
        )
        _run_twice(
            ["calib", "--in", str(PREDS_FIXTURE), "--out", "{out}/c.json",
             "--csv", "{out}/c.csv"],
            tmp_path, ["c.json", "c.csv"],
        )
        _run_twice(
            ["rag", "--policy", "conf:0.5", "--in", str(RAG_FIXTURE),
             "--out", "{out}/r.json", "--csv", "{out}/r.csv"],
            tmp_path, ["r.json", "r.csv"],
        )

    def test_recal_subcommands(self, tmp_path):
        for name, extra in (("ts", []), ("ats", ["--l2", "0.01"])):
            _run_twice(
                ["recal", name, "--fit", str(PREDS_FIXTURE),
                 "--apply", str(PREDS_FIXTURE), "--out", "{out}/o.jsonl",
                 "--model-out", "{out}/model.json", *extra],
                tmp_path, ["o.jsonl", "model.json"],
            )
        _run_twice(
            ["recal", "ptrue", "--in", str(PREDS_FIXTURE), "--out", "{out}/p.jsonl"],
            tmp_path, ["p.jsonl"],
        )

    def test_probe_subcommands(self, tmp_path):
        preds = write_hidden_dir(tmp_path / "hidden")
        hidden = tmp_path / "hidden"
        _run_twice(
            ["probe", "sweep", "--hidden", str(hidden), "--preds", str(preds),
             "--layers", "0,8", "--out", "{out}/s.json", "--csv", "{out}/s.csv"],
            tmp_path, ["s.json", "s.csv"],
        )
        _run_twice(
            ["probe", "fit", "--hidden", str(hidden / "layer_8.mat"),
             "--preds", str(preds), "--layer", "8", "--out", "{out}/model.json"],
            tmp_path, ["model.json"],
        )
        model = tmp_path / "a" / "model.json"
        _run_twice(
            ["probe", "eval", "--model", str(model),
             "--hidden", str(hidden / "layer_8.mat"), "--preds", str(preds),
             "--out", "{out}/e.json"],
            tmp_path, ["e.json"],
        )

    def test_repr_subcommands(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(30, 5))
        matio.write_matrix(tmp_path / "x.mat", x)
        matio.write_matrix(tmp_path / "y.mat", x @ np.linalg.qr(rng.normal(size=(5, 5)))[0])
        pairs = tmp_path / "pairs.jsonl"
        annotations = tmp_path / "ann.jsonl"
        with open(pairs, "w") as fh, open(annotations, "w") as ann:
            for i in range(5):
                p = rng.dirichlet(np.ones(4))
                q = rng.dirichlet(np.ones(4))
                fh.write(json.dumps({
                    "position": i,
                    "base_probs": [float(v) for v in p],
                    "calibrated_probs": [float(v) for v in q],
                }) + "\n")
                ann.write(json.dumps({"position": i, "type": "ReasoningToken"}) + "\n")
        _run_twice(
            ["repr", "cka", "--x", str(tmp_path / "x.mat"),
             "--y", str(tmp_path / "y.mat"), "--out", "{out}/cka.json"],
            tmp_path, ["cka.json"],
        )
        _run_twice(
            ["repr", "kl", "--pairs", str(pairs), "--annotations", str(annotations),
             "--out", "{out}/kl.json", "--csv", "{out}/kl.csv"],
            tmp_path, ["kl.json", "kl.csv"],
        )
        _run_twice(
            ["repr", "pca", "--in", str(tmp_path / "x.mat"), "--k", "2",
             "--out", "{out}/pca.json", "--csv", "{out}/pca.csv"],
            tmp_path, ["pca.json", "pca.csv"],
        )
        _run_twice(
            ["repr", "drift", "--base", str(tmp_path / "x.mat"),
             "--cal", str(tmp_path / "y.mat"), "--out", "{out}/d.json"],
            tmp_path, ["d.json"],
        )


class TestSeedHandling:
    def test_env_var_overrides_flag(self, tmp_path, monkeypatch):
        out1 = tmp_path / "a.json"
        out2 = tmp_path / "b.json"
        matio.write_matrix(
            tmp_path / "x.mat", np.random.default_rng(0).normal(size=(20, 4))
        )
        main(["--seed", "3", "repr", "pca", "--in", str(tmp_path / "x.mat"),
              "--k", "2", "--out", str(out1)])
        monkeypatch.setenv("UNCAL_SEED", "3")
        main(["--seed", "999", "repr", "pca", "--in", str(tmp_path / "x.mat"),
              "--k", "2", "--out", str(out2)])
        assert json.loads(out1.read_text())["config"]["seed"] == 3
        assert json.loads(out2.read_text())["config"]["seed"] == 3


def test_float_serialization_round_trips():
    values = [0.1, 1 / 3, 2.0**-52, 0.55, 123456.789, -0.0]
    for v in values:
        text = jsonio.format_float(v)
        assert float(text) == (0.0 if v == 0.0 else v)
    with pytest.raises(ValueError):
        jsonio.format_float(float("nan"))
