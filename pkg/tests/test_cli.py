import json
import os

import pytest

from spanqa import cli, network, synthetic
from spanqa.cli import main

TINY_CFG = {
    "general_dim": 8,
    "domain_dim": 4,
    "char_dim": 4,
    "filter_width": 2,
    "num_filters": 4,
    "hidden_size": 8,
    "ff_hidden": 8,
    "max_span": 4,
    "max_context_tokens": 60,
    "decay_factor": 1.0,
    "batch_size": 8,
    "max_epochs": 3,
    "patience": 3,
    "beam": 10,
    "candidate_cap": 10,
}


@pytest.fixture()
def workspace(tmp_path):
    data = synthetic.generate_bioasq(20, seed=5)
    bio = tmp_path / "bio.json"
    synthetic.write_json(str(bio), data)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY_CFG))
    return tmp_path, str(bio), str(cfg)


def prepare(tmp_path, bio, cfg):
    out = str(tmp_path / "examples.jsonl")
    assert main(["prepare", "--input", bio, "--format", "bioasq", "--output", out, "--config", cfg]) == 0
    return out


def pretrain(tmp_path, data, cfg, seed="0"):
    ckpt = str(tmp_path / "ckpt")
    assert (
        main(
            ["train", "--phase", "pretrain", "--data", data, "--config", cfg,
             "--out", ckpt, "--seed", seed]
        )
        == 0
    )
    return ckpt


class TestPrepare:
    def test_summary_counts(self, workspace, capsys):
        tmp_path, bio, cfg = workspace
        out = prepare(tmp_path, bio, cfg)
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        # corpus of 20: 12 factoid, 5 list, 2 yesno, 1 summary
        assert summary["questions"] == 20
        assert summary["skipped_summary"] == 1
        assert summary["skipped_yesno"] == 2
        assert summary["examples_written"] > 0
        assert summary["empty_label_examples"] >= 1  # decoy snippets never match
        assert os.path.exists(out)

    def test_rerun_byte_identical(self, workspace):
        tmp_path, bio, cfg = workspace
        out = prepare(tmp_path, bio, cfg)
        first = open(out, "rb").read()
        prepare(tmp_path, bio, cfg)
        assert open(out, "rb").read() == first

    def test_schema_error_exits_nonzero(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"questions": [{"id": "brokenq", "type": "factoid"}]}))
        rc = main(["prepare", "--input", str(bad), "--format", "bioasq",
                   "--output", str(tmp_path / "o.jsonl")])
        assert rc != 0
        assert "brokenq" in capsys.readouterr().err


class TestTrain:
    def test_finetune_requires_init(self, workspace):
        tmp_path, bio, cfg = workspace
        data = prepare(tmp_path, bio, cfg)
        with pytest.raises(SystemExit):
            main(["train", "--phase", "finetune", "--data", data, "--out", str(tmp_path / "x")])

    def test_pretrain_writes_checkpoint_and_log(self, workspace):
        tmp_path, bio, cfg = workspace
        data = prepare(tmp_path, bio, cfg)
        ckpt = pretrain(tmp_path, data, cfg)
        model = network.QAModel.load(ckpt)
        assert model.phase == "pretrain"
        assert os.path.exists(ckpt + ".log.jsonl")

    def test_qa_seed_env_override(self, workspace, monkeypatch):
        tmp_path, bio, cfg = workspace
        data = prepare(tmp_path, bio, cfg)
        monkeypatch.setenv("QA_SEED", "42")
        ckpt = pretrain(tmp_path, data, cfg, seed="0")
        manifest = json.load(open(os.path.join(ckpt, "manifest.json")))
        assert manifest["seed"] == 42

    def test_finetune_transfer_error_on_dim_change(self, workspace, capsys):
        tmp_path, bio, cfg = workspace
        data = prepare(tmp_path, bio, cfg)
        ckpt = pretrain(tmp_path, data, cfg)
        other = dict(TINY_CFG, hidden_size=16)
        cfg2 = tmp_path / "cfg2.json"
        cfg2.write_text(json.dumps(other))
        rc = main(["train", "--phase", "finetune", "--init", ckpt, "--data", data,
                   "--config", str(cfg2), "--out", str(tmp_path / "ft")])
        assert rc != 0
        assert "hidden_size" in capsys.readouterr().err

    def test_cv_writes_fold_checkpoints(self, workspace):
        tmp_path, bio, cfg = workspace
        data = prepare(tmp_path, bio, cfg)
        out = str(tmp_path / "cv")
        assert main(["train", "--phase", "pretrain", "--data", data, "--config", cfg,
                     "--out", out, "--cv", "5", "--seed", "1"]) == 0
        assert os.path.exists(os.path.join(out, "folds.json"))
        for fold in range(5):
            assert os.path.exists(os.path.join(out, f"fold_{fold}", "manifest.json"))


class TestPredictAndEvaluate:
    @pytest.fixture()
    def trained(self, workspace):
        tmp_path, bio, cfg = workspace
        data = prepare(tmp_path, bio, cfg)
        ckpt = pretrain(tmp_path, data, cfg)
        return tmp_path, bio, cfg, ckpt

    def test_missing_threshold_with_list_questions(self, trained, capsys):
        tmp_path, bio, cfg, ckpt = trained
        rc = main(["predict", "--model", ckpt, "--input", bio,
                   "--output", str(tmp_path / "p.json"), "--config", cfg])
        assert rc != 0
        assert "threshold" in capsys.readouterr().err

    def test_full_predict_evaluate_cycle(self, trained, capsys):
        tmp_path, bio, cfg, ckpt = trained
        th = str(tmp_path / "th.json")
        assert main(["tune-threshold", "--model", ckpt, "--data", bio,
                     "--out", th, "--config", cfg]) == 0
        pred = str(tmp_path / "pred.json")
        assert main(["predict", "--model", ckpt, "--input", bio,
                     "--threshold-file", th, "--output", pred, "--config", cfg]) == 0
        payload = json.load(open(pred))
        by_type = {q["type"] for q in payload["questions"]}
        assert "summary" not in by_type
        yesno = [q for q in payload["questions"] if q["type"] == "yesno"]
        assert all(q["exact_answer"] == "yes" for q in yesno)
        factoid = [q for q in payload["questions"] if q["type"] == "factoid"]
        assert all(len(q["exact_answer"]) <= 5 for q in factoid)
        rep = str(tmp_path / "report.json")
        assert main(["evaluate", "--predictions", pred, "--gold", bio, "--out-json", rep]) == 0
        report = json.load(open(rep))
        assert 0.0 <= report["aggregates"]["factoid_mrr"] <= 1.0

    def test_single_member_ensemble_equals_single(self, trained):
        tmp_path, bio, cfg, ckpt = trained
        th = str(tmp_path / "th.json")
        main(["tune-threshold", "--model", ckpt, "--data", bio, "--out", th, "--config", cfg])
        p1, p2 = str(tmp_path / "p1.json"), str(tmp_path / "p2.json")
        assert main(["predict", "--model", ckpt, "--input", bio,
                     "--threshold-file", th, "--output", p1, "--config", cfg]) == 0
        assert main(["predict", "--ensemble", ckpt, "--input", bio,
                     "--threshold-file", th, "--output", p2, "--config", cfg]) == 0
        a = json.load(open(p1))["questions"]
        b = json.load(open(p2))["questions"]
        assert a == b

    def test_ensemble_fingerprint_mismatch(self, trained, capsys):
        tmp_path, bio, cfg, ckpt = trained
        other_cfg = dict(TINY_CFG, hidden_size=16)
        cfg2 = tmp_path / "cfg2.json"
        cfg2.write_text(json.dumps(other_cfg))
        data = str(tmp_path / "examples.jsonl")
        ckpt2 = str(tmp_path / "ckpt2")
        assert main(["train", "--phase", "pretrain", "--data", data,
                     "--config", str(cfg2), "--out", ckpt2]) == 0
        rc = main(["predict", "--ensemble", f"{ckpt},{ckpt2}", "--input", bio,
                   "--output", str(tmp_path / "p.json"), "--config", cfg])
        assert rc != 0
        assert "fingerprint" in capsys.readouterr().err

    def test_evaluate_empty_predictions(self, trained, capsys):
        tmp_path, bio, cfg, ckpt = trained
        pred = str(tmp_path / "empty.json")
        json.dump({"questions": []}, open(pred, "w"))
        rc = main(["evaluate", "--predictions", pred, "--gold", bio])
        assert rc == 0
        out = capsys.readouterr().out
        assert "0.0%" in out

    def test_evaluate_report_average_row_with_batches(self, trained, capsys):
        tmp_path, bio, cfg, ckpt = trained
        data = json.load(open(bio))
        for i, q in enumerate(data["questions"]):
            q["batch"] = str(1 + i % 2)
        tagged = str(tmp_path / "tagged.json")
        json.dump(data, open(tagged, "w"))
        th = str(tmp_path / "th.json")
        main(["tune-threshold", "--model", ckpt, "--data", bio, "--out", th, "--config", cfg])
        pred = str(tmp_path / "pred.json")
        main(["predict", "--model", ckpt, "--input", tagged,
              "--threshold-file", th, "--output", pred, "--config", cfg])
        capsys.readouterr()
        assert main(["evaluate", "--predictions", pred, "--gold", tagged]) == 0
        assert "Average" in capsys.readouterr().out

    def test_tuned_threshold_matches_dev_f1(self, trained, capsys):
        # tuning and evaluating on the same set reports the tuner's optimum
        tmp_path, bio, cfg, ckpt = trained
        th = str(tmp_path / "th.json")
        main(["tune-threshold", "--model", ckpt, "--data", bio, "--out", th, "--config", cfg])
        pred = str(tmp_path / "pred.json")
        main(["predict", "--model", ckpt, "--input", bio,
              "--threshold-file", th, "--output", pred, "--config", cfg])
        rep = str(tmp_path / "r.json")
        main(["evaluate", "--predictions", pred, "--gold", bio, "--out-json", rep])
        report = json.load(open(rep))

        from spanqa import corpus as corpus_mod
        from spanqa import decoding

        model = network.QAModel.load(ckpt)
        questions = corpus_mod.load_dataset(bio, "bioasq")
        listq = [q for q in questions if q.qtype == "list" and q.gold_answers]
        dev = [
            (decoding.question_candidates([model], q, beam=10, cap=10), q.gold_answers)
            for q in listq
        ]
        tuned = decoding.tune_threshold(dev)
        from spanqa.evaluation import score_list

        t = json.load(open(th))["t"]
        assert t == pytest.approx(tuned.t)
        expected = sum(
            score_list(decoding.select_list(c, tuned), g)[2] for c, g in dev
        ) / len(dev)
        assert report["aggregates"]["list_f1"] == pytest.approx(expected)
