import json
import shutil

import pytest

from docnmt import experiment as ex
from docnmt.cli import main
from docnmt.data import write_corpus
from docnmt.evaluation import EvalReport
from docnmt.synthetic import copy_corpus

FAST = {
    "vocab_size": 60,
    "block": {"num_layers": 1, "d_model": 32, "num_heads": 2, "d_ffn": 64, "dropout": 0.0},
    "train": {"lr_mode": "fixed", "lr_fixed": 3e-3, "batch_size": 5, "max_epochs": 60, "patience": 60},
    "beam": 2,
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("exp")
    write_corpus(copy_corpus(50, seed=1), d / "copy")
    return d


def config(workdir, name, **kw):
    cfg = {**FAST, "train_data": str(workdir / "copy"), "valid_data": str(workdir / "copy"), "test_data": str(workdir / "copy")}
    cfg.update(kw)
    cfg["output_dir"] = str(workdir / name)
    path = workdir / f"{name}.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def vanilla_run(workdir):
    assert main(["run", "--config", str(config(workdir, "vanilla", arch="vanilla_sent")), "--format", "json"]) == 0
    return workdir / "vanilla"


@pytest.fixture(scope="module")
def cascade_run(workdir):
    assert main(["run", "--config", str(config(workdir, "cascade", arch="cascade_mtl")), "--format", "json"]) == 0
    return workdir / "cascade"


def read_report(run_dir):
    return json.loads((run_dir / "report.json").read_text())


class TestFormatting:
    def test_negative_delta(self):
        assert ex.format_delta(1.0, 20.0) == "1.0 (−19.0)"

    def test_positive_delta(self):
        assert ex.format_delta(33.7, 21.2) == "33.7 (+12.5)"

    def test_table_alignment(self):
        rows = [EvalReport("a", {"s_bleu": 27.31, "d_bleu": 30.0}), EvalReport("longer name", {"s_bleu": 5.0})]
        lines = ex.render_table(rows).splitlines()
        assert lines[0].split() == ["System", "s-BLEU", "d-BLEU"]
        assert len({len(lines[0]), len(lines[2])}) == 1
        assert lines[3].split() == ["longer", "name", "5.0", "-"]
        assert lines[-1].startswith("BLEU signature:")

    def test_document_sizes(self):
        from docnmt.data import Triplet

        ts = [Triplet([], [], [], "d", i, doc_index=k) for i, k in enumerate([0, 0, 1, 2, 2, 2])]
        assert ex.document_sizes(ts) == [2, 1, 3]


class TestRunExperiment:
    def test_copy_task_converges(self, vanilla_run):
        rep = read_report(vanilla_run)
        assert set(rep["metrics"]) == {"s_bleu", "d_bleu"}
        assert rep["metrics"]["s_bleu"] > 90

    def test_artifacts(self, vanilla_run):
        for name in ("spec.json", "vocab.bpe", "checkpoint.npz", "history.jsonl", "test.hyp", "test.ref", "test.src", "test.docs", "report.txt"):
            assert (vanilla_run / name).exists(), name

    def test_resolved_spec_is_complete(self, vanilla_run):
        spec = json.loads((vanilla_run / "spec.json").read_text())
        assert spec["block"]["vocab_size"] > 0 and spec["block"]["max_positions"] == 160
        assert spec["train"]["seed"] == spec["seed"]

    def test_report_recomputable_from_files(self, vanilla_run, tmp_path):
        for name in ("test.hyp", "test.ref", "test.src", "test.docs"):
            shutil.copy(vanilla_run / name, tmp_path / name)
        again = ex.evaluate_files("vanilla_sent", tmp_path)
        assert again.metrics == read_report(vanilla_run)["metrics"]

    def test_cascade_report_has_reconstruction(self, cascade_run):
        assert "recon_bleu" in read_report(cascade_run)["metrics"]
        assert (cascade_run / "test.recon").exists()

    def test_eval_subcommand_with_baseline(self, vanilla_run, cascade_run, capsys):
        assert main(["eval", "--run-dir", str(vanilla_run), "--baseline", str(cascade_run / "test.hyp"), "--bootstrap-n", "50", "--format", "json"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert 0.0 <= rep["metrics"]["bootstrap_p"] <= 1.0

    def test_decode_subcommand(self, vanilla_run, tmp_path):
        assert main(["decode", "--run-dir", str(vanilla_run), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "test.hyp").read_bytes() == (vanilla_run / "test.hyp").read_bytes()

    def test_table_subcommand(self, vanilla_run, cascade_run, capsys):
        assert main(["table", str(vanilla_run / "report.json"), str(cascade_run / "report.json")]) == 0
        out = capsys.readouterr().out
        assert "vanilla_sent" in out and "cascade_mtl:P2_SRC" in out and "Recon" in out


class TestProbes:
    def test_random_probe_report(self, cascade_run):
        rep = ex.probe_random_context(cascade_run)
        m = rep.metrics
        assert m["display"] == ex.format_delta(m["s_bleu_random"], m["s_bleu_matched"])
        assert (cascade_run / "probe_random" / "report.json").exists()

    def test_random_probe_seeded(self, cascade_run, tmp_path):
        a = ex.probe_random_context(cascade_run, seed=3, out_dir=tmp_path / "a")
        b = ex.probe_random_context(cascade_run, seed=3, out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
        assert a.metrics == b.metrics

    def test_self_probe_format(self, cascade_run):
        rep = ex.probe_self_context(cascade_run)
        assert rep.metrics["display"] == ex.format_delta(rep.metrics["s_bleu_self"], rep.metrics["s_bleu_random"])

    def test_vanilla_refused(self, vanilla_run, capsys):
        assert main(["probe-random", "--run-dir", str(vanilla_run)]) == 1
        assert "consumes no context" in capsys.readouterr().err
        assert main(["probe-self", "--run-dir", str(vanilla_run)]) == 1

    def test_target_context_refused(self, cascade_run, tmp_path, capsys):
        run = tmp_path / "tgt"
        shutil.copytree(cascade_run, run)
        spec = json.loads((run / "spec.json").read_text())
        spec["context_mode"] = "P2_TGT"
        (run / "spec.json").write_text(json.dumps(spec))
        assert main(["probe-self", "--run-dir", str(run)]) == 1
        assert "current target sentence" in capsys.readouterr().err


class TestExitCodes:
    def test_unknown_key(self, workdir, capsys):
        path = workdir / "bad.json"
        path.write_text(json.dumps({"arch": "vanilla_sent", "learning_rate": 1}))
        assert main(["train", "--config", str(path)]) == 1
        assert "[config]" in capsys.readouterr().err

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("arch: [unclosed\n")
        assert main(["train", "--config", str(path)]) == 1

    def test_missing_data(self, workdir, tmp_path):
        path = config(workdir, "missing", arch="vanilla_sent", train_data=str(tmp_path / "nope"))
        assert main(["train", "--config", str(path)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_failure(self, workdir):
        path = config(workdir, "diverge", arch="vanilla_sent")
        assert main(["train", "--config", str(path), "--set", "train.lr_fixed=1e30", "--set", "train.max_epochs=3"]) == 3

    def test_yaml_config_and_flag_override(self, workdir, tmp_path):
        cfg = {**FAST, "arch": "concat_context", "train_data": str(workdir / "copy"), "valid_data": str(workdir / "copy"), "test_data": str(workdir / "copy")}
        cfg["train"] = {**FAST["train"], "max_epochs": 1}
        import yaml

        (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
        out = tmp_path / "run"
        assert main(["train", "--config", str(tmp_path / "c.yaml"), "--output-dir", str(out), "--seed", "7"]) == 0
        spec = json.loads((out / "spec.json").read_text())
        assert spec["seed"] == 7 and spec["train"]["seed"] == 7 and spec["arch"] == "concat_context"

    def test_bpe_train(self, workdir, tmp_path, capsys):
        assert main(["bpe-train", "--corpus", str(workdir / "copy"), "--size", "40", "--output", str(tmp_path / "v.bpe")]) == 0
        assert (tmp_path / "v.bpe").read_text().startswith("docnmt-bpe 1")

    def test_bpe_train_too_small(self, workdir, tmp_path):
        assert main(["bpe-train", "--corpus", str(workdir / "copy"), "--size", "3", "--output", str(tmp_path / "v.bpe")]) == 1
