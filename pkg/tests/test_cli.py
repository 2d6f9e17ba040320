import json
import subprocess
import sys

import pytest

from grlforge import datasets_io as dio
from grlforge import evaluation as ev
from grlforge.cli import main
from grlforge.grl_dann import load_checkpoint

SMALL = {"height": 16, "width": 16, "size": 20}


def _write_config(path, **sections):
    path.write_text(json.dumps({"schema": 1, **sections}))
    return str(path)


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpora")
    cfg = _write_config(root / "synth.json", synth=SMALL)
    assert main(["synth", "--config", cfg, "--seed", "1", "--out", str(root / "src")]) == 0
    tgt = {**SMALL, "blur_range": [1.0, 2.0], "brightness_offset": 0.1}
    cfg_t = _write_config(root / "synth_t.json", synth=tgt)
    assert main(["synth", "--config", cfg_t, "--seed", "2", "--domain", "target", "--out", str(root / "tgt")]) == 0
    return root


def _train(corpora, out, run_id, *extra):
    return main([
        "train", "--source", str(corpora / "src" / "manifest.jsonl"),
        "--target", str(corpora / "tgt" / "manifest.jsonl"),
        "--out", str(out), "--run-id", run_id, "--epochs", "1", "--batch-size", "8", *extra,
    ])


class TestSynth:
    def test_summary_and_files(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "c"), "--size", "10", "--forged-fraction", "0.5",
                     "--config", _write_config(tmp_path / "c.json", synth={"height": 16, "width": 16})]) == 0
        assert "5 forged / 5 authentic" in capsys.readouterr().out
        assert len(list((tmp_path / "c" / "images").iterdir())) == 10
        assert len(dio.load_manifest(tmp_path / "c" / "manifest.jsonl")) == 10

    def test_rerun_identical(self, tmp_path, corpora):
        cfg = str(corpora / "synth.json")
        assert main(["synth", "--config", cfg, "--seed", "1", "--out", str(tmp_path / "again")]) == 0
        for rel in ["manifest.jsonl", "images/000000.ppm", "images/000019.ppm", "masks/000007.pgm"]:
            assert (tmp_path / "again" / rel).read_bytes() == (corpora / "src" / rel).read_bytes()

    def test_missing_parent(self, tmp_path, capsys):
        missing = tmp_path / "no" / "such" / "dir"
        assert main(["synth", "--out", str(missing), "--size", "2"]) == 3
        assert str(missing.parent) in capsys.readouterr().err

    @pytest.mark.parametrize(
        "config,code",
        [({"schema": 99}, 2), ({"schema": 1, "synth": {"forged_fraction": 2}}, 2), ({"schema": 1, "synth": {"bogus": 1}}, 2)],
    )
    def test_config_errors(self, tmp_path, config, code):
        p = tmp_path / "c.json"
        p.write_text(json.dumps(config))
        assert main(["synth", "--config", str(p), "--out", str(tmp_path / "x")]) == code

    def test_flag_overrides_file(self, tmp_path):
        cfg = _write_config(tmp_path / "c.json", synth={**SMALL, "size": 6})
        assert main(["synth", "--config", cfg, "--size", "4", "--out", str(tmp_path / "c")]) == 0
        assert len(dio.load_manifest(tmp_path / "c" / "manifest.jsonl")) == 4

    def test_unknown_flag(self):
        assert main(["synth", "--nope"]) == 2


class TestTrainEval:
    def test_smoke_and_cross_command(self, corpora, tmp_path, capsys):
        assert _train(corpora, tmp_path, "r1") == 0
        out = capsys.readouterr().out
        run = tmp_path / "r1"
        for name in ("checkpoint.grlf", "split.json", "metrics.csv"):
            assert (run / name).exists()
        rows = ev.read_csv(run / "metrics.csv")
        assert len(rows) == 1 and rows[0]["run_id"] == "r1"
        trainer_f1 = float(out.split("source validation f1=")[1].split()[0])
        assert main(["eval", "--checkpoint", str(run / "checkpoint.grlf"),
                     "--manifest", str(corpora / "src" / "manifest.jsonl"),
                     "--split", str(run / "split.json"), "--out", str(tmp_path / "ev")]) == 0
        eval_f1 = float(capsys.readouterr().out.split("f1=")[1].split()[0])
        assert abs(eval_f1 - trainer_f1) <= 1e-12
        assert ev.read_csv(tmp_path / "ev" / "metrics.csv")[0]["f1"] == repr(eval_f1)

    def test_duplicate_run_id(self, corpora, tmp_path):
        assert _train(corpora, tmp_path, "dup") == 0
        assert _train(corpora, tmp_path, "dup") == 2

    def test_lambda_zero_matches_source_only_bytes(self, corpora, tmp_path):
        assert _train(corpora, tmp_path, "a", "--lambda", "0", "--seed", "3") == 0
        assert _train(corpora, tmp_path, "b", "--lambda", "0", "--seed", "3") == 0
        a = load_checkpoint(tmp_path / "a" / "checkpoint.grlf")
        b = load_checkpoint(tmp_path / "b" / "checkpoint.grlf")
        for pa, pb in zip(a.param_sets, b.param_sets):
            for k in pa.params:
                assert pa.params[k].tobytes() == pb.params[k].tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit(self, corpora, tmp_path, capsys):
        assert _train(corpora, tmp_path, "boom", "--lr", "1e6") == 4
        assert "diverged" in capsys.readouterr().err

    def test_missing_manifest(self, corpora, tmp_path):
        assert main(["train", "--source", str(tmp_path / "nope.jsonl"), "--target", str(corpora / "tgt" / "manifest.jsonl"),
                     "--out", str(tmp_path), "--run-id", "x"]) == 3

    def test_missing_paths_is_config_error(self):
        assert main(["train", "--epochs", "1"]) == 2

    def test_truncated_checkpoint(self, corpora, tmp_path, capsys):
        assert _train(corpora, tmp_path, "t") == 0
        ck = tmp_path / "t" / "checkpoint.grlf"
        ck.write_bytes(ck.read_bytes()[:-9])
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(ck), "--manifest", str(corpora / "src" / "manifest.jsonl")]) == 3
        assert "truncated" in capsys.readouterr().err

    def test_bad_magic(self, corpora, tmp_path, capsys):
        ck = tmp_path / "bad.grlf"
        ck.write_bytes(b"NOPE!" + bytes(20))
        assert main(["eval", "--checkpoint", str(ck), "--manifest", str(corpora / "src" / "manifest.jsonl")]) == 3
        assert "GRLF1" in capsys.readouterr().err

    def test_empty_manifest(self, corpora, tmp_path):
        assert _train(corpora, tmp_path, "e") == 0
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        assert main(["eval", "--checkpoint", str(tmp_path / "e" / "checkpoint.grlf"), "--manifest", str(empty)]) == 2

    def test_target_labels_unused(self, corpora, tmp_path):
        stripped = tmp_path / "tgt"
        stripped.mkdir()
        m = dio.load_manifest(corpora / "tgt" / "manifest.jsonl")
        entries = [{k: v for k, v in e.items() if k != "label"} for e in m.entries]
        for e in entries:
            e["path"] = str(corpora / "tgt" / e["path"])
        dio.save_manifest(dio.Manifest(entries), stripped / "manifest.jsonl")
        common = ["--source", str(corpora / "src" / "manifest.jsonl"), "--out", str(tmp_path), "--epochs", "1", "--batch-size", "8"]
        assert main(["train", *common, "--target", str(stripped / "manifest.jsonl"), "--run-id", "nolab"]) == 0
        assert main(["train", *common, "--target", str(corpora / "tgt" / "manifest.jsonl"), "--run-id", "lab"]) == 0
        a = (tmp_path / "nolab" / "checkpoint.grlf").read_bytes()
        b = (tmp_path / "lab" / "checkpoint.grlf").read_bytes()
        assert a == b


class TestGradcheck:
    def test_passes(self, capsys):
        assert main(["gradcheck", "--trials", "5"]) == 0
        out = capsys.readouterr().out
        for name in ("linear", "conv2d", "maxpool", "grl_routing[lambda=0.5]"):
            assert name in out

    def test_fault_named(self, capsys):
        assert main(["gradcheck", "--trials", "2", "--inject-fault", "conv2d"]) == 1
        err = capsys.readouterr().err
        assert "conv2d" in err and "linear" not in err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "grlforge", "gradcheck", "--trials", "1"], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
