import json
import subprocess
import sys

import numpy as np
import pytest

from ssvep_bima import cli
from ssvep_bima.data import load_epochs
from ssvep_bima.evaluation import read_report, read_report_csv
from ssvep_bima.nn import functional as F

COMMANDS = ["synth", "train", "eval", "loso", "ablate", "itr", "verify"]
SMALL_SYNTH = ["--subjects", "3", "--classes", "9.25,11.25,13.25", "--trials-per-class", "2", "--channels", "2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["synth", "--out", str(out), "--seed", "3", "--snr-db", "10", *SMALL_SYNTH]) == 0
    return out


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestHelp:
    @pytest.mark.parametrize("command", COMMANDS)
    def test_help_exits_zero(self, capsys, command):
        code, out, _ = run(capsys, command, "--help")
        assert code == 0
        parser = cli.build_parser()
        sub = parser._subparsers._group_actions[0].choices[command]
        for action in sub._actions:
            for flag in action.option_strings:
                assert flag in out

    def test_precedence_documented(self, capsys):
        _, out, _ = run(capsys, "loso", "--help")
        assert "command-line flags > --config file > built-in defaults" in " ".join(out.split())

    def test_top_level(self, capsys):
        assert run(capsys, "--help")[0] == 0
        assert run(capsys, "nonsense")[0] == 2
        assert run(capsys)[0] == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "ssvep_bima", "itr", "--acc", "1", "--classes", "2", "--window", "1"],
                              capture_output=True, text=True, check=False)
        assert proc.returncode == 0 and proc.stdout.strip() == "60.00"


class TestItr:
    @pytest.mark.parametrize(
        "acc,classes,window,expected",
        [("1.0", "12", "1.0", "215.10"), (repr(1 / 12), "12", "1.0", "0.00"), ("0.0", "12", "1.0", "0.00")],
    )
    def test_outputs(self, capsys, acc, classes, window, expected):
        code, out, _ = run(capsys, "itr", "--acc", acc, "--classes", classes, "--window", window)
        assert code == 0 and out.strip() == expected

    def test_table_mean(self, capsys):
        code, out, _ = run(capsys, "itr", "--acc", "0.7866", "--classes", "12", "--window", "0.75")
        assert code == 0 and abs(float(out) - 167.9) <= 0.1

    def test_gaze(self, capsys):
        _, a, _ = run(capsys, "itr", "--acc", "0.9", "--classes", "12", "--window", "1.0", "--gaze", "0.5")
        _, b, _ = run(capsys, "itr", "--acc", "0.9", "--classes", "12", "--window", "1.5")
        assert a == b

    @pytest.mark.parametrize("argv", [["--acc", "1.5", "--classes", "12", "--window", "1"],
                                      ["--acc", "0.5", "--classes", "1", "--window", "1"],
                                      ["--acc", "0.5", "--classes", "12", "--window", "0"],
                                      ["--acc", "x", "--classes", "12", "--window", "1"]])
    def test_domain_errors_exit_2(self, capsys, argv):
        assert run(capsys, "itr", *argv)[0] == 2


class TestSynth:
    def test_files(self, tmp_path, capsys):
        code, _, _ = run(capsys, "synth", "--out", str(tmp_path), "--subjects", "2", "--trials-per-class", "3", "--seed", "1")
        assert code == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["subject_1.eegb", "subject_2.eegb"]
        s = load_epochs(tmp_path / "subject_1.eegb")
        assert s.num_trials == 36 and s.num_samples == 256 and s.num_classes == 12

    def test_deterministic(self, tmp_path, capsys):
        for d in ("a", "b"):
            run(capsys, "synth", "--out", str(tmp_path / d), "--seed", "9", *SMALL_SYNTH)
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_seed_from_environment(self, tmp_path, capsys, monkeypatch):
        run(capsys, "synth", "--out", str(tmp_path / "flag"), "--seed", "4", *SMALL_SYNTH)
        monkeypatch.setenv("BIMA_SEED", "4")
        run(capsys, "synth", "--out", str(tmp_path / "env"), *SMALL_SYNTH)
        assert (tmp_path / "flag/subject_1.eegb").read_bytes() == (tmp_path / "env/subject_1.eegb").read_bytes()

    def test_bad_values_exit_2(self, tmp_path, capsys):
        assert run(capsys, "synth", "--out", str(tmp_path), "--subjects", "0")[0] == 2
        assert run(capsys, "synth", "--out", str(tmp_path), "--classes", "a,b")[0] == 2

    def test_unwritable_exit_1(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run(capsys, "synth", "--out", str(blocker / "sub"), *SMALL_SYNTH)[0] == 1


class TestLoso:
    def test_report_and_summary(self, data_dir, tmp_path, capsys):
        report = tmp_path / "r.json"
        code, out, _ = run(capsys, "loso", "--data", str(data_dir), "--epochs", "1", "--jobs", "1", "--report", str(report))
        assert code == 0
        assert "mean accuracy" in out and "mean ITR" in out
        r = read_report(report)
        assert len(r.folds) == 3
        assert [f.subject for f in r.folds] == ["subject_01", "subject_02", "subject_03"]

    def test_disable_recorded(self, data_dir, tmp_path, capsys):
        report = tmp_path / "r.json"
        code, _, _ = run(capsys, "loso", "--data", str(data_dir), "--epochs", "1", "--jobs", "1",
                         "--disable", "mask,pe", "--report", str(report))
        assert code == 0
        r = read_report(report)
        assert r.disabled == ["mask", "pe"]
        assert r.config["train"]["bima"] == {"mask_enabled": False, "pe_enabled": False}

    def test_window_crops_to_192(self, data_dir, capsys, monkeypatch):
        seen = []
        real = cli.loso

        def spy(subjects, cfg, jobs=1, folds=None):
            seen.extend(s.num_samples for s in subjects)
            return real(subjects, cfg, jobs=jobs, folds=folds)

        monkeypatch.setattr(cli, "loso", spy)
        code, _, _ = run(capsys, "loso", "--data", str(data_dir), "--epochs", "1", "--jobs", "1", "--window", "0.75")
        assert code == 0 and seen == [192, 192, 192]

    def test_csv_and_jobs(self, data_dir, tmp_path, capsys):
        paths = [tmp_path / "one.csv", tmp_path / "two.csv"]
        for jobs, path in zip(("1", "2"), paths):
            assert run(capsys, "loso", "--data", str(data_dir), "--epochs", "1", "--jobs", jobs, "--report", str(path))[0] == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert len(read_report_csv(paths[0])) == 4

    def test_ablate_requires_disable(self, data_dir, capsys):
        assert run(capsys, "ablate", "--data", str(data_dir))[0] == 2
        assert run(capsys, "ablate", "--data", str(data_dir), "--disable", "na,sa", "--epochs", "1")[0] == 1

    def test_config_file(self, data_dir, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"epochs": 1}, "bima": {"num_heads": 1}}))
        report = tmp_path / "r.json"
        code, _, _ = run(capsys, "loso", "--data", str(data_dir), "--config", str(cfg), "--jobs", "1", "--report", str(report))
        assert code == 0
        r = read_report(report)
        assert r.folds[0].epochs == 1
        assert r.config["train"]["bima"]["num_heads"] == 1
        # flags beat the file
        code, _, _ = run(capsys, "loso", "--data", str(data_dir), "--config", str(cfg), "--epochs", "2", "--jobs", "1",
                         "--report", str(report))
        assert read_report(report).folds[0].epochs == 2

    def test_errors_exit_1(self, tmp_path, capsys):
        code, _, err = run(capsys, "loso", "--data", str(tmp_path / "missing"), "--jobs", "1")
        assert code == 1 and "missing" in err
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"epoch": 3}}))
        code, _, err = run(capsys, "loso", "--data", str(tmp_path), "--config", str(bad), "--jobs", "1")
        assert code == 1 and "epoch" in err
        assert run(capsys, "loso", "--data", str(tmp_path), "--jobs", "0")[0] == 2


class TestTrainEval:
    def test_train_then_eval(self, data_dir, tmp_path, capsys):
        ckpt, log, report = tmp_path / "m.ckpt", tmp_path / "log.jsonl", tmp_path / "r.csv"
        code, out, _ = run(capsys, "train", "--data", str(data_dir), "--epochs", "2", "--out", str(ckpt), "--log", str(log))
        assert code == 0 and ckpt.exists()
        records = [json.loads(line) for line in log.read_text().splitlines()]
        assert [r["epoch"] for r in records] == [1, 2]
        code, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data_dir), "--report", str(report))
        assert code == 0 and "mean accuracy" in out
        assert len(read_report_csv(report)) == 4

    def test_train_deterministic(self, data_dir, tmp_path, capsys):
        for name in ("a", "b"):
            run(capsys, "train", "--data", str(data_dir), "--epochs", "1", "--seed", "2", "--out", str(tmp_path / name))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_eval_bad_checkpoint(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        assert run(capsys, "eval", "--checkpoint", str(bad), "--data", str(data_dir))[0] == 1


class TestVerify:
    def test_subset_passes(self, capsys):
        code, out, _ = run(capsys, "verify", "--only", "softmax,itr,ttest")
        assert code == 0
        assert out.count("PASS") == 3

    def test_injected_softmax_fault(self, capsys, monkeypatch):
        real = F.softmax_rows
        monkeypatch.setattr(F, "softmax_rows", lambda x: real(x) * 1.001)
        code, out, _ = run(capsys, "verify", "--only", "softmax")
        assert code == 1
        assert "FAIL" in out

    def test_unknown_check(self, capsys):
        assert run(capsys, "verify", "--only", "nope")[0] == 2

    def test_full_suite(self, capsys):
        code, out, _ = run(capsys, "verify")
        assert code == 0, out
        assert "7/7 checks passed" in out


def test_predictions_cover_each_subject(data_dir, tmp_path, capsys):
    report = tmp_path / "r.json"
    run(capsys, "loso", "--data", str(data_dir), "--epochs", "1", "--jobs", "1", "--report", str(report))
    for f in read_report(report).folds:
        assert len(f.predictions) == len(f.labels) == 6
        assert np.array(f.confusion).sum() == 6
