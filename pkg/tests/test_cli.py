import re

import pytest

from ctcmix import cli
from ctcmix.cli import main, read_tsv
from ctcmix.config import read_config_file
from ctcmix.ctc import ctc_loss_grad

SUMMARY = re.compile(r"^cer=\d+\.\d{6} lines=\d+ edits=\d+$")


def run(argv, capsys, environ=None):
    code = main(argv, environ={} if environ is None else environ)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ds"
    assert main(["gen-data", "--out", str(path), "--lines", "40", "--val-fraction", "0.25",
                 "--max-len", "5", "--seed", "2"], environ={}) == 0
    return path


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "train"
    code = main(["train", "--data", str(dataset), "--out", str(out), "--max-epochs", "2", "--dropout", "0",
                 "--mixup", "on"], environ={})
    assert code == 0
    return out


def test_gen_data_counts(tmp_path, capsys):
    code, out, _ = run(["gen-data", "--out", str(tmp_path / "d"), "--lines", "20"], capsys)
    assert code == 0
    assert out.strip() == "train=18 valid=2"
    assert (tmp_path / "d" / "train" / "manifest.tsv").read_text().count("\n") == 18
    assert (tmp_path / "d" / "resolved.cfg").exists()


@pytest.mark.parametrize("argv", [
    ["gen-data", "--out", "x", "--lines", "1"],
    ["gen-data", "--out", "x", "--val-fraction", "1.5"],
    ["gen-data", "--out", "x", "--alphabet", "abca"],
    ["gen-data", "--lines", "10"],
    ["gen-data", "--out", "x", "--bogus", "1"],
    ["train", "--data", "x", "--out", "y", "--preset", "huge"],
    [],
])
def test_usage_errors(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    code, _, err = run(argv, capsys)
    assert code == 2
    assert not (tmp_path / "x").exists()


def test_train_summary_and_outputs(trained, capsys):
    assert (trained / "trainlog.tsv").read_text().count("\n") == 3
    marker = (trained / "best.ckpt").read_text().strip()
    assert (trained / marker).is_file()
    resolved = read_config_file(trained / "resolved.cfg")
    assert resolved["mixup"] == "on" and resolved["max_epochs"] == "2"


def test_train_prints_parseable_summary(dataset, tmp_path, capsys):
    code, out, _ = run(["train", "--data", str(dataset), "--out", str(tmp_path / "t"), "--max-epochs", "1"], capsys)
    assert code == 0
    assert re.fullmatch(r"best_epoch=1 cer=\d\.\d{6} val_loss=[\d.]+ stopped_epoch=1 final_val_loss=[\d.]+\n", out)


def test_train_missing_dataset_names_stage(tmp_path, capsys):
    code, _, err = run(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")], capsys)
    assert code == 3
    assert "stage 'load data'" in err and "none" in err


def test_eval_summary_and_report(dataset, trained, capsys):
    code, out, _ = run(["eval", "--data", str(dataset), "--checkpoint", str(trained / "best.ckpt")], capsys)
    assert code == 0
    assert SUMMARY.match(out.strip())
    report = (trained / "eval-valid" / "report.tsv").read_text().splitlines()
    assert report[0] == "reference\tprediction\tedits" and len(report) == 11
    code2, out2, _ = run(["eval", "--data", str(dataset), "--checkpoint", str(trained / "best.ckpt")], capsys)
    assert out2 == out


def test_untrained_model_is_near_chance(dataset, tmp_path, capsys):
    run(["train", "--data", str(dataset), "--out", str(tmp_path / "t"), "--max-epochs", "1", "--lr", "1e-9"],
        capsys)
    code, out, _ = run(["eval", "--data", str(dataset), "--checkpoint", str(tmp_path / "t" / "best.ckpt")], capsys)
    assert code == 0
    assert float(out.split()[0].split("=")[1]) > 0.8


def test_eval_missing_checkpoint(dataset, tmp_path, capsys):
    missing = tmp_path / "absent.ckpt"
    code, _, err = run(["eval", "--data", str(dataset), "--checkpoint", str(missing)], capsys)
    assert code == 3
    assert str(missing) in err


def test_eval_alphabet_mismatch(trained, tmp_path, capsys):
    other = tmp_path / "other"
    run(["gen-data", "--out", str(other), "--lines", "10", "--alphabet", "klmno"], capsys)
    code, _, err = run(["eval", "--data", str(other), "--checkpoint", str(trained / "best.ckpt")], capsys)
    assert code == 1
    assert "ConfigMismatch" in err


def test_selftest_passes(tmp_path, capsys):
    code, out, _ = run(["selftest", "--quick", "on", "--out", str(tmp_path / "st")], capsys)
    assert code == 0
    rows = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(rows) == 5 and all(r.startswith("PASS") for r in rows)
    assert "max |loss_dp - loss_bruteforce|" in out
    assert (tmp_path / "st" / "selftest.txt").exists()


def test_selftest_detects_sign_flip(capsys):
    def flipped(y, labels):
        loss, grad = ctc_loss_grad(y, labels)
        return loss, -grad

    code = cli.cmd_selftest({"quick": True, "out": None}, grad_fn=flipped)
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL  ctc-gradient" in out
    assert "failing suites: ctc-gradient" in out


def test_precedence_file_env_flag(dataset, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nmax-epochs = 1\nlr = 1e-3\nseed = 5\n")
    out = tmp_path / "p"
    env = {"CTCMIX_LR": "2e-3", "CTCMIX_SEED": "6", "CTCMIX_LINES": "99"}
    code, _, _ = run(["train", "--config", str(cfg), "--data", str(dataset), "--out", str(out), "--seed", "7"],
                     capsys, environ=env)
    assert code == 0
    resolved = read_config_file(out / "resolved.cfg")
    assert resolved["max_epochs"] == "1" and resolved["lr"] == "0.002" and resolved["seed"] == "7"


def test_unknown_env_setting_rejected(capsys):
    code, _, err = run(["selftest", "--quick", "on"], capsys, environ={"CTCMIX_TYPO": "1"})
    assert code == 2 and "typo" in err


def test_resolved_config_reproduces_run(dataset, tmp_path, capsys):
    first = tmp_path / "a"
    run(["train", "--data", str(dataset), "--out", str(first), "--max-epochs", "2", "--mixup", "on",
         "--seed", "3"], capsys)
    second = tmp_path / "b"
    code, _, _ = run(["train", "--config", str(first / "resolved.cfg"), "--out", str(second)], capsys)
    assert code == 0
    strip_time = lambda p: [l.rsplit("\t", 1)[0] for l in (p / "trainlog.tsv").read_text().splitlines()]
    assert strip_time(first) == strip_time(second)


def test_ablate_dropout_grid(dataset, tmp_path, capsys):
    out = tmp_path / "ab"
    code, printed, _ = run(["ablate", "--data", str(dataset), "--out", str(out), "--axis", "dropout",
                            "--seeds", "1", "--max-epochs", "1"], capsys)
    assert code == 0
    rows = read_tsv(out / "ablate-dropout.tsv")
    assert [r["arm"] for r in rows] == ["dropout-0/none", "dropout-0/mixup", "dropout-0.5/none",
                                        "dropout-0.5/mixup"]
    assert all(r["runs"] == "1" and r["failed"] == "0" for r in rows)
    assert printed.splitlines()[0].startswith("axis\tarm\truns")
    assert len(read_tsv(out / "ablate-dropout-runs.tsv")) == 4


def test_ablate_datasize_subsets_and_failures(dataset, tmp_path, capsys):
    out = tmp_path / "ds"
    code, _, err = run(["ablate", "--data", str(dataset), "--out", str(out), "--axis", "datasize", "--seeds", "2",
                        "--max-epochs", "1", "--subsets", "50%,8,999"], capsys)
    rows = read_tsv(out / "ablate-datasize.tsv")
    assert [r["arm"] for r in rows] == ["50%/none", "50%/mixup", "8/none", "8/mixup", "999/none", "999/mixup"]
    runs = read_tsv(out / "ablate-datasize-runs.tsv")
    assert {r["train_lines"] for r in runs if r["arm"].startswith("50%")} == {"15"}
    # the oversized subset fails on its own without stopping the sweep
    assert rows[4]["failed"] == "2" and rows[0]["failed"] == "0"
    assert code == 1 and "999" in err


def test_subset_is_seeded_shuffle():
    lines = list(range(20))
    a = cli.take_subset(lines, 5, seed=1)
    assert a == cli.take_subset(lines, 5, seed=1)
    assert a != lines[:5] and a != cli.take_subset(lines, 5, seed=2)
    assert cli.take_subset(lines, None, seed=0) == lines


def test_parse_helpers():
    assert cli.parse_dist("uniform") == "uniform:0:1"
    assert cli.parse_dist("uniform:0.1:0.9") == "uniform:0.1:0.9"
    with pytest.raises(ValueError):
        cli.parse_dist("normal")
    assert cli.parse_subsets("all, 50%,200") == ("all", "50%", "200")
    assert cli.subset_size("25%", 900) == 225 and cli.subset_size("all", 900) is None


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"], environ={})
    assert exc.value.code == 0
    assert "ctcmix" in capsys.readouterr().out


def test_gen_data_is_byte_identical_across_directories(tmp_path, capsys):
    for name in ("one", "two"):
        run(["gen-data", "--out", str(tmp_path / name), "--lines", "12", "--seed", "3"], capsys)
    files = lambda root: {p.relative_to(root): p.read_bytes() for p in root.rglob("*") if p.is_file()}
    assert files(tmp_path / "one") == files(tmp_path / "two")
