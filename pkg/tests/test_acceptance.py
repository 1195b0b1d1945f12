"""Release criteria, each reported as one PASS/FAIL line in the terminal summary."""
import re
import time
from pathlib import Path

import numpy as np
import pytest

from ctcmix.autodiff import ops
from ctcmix.autodiff.tensor import Tensor
from ctcmix.cli import main, read_tsv
from ctcmix.ctc import Vocabulary
from ctcmix.data import GenConfig, LineDataset, generate_lines, load_split
from ctcmix.mixup import MixPlan, MixupConfig, make_plan
from ctcmix.model import GatedConvRecognizer, NetworkConfig, load, save
from ctcmix.selftest import (ctc_gradient_suite, ctc_oracle_suite, mixup_linearity_suite, model_gradcheck,
                             random_labels, sampler_suite, tiny_model)
from ctcmix.trainer import RMSProp, TrainConfig, evaluate, train, train_step

pytestmark = pytest.mark.acceptance

ALPHA = "abcdefghij"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """1,000 training and 100 validation lines, lengths 1 to 12."""
    path = tmp_path_factory.mktemp("corpus") / "lines"
    code = main(["gen-data", "--out", str(path), "--lines", "1100", "--val-fraction", str(100 / 1100),
                 "--alphabet", ALPHA, "--min-len", "1", "--max-len", "12", "--seed", "0"], environ={})
    assert code == 0
    return path


def test_01_ctc_matches_enumeration(verdict):
    res = ctc_oracle_suite(cases=1000)
    ok = res.passed and res.cases >= 1000 and res.seconds < 30
    assert verdict(1, "CTC oracle", ok,
                   f"{res.cases} instances, max |dp - brute| = {res.max_error:.2e} (tol 1e-9), {res.seconds:.1f}s")


def test_02_ctc_gradient(verdict):
    res = ctc_gradient_suite(cases=100)
    ok = res.passed and res.cases >= 100
    assert verdict(2, "CTC gradient", ok,
                   f"{res.cases} instances, max relative error {res.max_error:.2e} (tol 1e-5)")


def test_03_mixup_linearity(verdict):
    res = mixup_linearity_suite(draws=21)
    depths = {d % 9 for d in range(res.cases)}
    ok = res.passed and res.cases >= 20 and {0, 4, 8} <= depths
    assert verdict(3, "mixup linearity", ok,
                   f"{res.cases} draws over depths {sorted(depths)}, max relative error {res.max_error:.2e} "
                   f"(tol 1e-10)")


def test_04_unit_ratio_step_is_bit_identical(verdict, corpus):
    lines = load_split(corpus / "train")[:64]
    ds = LineDataset(lines, Vocabulary(ALPHA), 32)
    batch = ds.batch(np.argsort(ds.widths)[:8])
    snapshots = []
    for mix in (MixupConfig(enabled=False), MixupConfig(enabled=True, force_lambda=1.0)):
        cfg = TrainConfig(seed=0, mixup=mix)
        model = GatedConvRecognizer(NetworkConfig.from_preset("tiny", ALPHA, dropout=0.5), seed=0)
        opt = RMSProp(model.params, cfg.lr, cfg.rho, cfg.eps)
        plan = make_plan(len(batch), np.random.default_rng(1), mix) if mix.enabled else None
        assert plan is None or plan.is_mixing
        loss, _, _ = train_step(model, batch, plan, opt, cfg, np.random.default_rng(2))
        snapshots.append((repr(loss), b"".join(model.params[k].data.tobytes() for k in sorted(model.params))))
    ok = snapshots[0] == snapshots[1]
    assert verdict(4, "endpoint identity", ok, f"loss {snapshots[0][0]} vs {snapshots[1][0]}, "
                   f"parameters {'identical' if snapshots[0][1] == snapshots[1][1] else 'differ'}")


def test_05_full_model_gradient(verdict):
    rng = np.random.default_rng(5)
    model = tiny_model(seed=5)
    width = 32
    images = rng.normal(size=(2, 1, model.config.height, width))
    labels = random_labels(rng, 2, len(ALPHA), model.output_length(width))
    start = time.perf_counter()
    plain = model_gradcheck(model, images, labels)
    mixed = model_gradcheck(model, images, labels, MixPlan.pair([1, 0], [0.37, 0.37], 4))
    seconds = time.perf_counter() - start
    ok = plain[0] < 1e-4 and mixed[0] < 1e-4 and seconds < 300 and plain[2] == model.parameter_count
    assert verdict(5, "full-model gradient check", ok,
                   f"{plain[2]} entries, worst {plain[0]:.2e} ({plain[1]}) unmixed, {mixed[0]:.2e} ({mixed[1]}) "
                   f"mixed at depth 4 (tol 1e-4), {seconds:.0f}s")


def test_06_samplers(verdict):
    res = sampler_suite(draws=100_000)
    assert verdict(6, "ratio samplers", res.passed, f"{res.detail} (tol 0.01)")


def test_07_full_preset_shape_contract(verdict):
    model = GatedConvRecognizer(NetworkConfig.from_preset("paper", ALPHA), seed=0)
    x = np.random.default_rng(7).uniform(size=(1, 1, 128, 256))
    pool = next(i for i, l in enumerate(model.config.layers) if l.kind == "max-pool")
    window = model.config.layers[pool]
    before = model.run_layers(Tensor(x), stop=pool)
    pooled = ops.max_pool2d(before, window.filter, window.stride)
    frames = model.forward(x).shape[1]
    ok = model.output_length(256) == 32 and frames == 32 and pooled.shape[2] == 1
    assert verdict(7, "full preset shape contract", ok,
                   f"T={frames} for 128x256, pooled map {pooled.shape[1:]} (height {pooled.shape[2]})")


SUMMARY = re.compile(r"best_epoch=(\d+) cer=([\d.]+) val_loss=([\d.]+) stopped_epoch=(\d+)")


def test_08_end_to_end_learning(verdict, corpus, tmp_path, capsys):
    rows = []
    for seed in (0, 1, 2):
        start = time.perf_counter()
        code = main(["train", "--data", str(corpus), "--out", str(tmp_path / f"seed-{seed}"), "--preset", "tiny",
                     "--mixup", "off", "--max-epochs", "300", "--target-cer", "0.1499", "--seed", str(seed)],
                    environ={})
        out = capsys.readouterr().out
        minutes = (time.perf_counter() - start) / 60
        m = SUMMARY.search(out)
        cer_value = float(m.group(2)) if code == 0 and m else float("nan")
        rows.append((seed, cer_value, int(m.group(4)) if m else -1, minutes))
    good = [r for r in rows if r[1] < 0.15 and r[3] < 30]
    detail = "; ".join(f"seed {s}: cer {c:.4f} at epoch {e} in {t:.1f} min" for s, c, e, t in rows)
    assert verdict(8, "end-to-end learning", len(good) >= 2, f"{len(good)}/3 under 0.15 ({detail})")


def test_09_mixup_regularization_trend(verdict, corpus, tmp_path, capsys):
    out = tmp_path / "ablate"
    # the epoch limit is set far out of reach so every run ends by early stopping
    code = main(["ablate", "--data", str(corpus), "--out", str(out), "--axis", "datasize", "--subsets", "200",
                 "--seeds", "3", "--seed", "0", "--max-epochs", "3000"], environ={})
    capsys.readouterr()
    rows = {r["arm"]: r for r in read_tsv(out / "ablate-datasize.tsv")}
    none, mix = rows["200/none"], rows["200/mixup"]
    cer_none, cer_mix = float(none["cer_mean"]), float(mix["cer_mean"])
    loss_none, loss_mix = float(none["val_loss_mean"]), float(mix["val_loss_mean"])
    ok = code == 0 and cer_mix <= cer_none and loss_mix <= loss_none
    assert verdict(9, "mixup regularization trend", ok,
                   f"mean CER {cer_mix:.4f} with mixup vs {cer_none:.4f} without; mean validation loss at the "
                   f"early-stop epoch {loss_mix:.4f} vs {loss_none:.4f} (final epoch "
                   f"{float(mix['final_val_loss_mean']):.4f} vs {float(none['final_val_loss_mean']):.4f})")


def _tree(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_10_determinism_and_persistence(verdict, tmp_path):
    train_lines, valid_lines = generate_lines(GenConfig(lines=60, val_fraction=1 / 6, max_len=6, seed=9))
    vocab = Vocabulary(ALPHA)
    train_set, valid_set = LineDataset(train_lines, vocab, 32), LineDataset(valid_lines, vocab, 32)
    net = NetworkConfig.from_preset("tiny", ALPHA, dropout=0.5)
    cfg = TrainConfig(max_epochs=3, seed=11, mixup=MixupConfig(enabled=True))
    a = train(train_set, valid_set, net, cfg)
    b = train(train_set, valid_set, net, cfg)
    logs_equal = a.log.deterministic_view() == b.log.deterministic_view()

    path = save(a.model, tmp_path / "model.ckpt")
    report_equal = evaluate(valid_set, load(path)).to_tsv() == evaluate(valid_set, a.model).to_tsv()

    argv = ["gen-data", "--lines", "50", "--seed", "4", "--out"]
    assert main(argv + [str(tmp_path / "d1")], environ={}) == 0
    assert main(argv + [str(tmp_path / "d2")], environ={}) == 0
    data_equal = _tree(tmp_path / "d1") == _tree(tmp_path / "d2")

    ok = logs_equal and report_equal and data_equal
    assert verdict(10, "determinism and persistence", ok,
                   f"train logs {'identical' if logs_equal else 'differ'}, reloaded evaluation "
                   f"{'identical' if report_equal else 'differs'}, regenerated dataset "
                   f"{'byte-identical' if data_equal else 'differs'}")
