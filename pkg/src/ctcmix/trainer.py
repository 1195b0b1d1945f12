"""RMSProp training loop with manifold mixup, validation and early stopping."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .autodiff.ops import log_softmax_array
from .autodiff.tensor import backward, no_grad
from .ctc import batch_ctc, greedy_decode
from .data.batching import LineDataset, bucket_batches, make_buckets
from .errors import ConfigMismatch, EmptyDataset, InfeasibleAlignment, InvalidConfig, NonFiniteLoss
from .metrics import EvalReport, cer
from .mixup import MixPlan, MixupConfig, make_plan, mixup_batch_loss
from .model import checkpoint
from .model.network import GatedConvRecognizer, NetworkConfig, build

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 4e-4
    batch_size: int = 8
    rho: float = 0.9
    eps: float = 1e-8
    patience: int = 20
    max_epochs: int = 300
    seed: int = 0
    clip_norm: float = 10.0
    mixup: MixupConfig = field(default_factory=MixupConfig)
    # stop as soon as validation CER reaches this value (None: never)
    target_cer: Optional[float] = None

    def validate(self):
        if self.lr <= 0:
            raise InvalidConfig("learning rate must be positive")
        if not 0 < self.rho < 1:
            raise InvalidConfig("rmsprop decay must lie in (0, 1)")
        if self.patience < 1:
            raise InvalidConfig("patience must be at least 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("batch size and max epochs must be positive")
        if self.clip_norm < 0:
            raise InvalidConfig("clip norm must be >= 0")
        self.mixup.validate()


class RMSProp:
    """s <- rho*s + (1-rho)*g^2 ;  p <- p - lr*g/sqrt(s + eps)."""

    def __init__(self, params: Dict, lr: float = 4e-4, rho: float = 0.9, eps: float = 1e-8):
        self.params = params
        self.lr, self.rho, self.eps = lr, rho, eps
        self.state = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: Dict[str, np.ndarray]):
        for k, g in grads.items():
            s = self.state[k]
            s *= self.rho
            s += (1.0 - self.rho) * g * g
            p = self.params[k]
            p.data = p.data - self.lr * g / np.sqrt(s + self.eps)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float):
    """Rescale all gradients together when their joint L2 norm exceeds ``max_norm``."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_cer: float
    lambda_mean: float
    skipped_pairs: int
    seconds: float


@dataclass
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "val_loss", "val_cer", "lambda_mean", "skipped_pairs", "seconds")

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def to_tsv(self, with_time: bool = True) -> str:
        cols = self.COLUMNS if with_time else self.COLUMNS[:-1]
        lines = ["\t".join(cols)]
        for r in self.records:
            d = asdict(r)
            lines.append("\t".join(repr(d[c]) if isinstance(d[c], float) else str(d[c]) for c in cols))
        return "\n".join(lines) + "\n"

    def deterministic_view(self) -> str:
        """Everything except wall-clock time."""
        return self.to_tsv(with_time=False)


@dataclass
class TrainResult:
    model: GatedConvRecognizer
    log: TrainLog
    best_epoch: int
    best_cer: float
    best_loss: float
    stopped_epoch: int
    checkpoint_path: Optional[Path] = None


def _streams(seed: int):
    init, order, mix, drop = np.random.SeedSequence(seed).spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(order),
            np.random.default_rng(mix), np.random.default_rng(drop))


def train_step(model: GatedConvRecognizer, batch, plan: Optional[MixPlan], optimizer: RMSProp,
               config: TrainConfig, dropout_rng: np.random.Generator, batch_id=None):
    """One forward/backward/update. Returns (loss, plan used, active mask)."""
    plan = plan if plan is not None else MixPlan.identity(len(batch))
    model.zero_grad()
    logits = model.forward(batch.images, plan, training=True, rng=dropout_rng)
    loss, active = mixup_batch_loss(logits, batch.labels, plan, config.mixup.multiply_gradients)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteLoss(batch_id, value)
    backward(loss)
    grads = {k: p.grad for k, p in model.params.items()}
    grads, _ = clip_by_global_norm(grads, config.clip_norm)
    optimizer.step(grads)
    return value, plan, active


def evaluate(dataset: LineDataset, model: GatedConvRecognizer, batch_size: int = 8) -> EvalReport:
    """No-mixup, no-dropout greedy decoding with CER and mean CTC loss."""
    if dataset.height != model.config.height:
        raise ConfigMismatch(f"dataset height {dataset.height} != model height {model.config.height}")
    alphabet = set(model.config.alphabet)
    extra = sorted({ch for t in dataset.transcripts for ch in t} - alphabet)
    if extra or dataset.vocabulary.symbols != tuple(model.config.alphabet):
        raise ConfigMismatch(f"dataset vocabulary does not match the model alphabet (unknown: {extra})")
    if len(dataset) == 0:
        raise EmptyDataset("nothing to evaluate")
    vocab = model.vocabulary
    preds: List[Optional[str]] = [None] * len(dataset)
    losses = []
    for idx in make_buckets(dataset.widths, batch_size):
        batch = dataset.batch(idx)
        with no_grad():
            logits = model.forward(batch.images, training=False).data
        log_probs = log_softmax_array(logits, axis=-1)
        per_sample, _, feasible = batch_ctc(log_probs, batch.labels, need_grad=False)
        losses.extend(per_sample[feasible].tolist())
        for i, row in zip(idx, logits):
            preds[i] = greedy_decode(row, vocab)
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    return cer(preds, dataset.transcripts, loss=mean_loss)


def train(train_set: LineDataset, valid_set: LineDataset, model_config: NetworkConfig,
          config: TrainConfig, out_dir=None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainResult:
    """Train until ``patience`` epochs pass without a better validation CER.

    The kept model minimizes validation CER, ties broken by validation loss.
    With ``out_dir`` the log, the best checkpoint and a ``best.ckpt`` marker
    naming it are written as training progresses.
    """
    config.validate()
    if len(train_set) == 0 or len(valid_set) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    init_rng, order_rng, mix_rng, drop_rng = _streams(config.seed)
    model = GatedConvRecognizer(model_config, params=build(model_config, init_rng))
    optimizer = RMSProp(model.params, config.lr, config.rho, config.eps)
    batches = bucket_batches(train_set, config.batch_size)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    tlog = TrainLog()
    best = (np.inf, np.inf)
    best_state, best_epoch, ckpt_path = model.state_dict(), 0, None
    stale = 0
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        losses, lambdas, skipped = [], [], 0
        for bi in order_rng.permutation(len(batches)):
            batch = batches[bi]
            plan = None
            if config.mixup.enabled and len(batch) >= 2:
                plan = make_plan(len(batch), mix_rng, config.mixup)
            try:
                value, used, _ = train_step(model, batch, plan, optimizer, config, drop_rng, batch_id=int(bi))
            except InfeasibleAlignment:
                skipped += len(batch)
                continue
            losses.append(value)
            if used.is_mixing:
                lambdas.extend(used.lambdas.tolist())
                skipped += int(used.skipped.sum())
        report = evaluate(valid_set, model, config.batch_size)
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), report.loss, report.cer,
                          float(np.mean(lambdas)) if lambdas else 1.0, skipped,
                          time.perf_counter() - started)
        tlog.append(rec)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_cer %.4f", epoch, rec.train_loss, rec.val_loss, rec.val_cer)
        if on_epoch is not None:
            on_epoch(rec)
        key = (report.cer, report.loss if np.isfinite(report.loss) else np.inf)
        if key < best:
            best, best_epoch, stale = key, epoch, 0
            best_state = model.state_dict()
            if out is not None:
                ckpt_path = _save_best(model, out, epoch, ckpt_path)
        else:
            stale += 1
        if out is not None:
            (out / "trainlog.tsv").write_text(tlog.to_tsv(), encoding="utf-8")
        if config.target_cer is not None and report.cer <= config.target_cer:
            break
        if stale >= config.patience:
            break
    model.load_state_dict(best_state)
    return TrainResult(model, tlog, best_epoch, float(best[0]), float(best[1]), epoch, ckpt_path)


def _save_best(model, out: Path, epoch: int, previous: Optional[Path]) -> Path:
    path = checkpoint.save(model, out / f"epoch-{epoch:04d}.ckpt")
    marker = out / "best.ckpt"
    tmp = out / "best.ckpt.tmp"
    tmp.write_text(path.name + "\n", encoding="utf-8")
    os.replace(tmp, marker)
    if previous is not None and previous != path and previous.exists():
        previous.unlink()
    return path
