"""ctcmix command line: gen-data, train, eval, selftest, ablate.

Settings resolve as defaults < ``--config FILE`` < ``CTCMIX_<KEY>``
environment variables < flags.  Exit codes: 0 success, 1 validation or
property failure, 2 usage error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .config import (ENV_PREFIX, Option, env_overrides, format_value, parse_bool, parse_int_list,
                     parse_optional_float, read_config_file, resolve, write_resolved)
from .ctc import Vocabulary
from .data.batching import LineDataset
from .data.generate import GenConfig, read_genconfig, write_dataset
from .data.io import load_split
from .errors import ConfigMismatch, CTCMixError, InvalidConfig
from .mixup import MixupConfig
from .model import checkpoint
from .model.network import NetworkConfig
from .trainer import TrainConfig, evaluate, train

log = logging.getLogger("ctcmix")

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "none"):
        return None
    return int(text)


def _optional_path(text):
    return None if text is None or str(text).strip().lower() in ("", "none") else str(text)


def parse_dist(text) -> str:
    """``beta`` or ``uniform:lo:hi`` (plain ``uniform`` means [0, 1])."""
    value = str(text).strip().lower()
    if value == "beta":
        return value
    if value == "uniform":
        return "uniform:0:1"
    parts = value.split(":")
    if len(parts) == 3 and parts[0] == "uniform":
        lo, hi = float(parts[1]), float(parts[2])
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError("uniform bounds need 0 <= lo < hi <= 1")
        return value
    raise ValueError("expected beta or uniform:lo:hi")


def parse_subsets(text) -> Tuple[str, ...]:
    out = []
    parts = text if isinstance(text, (tuple, list)) else str(text).split(",")
    for part in parts:
        part = part.strip().lower()
        if not part:
            continue
        if part != "all":
            if part.endswith("%"):
                if not 0 < float(part[:-1]) <= 100:
                    raise ValueError(f"percentage out of range: {part}")
            elif int(part) < 1:
                raise ValueError(f"subset size must be positive: {part}")
        out.append(part)
    if not out:
        raise ValueError("no subsets given")
    return tuple(out)


GEN_OPTIONS = [
    Option("out", _optional_path, None, "dataset directory to create"),
    Option("lines", int, 1000, "total number of lines"),
    Option("val_fraction", float, 0.1, "fraction of lines in the validation split"),
    Option("alphabet", str, "abcdefghij", "characters to draw from"),
    Option("min_len", int, 1, "shortest transcript"),
    Option("max_len", int, 12, "longest transcript"),
    Option("seed", int, 0, "generator seed"),
]

TRAIN_OPTIONS = [
    Option("data", _optional_path, None, "dataset directory (train/ and valid/ splits)"),
    Option("out", _optional_path, None, "output directory for logs and checkpoints"),
    Option("preset", str, "tiny", "network size", choices=("paper", "tiny")),
    Option("mixup", parse_bool, False, "manifold mixup on|off"),
    Option("mixup_alpha", float, 0.5, "Beta(alpha, alpha) parameter of the mixing ratio"),
    Option("mixup_positions", parse_int_list, (0, 4, 8), "comma-separated mixing depths (0 = input)"),
    Option("mixup_dist", parse_dist, "beta", "ratio distribution: beta or uniform:lo:hi"),
    Option("n_way", int, 2, "number of samples fused", choices=("2", "3")),
    Option("grad_multiply", parse_bool, True, "weight each transcript's loss by its ratio on|off"),
    Option("allow_no_fusion", parse_bool, False, "also draw unmixed batches on|off"),
    Option("no_fusion_prob", parse_optional_float, None, "probability of an unmixed batch (none: uniform)"),
    Option("dropout", float, 0.5, "dropout rate"),
    Option("lr", float, 4e-4, "RMSProp learning rate"),
    Option("batch", int, 8, "batch size"),
    Option("patience", int, 20, "epochs without improvement before stopping"),
    Option("max_epochs", int, 300, "epoch limit"),
    Option("clip_norm", float, 10.0, "global gradient-norm clip (0 = off)"),
    Option("target_cer", parse_optional_float, None, "stop once validation CER reaches this"),
    Option("seed", int, 0, "run seed"),
    Option("train_subset", _optional_int, None, "train on the first N lines after a seeded shuffle"),
]

EVAL_OPTIONS = [
    Option("data", _optional_path, None, "dataset directory"),
    Option("checkpoint", _optional_path, None, "checkpoint file or best.ckpt marker"),
    Option("split", str, "valid", "split to evaluate", choices=("train", "valid")),
    Option("out", _optional_path, None, "report directory (default: next to the checkpoint)"),
    Option("batch", int, 8, "batch size"),
]

SELFTEST_OPTIONS = [
    Option("quick", parse_bool, False, "fewer cases per suite on|off"),
    Option("out", _optional_path, None, "directory for resolved.cfg and the result table"),
]

ABLATE_AXES = ("position", "nway", "gradmult", "dist", "datasize", "dropout")
ABLATE_OPTIONS = [o for o in TRAIN_OPTIONS if o.key not in ("mixup", "train_subset")] + [
    Option("axis", str, None, "ablation axis", choices=ABLATE_AXES),
    Option("seeds", int, 3, "runs per arm (seeds seed..seed+K-1)"),
    Option("subsets", parse_subsets, ("all", "50%", "25%"), "datasize arms: all, P% or N lines"),
]

COMMANDS: Dict[str, Tuple[List[Option], str]] = {
    "gen-data": (GEN_OPTIONS, "render a synthetic line dataset"),
    "train": (TRAIN_OPTIONS, "train a recognizer"),
    "eval": (EVAL_OPTIONS, "evaluate a checkpoint"),
    "selftest": (SELFTEST_OPTIONS, "run the property suites"),
    "ablate": (ABLATE_OPTIONS, "run an ablation sweep over several seeds"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ctcmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ctcmix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, (options, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key=value settings file")
        for o in options:
            extra = f" [default: {format_value(o.default)}]" if o.default is not None else ""
            p.add_argument(o.flag, dest=o.key, default=argparse.SUPPRESS, metavar=o.metavar or o.key.upper(),
                           help=o.help + extra)
    return parser


def resolve_settings(command: str, args: argparse.Namespace, environ=None) -> Dict:
    options = COMMANDS[command][0]
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    config_path = getattr(args, "config", None)
    if config_path is None and environ is not None:
        config_path = environ.get(ENV_PREFIX + "CONFIG")
    file_items = read_config_file(config_path) if config_path else {}
    every = {o.key for opts, _ in COMMANDS.values() for o in opts}
    return resolve(options, file_items, env_overrides(options, environ, every), flags)


def _require(settings: Dict, *keys: str):
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None and not isinstance(exc, (UsageError, StageError, KeyboardInterrupt)):
            raise StageError(self.name, exc) from exc
        return False


# -- gen-data -----------------------------------------------------------------

def cmd_gen_data(s: Dict) -> int:
    _require(s, "out")
    cfg = GenConfig(lines=s["lines"], val_fraction=s["val_fraction"], alphabet=s["alphabet"],
                    min_len=s["min_len"], max_len=s["max_len"], seed=s["seed"])
    try:
        cfg.validate()
    except (ValueError, CTCMixError) as exc:
        raise UsageError(str(exc)) from None
    with _Stage("generate dataset"):
        train_lines, valid_lines = write_dataset(s["out"], cfg)
        # the directory itself is left out so regenerated datasets compare byte for byte
        write_resolved(Path(s["out"]) / "resolved.cfg", "gen-data", {k: v for k, v in s.items() if k != "out"})
    print(f"train={len(train_lines)} valid={len(valid_lines)}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------

def load_splits(data_dir) -> Tuple[list, list, str]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {data_dir}")
    train_lines = load_split(data_dir / "train")
    valid_lines = load_split(data_dir / "valid")
    if (data_dir / "genconfig.txt").exists():
        alphabet = read_genconfig(data_dir).alphabet
    else:
        alphabet = "".join(sorted({ch for l in train_lines + valid_lines for ch in l.transcript}))
    return train_lines, valid_lines, alphabet


def take_subset(lines: list, n: Optional[int], seed: int) -> list:
    """First ``n`` lines after a seeded shuffle (all lines when ``n`` is None)."""
    if n is None:
        return list(lines)
    if n < 1 or n > len(lines):
        raise InvalidConfig(f"train subset {n} must lie in [1, {len(lines)}]")
    order = np.random.default_rng(seed).permutation(len(lines))
    return [lines[i] for i in order[:n]]


def mixup_config(s: Dict, enabled: bool) -> MixupConfig:
    dist = s["mixup_dist"]
    low, high = 0.0, 1.0
    if dist.startswith("uniform"):
        _, lo, hi = dist.split(":")
        low, high, dist = float(lo), float(hi), "uniform"
    return MixupConfig(enabled=enabled, distribution=dist, alpha=s["mixup_alpha"], low=low, high=high,
                       positions=s["mixup_positions"], n_way=s["n_way"], multiply_gradients=s["grad_multiply"],
                       allow_no_fusion=s["allow_no_fusion"], no_fusion_prob=s["no_fusion_prob"])


def run_training(s: Dict, out_dir: Path, enabled: bool, subset: Optional[int], verbose: bool = False):
    with _Stage("load data"):
        train_lines, valid_lines, alphabet = load_splits(s["data"])
        train_lines = take_subset(train_lines, subset, s["seed"])
    with _Stage("configure"):
        net = NetworkConfig.from_preset(s["preset"], alphabet, dropout=s["dropout"])
        tc = TrainConfig(lr=s["lr"], batch_size=s["batch"], patience=s["patience"], max_epochs=s["max_epochs"],
                         seed=s["seed"], clip_norm=s["clip_norm"], mixup=mixup_config(s, enabled),
                         target_cer=s["target_cer"])
        tc.validate()
    with _Stage("prepare data"):
        vocab = Vocabulary(alphabet)
        train_set = LineDataset(train_lines, vocab, net.height)
        valid_set = LineDataset(valid_lines, vocab, net.height)
    on_epoch = None
    if verbose:
        on_epoch = lambda r: print(f"epoch={r.epoch} train_loss={r.train_loss:.4f} val_loss={r.val_loss:.4f} "
                                   f"val_cer={r.val_cer:.4f}", file=sys.stderr, flush=True)
    with _Stage("train"):
        return train(train_set, valid_set, net, tc, out_dir=out_dir, on_epoch=on_epoch)


def cmd_train(s: Dict, verbose: bool = False) -> int:
    _require(s, "data", "out")
    out = Path(s["out"])
    with _Stage("write config"):
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(out / "resolved.cfg", "train", s)
    result = run_training(s, out, s["mixup"], s["train_subset"], verbose)
    final = result.log.records[-1]
    print(f"best_epoch={result.best_epoch} cer={result.best_cer:.6f} val_loss={result.best_loss:.6f} "
          f"stopped_epoch={result.stopped_epoch} final_val_loss={final.val_loss:.6f}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------------

def cmd_eval(s: Dict) -> int:
    _require(s, "data", "checkpoint")
    ckpt = Path(s["checkpoint"])
    out = Path(s["out"]) if s["out"] else ckpt.parent / f"eval-{s['split']}"
    with _Stage("load checkpoint"):
        if not ckpt.exists():
            raise FileNotFoundError(f"checkpoint not found: {ckpt}")
        model = checkpoint.load(ckpt)
    with _Stage("load data"):
        lines = load_split(Path(s["data"]) / s["split"])
    with _Stage("evaluate"):
        alphabet = model.config.alphabet
        unknown = sorted({ch for l in lines for ch in l.transcript} - set(alphabet))
        if unknown:
            raise ConfigMismatch(f"transcripts use characters outside the checkpoint alphabet: {unknown}")
        report = evaluate(LineDataset(lines, Vocabulary(alphabet), model.config.height), model, s["batch"])
    with _Stage("write report"):
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.tsv").write_text(report.to_tsv(), encoding="utf-8")
        write_resolved(out / "resolved.cfg", "eval", s)
    print(report.summary())
    return EXIT_OK


# -- selftest -------------------------------------------------------------------

def cmd_selftest(s: Dict, grad_fn=None) -> int:
    from .selftest import run_selftest

    kwargs = {"grad_fn": grad_fn} if grad_fn is not None else {}
    results = run_selftest(quick=s["quick"], progress=lambda r: print(r.row(), flush=True), **kwargs)
    if s["out"]:
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(out / "resolved.cfg", "selftest", s)
        (out / "selftest.txt").write_text("".join(r.row() + "\n" for r in results), encoding="utf-8")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failing suites: " + ", ".join(failed))
        return EXIT_FAILED
    print(f"all {len(results)} suites passed")
    return EXIT_OK


# -- ablate -----------------------------------------------------------------------

@dataclass
class Arm:
    name: str
    mixup: bool
    overrides: Dict
    subset: Optional[str] = None


def ablation_arms(axis: str, s: Dict) -> List[Arm]:
    if axis == "position":
        return [Arm("none", False, {}), Arm("input", True, {"mixup_positions": (0,)}),
                Arm("conv4", True, {"mixup_positions": (4,)}), Arm("conv8", True, {"mixup_positions": (8,)}),
                Arm("random-0-4-8", True, {"mixup_positions": (0, 4, 8)}),
                Arm("random-or-none", True, {"mixup_positions": (0, 4, 8), "allow_no_fusion": True})]
    if axis == "nway":
        return [Arm("none", False, {}), Arm("2-way", True, {"n_way": 2}), Arm("3-way", True, {"n_way": 3})]
    if axis == "gradmult":
        return [Arm("with", True, {"grad_multiply": True}), Arm("without", True, {"grad_multiply": False})]
    if axis == "dist":
        return [Arm("uniform-0-1", True, {"mixup_dist": "uniform:0:1"}),
                Arm("uniform-0.1-0.9", True, {"mixup_dist": "uniform:0.1:0.9"}),
                Arm("beta-0.5", True, {"mixup_dist": "beta", "mixup_alpha": 0.5}),
                Arm("beta-2", True, {"mixup_dist": "beta", "mixup_alpha": 2.0})]
    if axis == "datasize":
        return [Arm(f"{sub}/{'mixup' if on else 'none'}", on, {}, sub)
                for sub in s["subsets"] for on in (False, True)]
    if axis == "dropout":
        rate = s["dropout"] if s["dropout"] > 0 else 0.5
        return [Arm(f"dropout-{d:g}/{'mixup' if on else 'none'}", on, {"dropout": d})
                for d in (0.0, rate) for on in (False, True)]
    raise UsageError(f"unknown axis {axis!r}")


def subset_size(spec: Optional[str], total: int) -> Optional[int]:
    if spec is None or spec == "all":
        return None
    if spec.endswith("%"):
        return max(1, int(round(total * float(spec[:-1]) / 100.0)))
    return int(spec)


ARM_COLUMNS = ("axis", "arm", "runs", "failed", "cer_mean", "cer_min", "cer_max", "cer_median",
               "val_loss_mean", "final_val_loss_mean", "best_epoch_mean")
RUN_COLUMNS = ("arm", "seed", "train_lines", "best_epoch", "stopped_epoch", "cer", "val_loss",
               "final_val_loss", "seconds", "error")


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def aggregate(axis: str, arm: str, runs: List[Dict]) -> Dict:
    ok = [r for r in runs if not r["error"]]
    row = {"axis": axis, "arm": arm, "runs": len(runs), "failed": len(runs) - len(ok)}
    if ok:
        cers = [r["cer"] for r in ok]
        row.update(cer_mean=float(np.mean(cers)), cer_min=float(min(cers)), cer_max=float(max(cers)),
                   cer_median=float(statistics.median(cers)),
                   val_loss_mean=float(np.mean([r["val_loss"] for r in ok])),
                   final_val_loss_mean=float(np.mean([r["final_val_loss"] for r in ok])),
                   best_epoch_mean=float(np.mean([r["best_epoch"] for r in ok])))
    else:
        row.update({c: "nan" for c in ARM_COLUMNS[4:]})
    return row


def cmd_ablate(s: Dict, verbose: bool = False) -> int:
    _require(s, "data", "out", "axis")
    if s["seeds"] < 1:
        raise UsageError("--seeds must be at least 1")
    out = Path(s["out"])
    with _Stage("write config"):
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(out / "resolved.cfg", "ablate", s)
    with _Stage("load data"):
        n_train = len(load_splits(s["data"])[0])
    axis = s["axis"]
    rows, run_rows = [], []
    for arm in ablation_arms(axis, s):
        runs = []
        for k in range(s["seeds"]):
            seed = s["seed"] + k
            settings = dict(s, seed=seed, **arm.overrides)
            subset = subset_size(arm.subset, n_train)
            run_dir = out / axis / arm.name.replace("/", "-").replace("%", "pct") / f"seed-{seed}"
            started = time.perf_counter()
            rec = {"arm": arm.name, "seed": seed, "train_lines": subset or n_train, "best_epoch": "",
                   "stopped_epoch": "", "cer": "", "val_loss": "", "final_val_loss": "", "error": ""}
            try:
                result = run_training(settings, run_dir, arm.mixup, subset, verbose)
                rec.update(best_epoch=result.best_epoch, stopped_epoch=result.stopped_epoch,
                           cer=result.best_cer, val_loss=result.best_loss,
                           final_val_loss=result.log.records[-1].val_loss)
            except StageError as exc:
                # one failing arm must not abort the sweep
                rec["error"] = str(exc).replace("\t", " ").replace("\n", " ")
                print(f"arm {arm.name} seed {seed} failed: {exc}", file=sys.stderr)
            rec["seconds"] = time.perf_counter() - started
            runs.append(rec)
            run_rows.append(rec)
            _write_tsv(out / f"ablate-{axis}-runs.tsv", RUN_COLUMNS, run_rows)
        rows.append(aggregate(axis, arm.name, runs))
        _write_tsv(out / f"ablate-{axis}.tsv", ARM_COLUMNS, rows)
    sys.stdout.write((out / f"ablate-{axis}.tsv").read_text(encoding="utf-8"))
    return EXIT_FAILED if any(r["failed"] for r in rows) else EXIT_OK


def _write_tsv(path: Path, columns: Sequence[str], rows: List[Dict]):
    lines = ["\t".join(columns)]
    lines.extend("\t".join(_fmt(r.get(c, "")) for c in columns) for r in rows)
    tmp = path.with_suffix(".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)


def read_tsv(path) -> List[Dict[str, str]]:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    header = text[0].split("\t")
    return [dict(zip(header, line.split("\t"))) for line in text[1:] if line]


# -- entry point --------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None, environ=None) -> int:
    import os

    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        settings = resolve_settings(args.command, args, environ)
    except (UsageError, InvalidConfig, OSError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers: Dict[str, Callable[[], int]] = {
        "gen-data": lambda: cmd_gen_data(settings),
        "train": lambda: cmd_train(settings, args.verbose),
        "eval": lambda: cmd_eval(settings),
        "selftest": lambda: cmd_selftest(settings),
        "ablate": lambda: cmd_ablate(settings, args.verbose),
    }
    try:
        return handlers[args.command]()
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"error in stage '{exc.stage}': {type(exc.exc).__name__}: {exc.exc}", file=sys.stderr)
        if isinstance(exc.exc, ConfigMismatch):
            return EXIT_FAILED
        if isinstance(exc.exc, InvalidConfig):
            return EXIT_USAGE
        return EXIT_RUNTIME


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
