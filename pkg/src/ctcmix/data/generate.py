"""Seeded synthetic corpora."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from ..ctc import Vocabulary
from .glyphs import GLYPHS
from .io import read_keyvalue, save_split, write_keyvalue
from .render import LineImage, RenderStyle, random_text, render_line

DEFAULT_ALPHABET = "abcdefghij"


@dataclass
class GenConfig:
    lines: int = 1000
    val_fraction: float = 0.1
    alphabet: str = DEFAULT_ALPHABET
    min_len: int = 1
    max_len: int = 12
    seed: int = 0
    style: RenderStyle = field(default_factory=RenderStyle)

    def validate(self):
        Vocabulary(self.alphabet)
        unknown = sorted(set(self.alphabet) - set(GLYPHS))
        if unknown:
            raise ValueError(f"no glyphs for {unknown}")
        if self.lines < 2:
            raise ValueError("need at least 2 lines")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")

    @property
    def n_valid(self) -> int:
        return min(self.lines - 1, max(1, int(round(self.lines * self.val_fraction))))

    def items(self) -> dict:
        out = {"lines": self.lines, "val_fraction": self.val_fraction, "alphabet": self.alphabet,
               "min_len": self.min_len, "max_len": self.max_len, "seed": self.seed}
        for line in self.style.to_lines():
            k, v = line.split("=", 1)
            out[k] = v
        return out

    @classmethod
    def from_items(cls, items: dict) -> "GenConfig":
        style = RenderStyle.from_items({k[6:]: v for k, v in items.items() if k.startswith("style.")})
        return cls(lines=int(items["lines"]), val_fraction=float(items["val_fraction"]),
                   alphabet=items["alphabet"], min_len=int(items["min_len"]), max_len=int(items["max_len"]),
                   seed=int(items["seed"]), style=style)


def generate_lines(config: GenConfig) -> Tuple[List[LineImage], List[LineImage]]:
    """Render ``config.lines`` lines; each line has its own seeded stream."""
    config.validate()
    lines = []
    for i in range(config.lines):
        rng = np.random.default_rng([config.seed, i])
        text = random_text(rng, config.alphabet, config.min_len, config.max_len)
        lines.append(render_line(text, rng, config.style))
    n_train = config.lines - config.n_valid
    return lines[:n_train], lines[n_train:]


def write_dataset(directory, config: GenConfig):
    directory = Path(directory)
    train, valid = generate_lines(config)
    directory.mkdir(parents=True, exist_ok=True)
    save_split(directory / "train", train)
    save_split(directory / "valid", valid)
    write_keyvalue(directory / "genconfig.txt", config.items())
    return train, valid


def read_genconfig(directory) -> GenConfig:
    return GenConfig.from_items(read_keyvalue(Path(directory) / "genconfig.txt"))
