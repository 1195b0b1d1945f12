"""Synthetic handwriting-like line images from the bitmap font."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Tuple

import numpy as np

from ..errors import UnknownGlyph
from .glyphs import GLYPH_HEIGHT, GLYPH_WIDTH, GLYPHS


@dataclass
class LineImage:
    pixels: np.ndarray  # (H, W) uint8, 0 = ink, 255 = white
    transcript: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError(f"line image needs a non-empty 2-D pixel array, got {self.pixels.shape}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class RenderStyle:
    height: int = 32
    glyph_scale: float = 3.0  # pixels per font row
    hscale: Tuple[float, float] = (0.8, 1.4)
    shear: Tuple[float, float] = (-0.3, 0.3)
    jitter: float = 2.0  # max vertical offset per character, pixels
    spacing: Tuple[int, int] = (2, 6)
    margin: Tuple[int, int] = (6, 10)
    noise_sigma: float = 8.0
    background: Tuple[int, int] = (200, 255)
    ink: Tuple[int, int] = (0, 60)

    def to_lines(self) -> list:
        out = []
        for k, v in asdict(self).items():
            out.append(f"style.{k}=" + (",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else str(v)))
        return out

    @classmethod
    def from_items(cls, items: dict) -> "RenderStyle":
        """Inverse of :meth:`to_lines`, given the ``style.`` prefix already stripped."""
        defaults = cls()
        kwargs = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            default = getattr(defaults, f.name)
            if isinstance(default, tuple):
                parts = items[f.name].split(",")
                kwargs[f.name] = tuple(type(d)(float(p)) for d, p in zip(default, parts))
            else:
                kwargs[f.name] = type(default)(float(items[f.name]))
        return cls(**kwargs)


def sample_bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Bilinear lookup at fractional (row, col) positions; outside is 0 unless clamped."""
    H, W = img.shape
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = ys - y0
    fx = xs - x0
    out = np.zeros(np.broadcast(ys, xs).shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + dy, x0 + dx
            if clamp:
                vals = img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)]
            else:
                inside = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
                vals = np.where(inside, img[np.clip(yy, 0, H - 1), np.clip(xx, 0, W - 1)], 0.0)
            out = out + wy * wx * vals
    return out


def render_line(text: str, rng: np.random.Generator, style: RenderStyle = RenderStyle()) -> LineImage:
    """Render ``text`` with per-character random scale, slant, jitter and spacing.

    Global draws (background, ink, margins) precede the per-character draws,
    and pixel noise comes last, so a longer text rendered from the same seed
    extends the shorter one's layout.
    """
    if not text:
        raise ValueError("cannot render an empty line")
    missing = sorted({ch for ch in text if ch not in GLYPHS})
    if missing:
        raise UnknownGlyph(f"no glyph for {missing}")
    H, s = style.height, style.glyph_scale
    glyph_h = GLYPH_HEIGHT * s
    bg = rng.integers(style.background[0], style.background[1] + 1)
    ink = rng.integers(style.ink[0], style.ink[1] + 1)
    left = int(rng.integers(style.margin[0], style.margin[1] + 1))
    right = int(rng.integers(style.margin[0], style.margin[1] + 1))

    placed = []
    x = left
    for n, ch in enumerate(text):
        if n:
            x += int(rng.integers(style.spacing[0], style.spacing[1] + 1))
        hs = rng.uniform(*style.hscale)
        shear = rng.uniform(*style.shear)
        dy = rng.uniform(-style.jitter, style.jitter)
        width = max(1, int(round(GLYPH_WIDTH * s * hs)))
        placed.append((ch, x, width, shear, (H - glyph_h) / 2.0 + dy))
        x += width
    W = x + right

    coverage = np.zeros((H, W))
    rows = np.arange(H)[:, None] + 0.5
    overhang = int(np.ceil(max(abs(v) for v in style.shear) * H / 2.0)) + 1
    for ch, x0, width, shear, top in placed:
        lo, hi = max(0, x0 - overhang), min(W, x0 + width + overhang)
        cols = np.arange(lo, hi)[None, :] + 0.5
        centre = top + glyph_h / 2.0
        gx = (cols - x0 - shear * (centre - rows)) / (width / GLYPH_WIDTH) - 0.5
        gy = (rows - top) / s - 0.5
        cov = sample_bilinear(GLYPHS[ch], np.broadcast_to(gy, gx.shape), gx)
        coverage[:, lo:hi] = np.maximum(coverage[:, lo:hi], cov)

    img = bg + (ink - float(bg)) * coverage
    img = img + rng.normal(0.0, style.noise_sigma, size=img.shape)
    return LineImage(np.clip(np.rint(img), 0, 255).astype(np.uint8), text)


def random_text(rng: np.random.Generator, alphabet: str, min_len: int, max_len: int) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), size=n))
