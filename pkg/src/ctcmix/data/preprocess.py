"""Isotropic rescaling and per-image standardization."""
from __future__ import annotations

import numpy as np

from .render import LineImage, sample_bilinear

VARIANCE_FLOOR = 1e-6
WHITE = 255.0


def scaled_width(height: int, width: int, target_height: int) -> int:
    return max(1, int(round(width * target_height / height)))


def rescale(pixels: np.ndarray, target_height: int) -> np.ndarray:
    """Bilinear resize to ``target_height`` keeping the aspect ratio (float output)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    H, W = pixels.shape
    if H == target_height:
        return pixels.copy()
    Wt = scaled_width(H, W, target_height)
    ys = (np.arange(target_height) + 0.5) * (H / target_height) - 0.5
    xs = (np.arange(Wt) + 0.5) * (W / Wt) - 0.5
    return sample_bilinear(pixels, ys[:, None], xs[None, :], clamp=True)


def normalize(arr: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance; near-constant images map to zeros."""
    arr = np.asarray(arr, dtype=np.float64)
    std = np.sqrt(max(arr.var(), VARIANCE_FLOOR))
    return (arr - arr.mean()) / std


def preprocess(img: LineImage, target_height: int) -> np.ndarray:
    return normalize(rescale(img.pixels, target_height))


def pad_to_width(arr: np.ndarray, width: int, value: float = WHITE) -> np.ndarray:
    H, W = arr.shape
    if W > width:
        raise ValueError(f"cannot pad width {W} down to {width}")
    out = np.full((H, width), value, dtype=np.float64)
    out[:, :W] = arr
    return out
