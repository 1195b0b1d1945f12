"""Width-bucketed mini-batches padded with white."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..ctc import Vocabulary
from ..errors import EmptyDataset
from .preprocess import WHITE, normalize, pad_to_width, rescale
from .render import LineImage


@dataclass
class Batch:
    images: np.ndarray  # (B, 1, H, W_pad), normalized after white padding
    widths: np.ndarray  # rescaled widths before padding
    labels: List[np.ndarray]
    transcripts: List[str]
    bucket_id: int
    indices: np.ndarray  # positions in the source dataset

    def __len__(self):
        return len(self.transcripts)

    @property
    def padded_width(self) -> int:
        return self.images.shape[-1]


class LineDataset:
    """Line images with their rescaled pixel arrays cached at one height."""

    def __init__(self, lines: Sequence[LineImage], vocabulary: Vocabulary, height: int):
        self.lines = list(lines)
        self.vocabulary = vocabulary
        self.height = int(height)
        self.scaled = [rescale(l.pixels, self.height) for l in self.lines]
        self.labels = [vocabulary.encode(l.transcript) for l in self.lines]

    def __len__(self):
        return len(self.lines)

    @property
    def widths(self) -> np.ndarray:
        return np.array([a.shape[1] for a in self.scaled])

    @property
    def transcripts(self) -> List[str]:
        return [l.transcript for l in self.lines]

    def subset(self, indices) -> "LineDataset":
        out = LineDataset.__new__(LineDataset)
        out.vocabulary, out.height = self.vocabulary, self.height
        out.lines = [self.lines[i] for i in indices]
        out.scaled = [self.scaled[i] for i in indices]
        out.labels = [self.labels[i] for i in indices]
        return out

    def batch(self, indices, bucket_id: int = 0) -> Batch:
        indices = np.asarray(indices, dtype=np.int64)
        arrays = [self.scaled[i] for i in indices]
        width = max(a.shape[1] for a in arrays)
        stack = np.stack([normalize(pad_to_width(a, width, WHITE)) for a in arrays])[:, None]
        return Batch(
            images=stack,
            widths=np.array([a.shape[1] for a in arrays]),
            labels=[self.labels[i] for i in indices],
            transcripts=[self.lines[i].transcript for i in indices],
            bucket_id=bucket_id,
            indices=indices,
        )

    def padded_pixels(self, indices) -> np.ndarray:
        """Pre-normalization padded stack, for inspecting the padding."""
        arrays = [self.scaled[i] for i in indices]
        width = max(a.shape[1] for a in arrays)
        return np.stack([pad_to_width(a, width, WHITE) for a in arrays])


def make_buckets(widths: Sequence[int], batch_size: int) -> List[np.ndarray]:
    """Sort by width (stable) and cut into consecutive runs; the last run may be short."""
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    widths = np.asarray(widths)
    if widths.size == 0:
        raise EmptyDataset("cannot batch an empty dataset")
    order = np.argsort(widths, kind="stable")
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def bucket_batches(dataset: LineDataset, batch_size: int, rng: Optional[np.random.Generator] = None) -> List[Batch]:
    """All batches of one epoch; membership is fixed, only their order is shuffled."""
    buckets = make_buckets(dataset.widths, batch_size)
    order = rng.permutation(len(buckets)) if rng is not None else np.arange(len(buckets))
    return [dataset.batch(buckets[i], bucket_id=int(i)) for i in order]
