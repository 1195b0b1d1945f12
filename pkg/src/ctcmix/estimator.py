"""scikit-learn compatible wrappers around preprocessing and training."""
from __future__ import annotations

from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from .ctc import Vocabulary, greedy_decode
from .data.batching import LineDataset, make_buckets
from .data.preprocess import preprocess
from .data.render import LineImage
from .mixup import MixupConfig
from .model.network import NetworkConfig
from .trainer import TrainConfig, train
from .metrics import cer


def check_line_images(X) -> List[np.ndarray]:
    """Validate a sequence of 2-D grayscale images and return uint8 arrays."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("expected a sequence of 2-D images, got a single 2-D array")
    out = []
    for i, img in enumerate(X):
        arr = img.pixels if isinstance(img, LineImage) else np.asarray(img)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ValueError(f"image {i} must be a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255) or not np.all(np.isfinite(arr)):
                raise ValueError(f"image {i} has values outside [0, 255]")
            arr = np.rint(arr).astype(np.uint8)
        out.append(arr)
    if not out:
        raise ValueError("no images given")
    return out


def check_transcripts(y, alphabet: str, n: int) -> List[str]:
    y = [str(t) for t in y]
    if len(y) != n:
        raise ValueError(f"{len(y)} transcripts for {n} images")
    allowed = set(alphabet)
    for i, t in enumerate(y):
        bad = sorted(set(t) - allowed)
        if bad:
            raise ValueError(f"transcript {i} uses characters outside the alphabet: {bad}")
    return y


class LinePreprocessor(TransformerMixin, BaseEstimator):
    """Rescale to a fixed height and standardize each line image."""

    def __init__(self, height: int = 32):
        self.height = height

    def fit(self, X, y=None):
        check_line_images(X)
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> List[np.ndarray]:
        check_is_fitted(self, "n_features_in_")
        return [preprocess(LineImage(a, ""), self.height) for a in check_line_images(X)]


class CTCLineRecognizer(BaseEstimator):
    """Gated convolutional recognizer trained with CTC and optional manifold mixup.

    ``fit`` takes line images (any height; rescaled internally) and their
    transcripts.  ``score`` returns ``1 - CER``.
    """

    def __init__(self, alphabet: str = "abcdefghij", preset: str = "tiny", dropout: float = 0.5,
                 mixup: bool = False, mixup_alpha: float = 0.5, mixup_positions=(0, 4, 8),
                 n_way: int = 2, grad_multiply: bool = True, lr: float = 4e-4, batch_size: int = 8,
                 patience: int = 20, max_epochs: int = 300, seed: int = 0,
                 validation_fraction: float = 0.1, target_cer: Optional[float] = None):
        self.alphabet = alphabet
        self.preset = preset
        self.dropout = dropout
        self.mixup = mixup
        self.mixup_alpha = mixup_alpha
        self.mixup_positions = mixup_positions
        self.n_way = n_way
        self.grad_multiply = grad_multiply
        self.lr = lr
        self.batch_size = batch_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.seed = seed
        self.validation_fraction = validation_fraction
        self.target_cer = target_cer

    def _configs(self):
        net = NetworkConfig.from_preset(self.preset, self.alphabet, dropout=self.dropout)
        mix = MixupConfig(enabled=self.mixup, alpha=self.mixup_alpha, positions=tuple(self.mixup_positions),
                          n_way=self.n_way, multiply_gradients=self.grad_multiply)
        tc = TrainConfig(lr=self.lr, batch_size=self.batch_size, patience=self.patience,
                         max_epochs=self.max_epochs, seed=self.seed, mixup=mix, target_cer=self.target_cer)
        return net, tc

    def _dataset(self, images, transcripts, height) -> LineDataset:
        lines = [LineImage(a, t) for a, t in zip(images, transcripts)]
        return LineDataset(lines, Vocabulary(self.alphabet), height)

    def fit(self, X, y, X_val=None, y_val=None):
        images = check_line_images(X)
        y = check_transcripts(y, self.alphabet, len(images))
        net, tc = self._configs()
        if X_val is None:
            n_val = max(1, int(round(len(images) * self.validation_fraction)))
            if n_val >= len(images):
                raise ValueError("not enough images to hold out a validation split")
            order = np.random.default_rng(self.seed).permutation(len(images))
            val_idx, tr_idx = order[:n_val], order[n_val:]
            X_val, y_val = [images[i] for i in val_idx], [y[i] for i in val_idx]
            images, y = [images[i] for i in tr_idx], [y[i] for i in tr_idx]
        else:
            X_val = check_line_images(X_val)
            y_val = check_transcripts(y_val, self.alphabet, len(X_val))
        result = train(self._dataset(images, y, net.height), self._dataset(X_val, y_val, net.height), net, tc)
        self.model_ = result.model
        self.log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.n_features_in_ = 1
        return self

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, X) -> List[np.ndarray]:
        """Per-frame class distributions of each line (blank is the last column).

        Lines are batched by width as during validation, so a line's frames
        span the padded width of its batch.
        """
        self._require_fitted()
        images = check_line_images(X)
        ds = self._dataset(images, [""] * len(images), self.model_.config.height)
        out: List[Optional[np.ndarray]] = [None] * len(images)
        for idx in make_buckets(ds.widths, self.batch_size):
            probs = self.model_.predict_proba(ds.batch(idx).images)
            for i, p in zip(idx, probs):
                out[i] = p
        return out

    def predict(self, X) -> List[str]:
        vocab = Vocabulary(self.alphabet)
        return [greedy_decode(p, vocab) for p in self.predict_proba(X)]

    def score(self, X, y) -> float:
        preds = self.predict(X)
        return 1.0 - cer(preds, check_transcripts(y, self.alphabet, len(preds))).cer
