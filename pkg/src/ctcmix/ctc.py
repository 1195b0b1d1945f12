"""Connectionist Temporal Classification: loss, gradients, decoding, and an
enumeration oracle.

Class index convention: user symbols occupy ``0 .. C-1`` and the blank is the
last class ``C``.  Probability matrices are (T, C+1).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff.ops import log_softmax_array, softmax_array
from .autodiff.tensor import Tensor, is_grad_enabled, record
from .errors import InfeasibleAlignment, ShapeMismatch, TooLarge

NEG_INF = -np.inf


@dataclass(frozen=True)
class Vocabulary:
    """Ordered character set; the blank is appended implicitly."""

    symbols: Tuple[str, ...]

    def __init__(self, symbols: Iterable[str]):
        symbols = tuple(symbols)
        if len(set(symbols)) != len(symbols):
            dupes = sorted({s for s in symbols if symbols.count(s) > 1})
            raise ValueError(f"duplicate vocabulary symbols: {dupes}")
        if not symbols:
            raise ValueError("vocabulary must not be empty")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def blank(self) -> int:
        return len(self.symbols)

    @property
    def num_classes(self) -> int:
        return len(self.symbols) + 1

    def __len__(self):
        return len(self.symbols)

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.array([self._index[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, indices: Sequence[int]) -> str:
        return "".join(self.symbols[i] for i in indices)

    def __contains__(self, ch):
        return ch in self._index


def expand_targets(labels: Sequence[int], blank: int) -> np.ndarray:
    """Interleave blanks: [-, l1, -, l2, ..., lS, -] of length 2S+1."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full(2 * len(labels) + 1, blank, dtype=np.int64)
    out[1::2] = labels
    return out


def min_frames(labels: Sequence[int]) -> int:
    """Shortest alignment length: one frame per label plus a blank between repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def is_feasible(labels: Sequence[int], frames: int) -> bool:
    return frames >= min_frames(labels)


def _lse(*arrays):
    m = arrays[0]
    for a in arrays[1:]:
        m = np.maximum(m, a)
    safe = np.where(np.isfinite(m), m, 0.0)
    acc = np.zeros_like(safe)
    for a in arrays:
        acc = acc + np.exp(a - safe)
    with np.errstate(divide="ignore"):
        return safe + np.log(acc)


def _forward_backward(log_probs: np.ndarray, targets: Sequence[Sequence[int]], need_grad: bool = True):
    """Batched log-space alpha/beta recursion.

    With ``need_grad`` false only the alpha pass runs and the two gradient
    outputs are None.

    Parameters
    ----------
    log_probs : (B, T, M) per-frame log-probabilities; blank is class M-1.
    targets : B label sequences.

    Returns
    -------
    log_p : (B,) log-likelihood of each target (-inf when infeasible).
    occupancy : (B, T, M) posterior class occupancy sum_s alpha*beta / P.
    grad_prob : (B, T, M) derivative of -log P with respect to the probabilities.
    """
    B, T, M = log_probs.shape
    blank = M - 1
    ext = [expand_targets(t, blank) for t in targets]
    lengths = np.array([len(e) for e in ext])
    S = int(lengths.max())
    lab = np.full((B, S), blank, dtype=np.int64)
    for b, e in enumerate(ext):
        lab[b, : len(e)] = e
    valid = np.arange(S)[None, :] < lengths[:, None]
    # transition s-2 -> s allowed on labels that differ from the previous label
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (lab[:, 2:] != blank) & (lab[:, 2:] != lab[:, :-2])

    emit = np.take_along_axis(log_probs, np.broadcast_to(lab[:, None, :], (B, T, S)), axis=2)
    emit = np.where(valid[:, None, :], emit, NEG_INF)

    # alpha_pre[t, s]: mass arriving in state s at t, before emitting frame t
    alpha_pre = np.full((B, T, S), NEG_INF)
    alpha = np.full((B, T, S), NEG_INF)
    alpha_pre[:, 0, 0] = 0.0
    alpha_pre[:, 0, 1:2] = np.where(lengths[:, None] > 1, 0.0, NEG_INF)
    alpha[:, 0] = alpha_pre[:, 0] + emit[:, 0]
    ninf_col = np.full((B, 1), NEG_INF)
    ninf_two = np.full((B, 2), NEG_INF)
    for t in range(1, T):
        prev = alpha[:, t - 1]
        stay = prev
        step = np.concatenate([ninf_col, prev[:, :-1]], axis=1)
        jump = np.where(skip, np.concatenate([ninf_two, prev[:, :-2]], axis=1)[:, :S], NEG_INF)
        alpha_pre[:, t] = _lse(stay, step, jump)
        alpha[:, t] = alpha_pre[:, t] + emit[:, t]

    rows = np.arange(B)
    has_label = lengths > 1
    last = alpha[rows, T - 1, lengths - 1]
    second = np.where(has_label, alpha[rows, T - 1, np.maximum(lengths - 2, 0)], NEG_INF)
    log_p = _lse(last, second)
    if not need_grad:
        return log_p, None, None

    # beta[t, s]: mass of completing the path after frame t from state s
    beta = np.full((B, T, S), NEG_INF)
    beta[rows, T - 1, lengths - 1] = 0.0
    beta[rows[has_label], T - 1, lengths[has_label] - 2] = 0.0
    skip_next = np.zeros((B, S), dtype=bool)
    skip_next[:, :-2] = skip[:, 2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[:, t + 1] + emit[:, t + 1]
        stay = nxt
        step = np.concatenate([nxt[:, 1:], ninf_col], axis=1)
        jump = np.where(skip_next, np.concatenate([nxt[:, 2:], ninf_two], axis=1)[:, :S], NEG_INF)
        beta[:, t] = np.where(valid, _lse(stay, step, jump), NEG_INF)

    feasible = np.isfinite(log_p)
    lp = np.where(feasible, log_p, 0.0)[:, None, None]
    with np.errstate(invalid="ignore", over="ignore"):
        state_occ = np.exp(alpha + beta - lp)
        state_grad = np.exp(alpha_pre + beta - lp)
    state_occ[~feasible] = 0.0
    state_grad[~feasible] = 0.0
    onehot = np.zeros((B, S, M))
    np.put_along_axis(onehot, lab[:, :, None], 1.0, axis=2)
    onehot *= valid[:, :, None]
    occupancy = np.einsum("bts,bsm->btm", state_occ, onehot)
    grad_prob = -np.einsum("bts,bsm->btm", state_grad, onehot)
    return log_p, occupancy, grad_prob


def _check_probs(y: np.ndarray, labels: Sequence[int]):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] < 1:
        raise ShapeMismatch(f"expected a (T, C+1) probability matrix with T >= 1, got {y.shape}")
    blank = y.shape[1] - 1
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= blank):
        raise ValueError(f"label indices must lie in [0, {blank})")
    return y, labels


def ctc_loss_grad(y, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of ``labels`` under per-frame probabilities ``y``.

    Returns ``(loss, grad)`` where ``grad[t, c]`` is the derivative of the loss
    with respect to the probability ``y[t, c]``.  Use
    :func:`ctc_loss_grad_logits` for the gradient with respect to scores.
    """
    y, labels = _check_probs(y, labels)
    T = y.shape[0]
    if not is_feasible(labels, T):
        raise InfeasibleAlignment(f"{len(labels)} labels need {min_frames(labels)} frames, have {T}")
    with np.errstate(divide="ignore"):
        log_y = np.log(y)
    log_p, _, grad = _forward_backward(log_y[None], [labels])
    if not np.isfinite(log_p[0]):
        raise InfeasibleAlignment("every alignment has zero probability")
    return 0.0 - float(log_p[0]), grad[0]


def ctc_loss_grad_logits(logits, labels: Sequence[int]) -> Tuple[float, np.ndarray]:
    """Loss and gradient with respect to pre-softmax scores (softmax over classes)."""
    logits = np.asarray(logits, dtype=np.float64)
    _check_probs(logits, labels)
    T = logits.shape[0]
    if not is_feasible(labels, T):
        raise InfeasibleAlignment(f"{len(labels)} labels need {min_frames(labels)} frames, have {T}")
    log_p, occ, _ = _forward_backward(log_softmax_array(logits)[None], [np.asarray(labels)])
    return 0.0 - float(log_p[0]), softmax_array(logits) - occ[0]


def batch_ctc(log_probs: np.ndarray, targets: Sequence[Sequence[int]], need_grad: bool = True):
    """Per-sample losses and logit gradients for a (B, T, M) log-softmax batch.

    Infeasible samples get loss ``inf`` and a zero gradient (None without
    ``need_grad``).
    """
    log_p, occ, _ = _forward_backward(log_probs, targets, need_grad)
    feasible = np.isfinite(log_p)
    if not need_grad:
        return -log_p, None, feasible
    grad = np.exp(log_probs) - occ
    grad[~feasible] = 0.0
    return -log_p, grad, feasible


def ctc_loss(logits: Tensor, terms: Sequence[Tuple[Sequence[Sequence[int]], np.ndarray]],
             normalizer: Optional[float] = None) -> Tensor:
    """Differentiable weighted CTC loss over a (B, T, M) logit batch.

    Each term is ``(targets, weights)`` with one target and one weight per
    sample; the result is ``sum_terms sum_b w_b * L(y_b, target_b) / normalizer``
    (normalizer defaults to the batch size).  Samples whose weight is exactly
    zero are still evaluated so that the arithmetic is identical whatever the
    weights are; infeasible targets must carry weight 0.
    """
    B, T, M = logits.shape
    log_probs = log_softmax_array(logits.data, axis=2)
    norm = float(B if normalizer is None else normalizer)
    need_grad = is_grad_enabled() and logits.requires_grad
    total = np.zeros(B)
    grad = np.zeros((B, T, M)) if need_grad else None
    for targets, weights in terms:
        weights = np.asarray(weights, dtype=np.float64)
        if len(targets) != B or weights.shape != (B,):
            raise ShapeMismatch("each CTC term needs one target and one weight per sample")
        losses, g, feasible = batch_ctc(log_probs, targets, need_grad)
        if np.any(~feasible & (weights != 0.0)):
            raise InfeasibleAlignment("an infeasible target carries a nonzero weight")
        losses = np.where(feasible, losses, 0.0)
        total = total + weights * losses
        if need_grad:
            grad = grad + weights[:, None, None] * g
    loss = np.array(total.sum() / norm)

    def back(g_out):
        return (grad * (float(g_out) / norm),)

    return record("ctc_loss", (logits,), loss, back)


# -- decoding ---------------------------------------------------------------

def collapse(path: Sequence[int], blank: int) -> List[int]:
    """Merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for p in path:
        p = int(p)
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return out


def greedy_decode(y, vocab: Optional[Vocabulary] = None):
    """Best-path decoding of a (T, C+1) score or probability matrix.

    ``argmax`` already breaks ties toward the lowest class index.  Returns the
    label indices, or the decoded string when ``vocab`` is given.
    """
    y = np.asarray(y)
    labels = collapse(y.argmax(axis=1), y.shape[1] - 1)
    return vocab.decode(labels) if vocab is not None else labels


# -- enumeration oracle -----------------------------------------------------

MAX_ORACLE_FRAMES = 10
MAX_ORACLE_SYMBOLS = 5
_CHUNK_ROWS = 1 << 18


def _path_chunks(M: int, T: int):
    """Yield (N, T) arrays covering all M**T paths in lexicographic order."""
    tail = min(T, max(1, int(np.floor(np.log(_CHUNK_ROWS) / np.log(M)))))
    head = T - tail
    grid = np.indices((M,) * tail).reshape(tail, -1).T
    for prefix in itertools.product(range(M), repeat=head):
        block = np.empty((grid.shape[0], T), dtype=np.int64)
        block[:, :head] = prefix
        block[:, head:] = grid
        yield block


def _collapsed_match(paths: np.ndarray, labels: np.ndarray, blank: int) -> np.ndarray:
    """Boolean mask of rows whose collapse equals ``labels``."""
    N, T = paths.shape
    prev = np.concatenate([np.full((N, 1), -1), paths[:, :-1]], axis=1)
    keep = (paths != blank) & (paths != prev)
    count = keep.sum(axis=1)
    match = count == len(labels)
    # position of each kept symbol within the collapsed string
    pos = np.cumsum(keep, axis=1) - 1
    for t in range(T):
        k = keep[:, t] & match
        if not k.any():
            continue
        p = pos[k, t]
        ok = labels[np.minimum(p, max(len(labels) - 1, 0))] == paths[k, t] if len(labels) else np.zeros(k.sum(), bool)
        idx = np.flatnonzero(k)
        match[idx[~ok]] = False
    return match


def ctc_brute_force(y, labels: Sequence[int]) -> float:
    """CTC loss by summing the probability of every length-T path whose
    collapse equals ``labels``.  Exponential; limited to T <= 10, C <= 5."""
    y, labels = _check_probs(y, labels)
    T, M = y.shape
    if T > MAX_ORACLE_FRAMES or M - 1 > MAX_ORACLE_SYMBOLS:
        raise TooLarge(f"enumeration limited to T <= {MAX_ORACLE_FRAMES}, C <= {MAX_ORACLE_SYMBOLS}; got T={T}, C={M - 1}")
    total = 0.0
    cols = np.arange(T)
    for paths in _path_chunks(M, T):
        match = _collapsed_match(paths, labels, M - 1)
        if match.any():
            total += float(np.prod(y[cols, paths[match]], axis=1).sum())
    if total <= 0.0:
        raise InfeasibleAlignment("no alignment with nonzero probability")
    return -float(np.log(total))


def brute_force_grad(y, labels: Sequence[int], step: float = 1e-6) -> np.ndarray:
    """Central finite differences of :func:`ctc_brute_force` in each probability."""
    y = np.array(y, dtype=np.float64)
    g = np.zeros_like(y)
    for idx in np.ndindex(*y.shape):
        orig = y[idx]
        y[idx] = orig + step
        up = ctc_brute_force(y, labels)
        y[idx] = orig - step
        down = ctc_brute_force(y, labels)
        y[idx] = orig
        g[idx] = (up - down) / (2.0 * step)
    return g
