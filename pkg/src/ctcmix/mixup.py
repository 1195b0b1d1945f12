"""Manifold mixup for CTC training.

A mini-batch plan picks one mixing depth, a derangement pairing each sample
with a partner, and one mixing ratio per sample.  Features at the chosen depth
are interpolated and the loss becomes the ratio-weighted sum of CTC losses
against both transcripts.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Tensor, record
from .ctc import ctc_loss, ctc_loss_grad, is_feasible
from .errors import BatchTooSmall, InfeasibleAlignment, InvalidConfig, ShapeMismatch

NO_FUSION = None


@dataclass
class MixupConfig:
    enabled: bool = False
    distribution: str = "beta"  # "beta" or "uniform"
    alpha: float = 0.5
    low: float = 0.0
    high: float = 1.0
    positions: Tuple[int, ...] = (0, 4, 8)
    n_way: int = 2
    multiply_gradients: bool = True
    allow_no_fusion: bool = False
    # None draws "no fusion" as one more equiprobable outcome next to the depths
    no_fusion_prob: Optional[float] = None
    # pins every ratio to this value; used by endpoint checks
    force_lambda: Optional[float] = None

    def __post_init__(self):
        self.positions = tuple(int(k) for k in self.positions)
        self.validate()

    def validate(self):
        if self.distribution not in ("beta", "uniform"):
            raise InvalidConfig(f"unknown mixup distribution {self.distribution!r}")
        if self.alpha <= 0:
            raise InvalidConfig("mixup alpha must be positive")
        if not 0.0 <= self.low < self.high <= 1.0:
            raise InvalidConfig(f"uniform bounds need 0 <= lo < hi <= 1, got {self.low}, {self.high}")
        if self.enabled and not self.positions:
            raise InvalidConfig("mixup needs at least one position")
        if self.n_way not in (2, 3):
            raise InvalidConfig("n_way must be 2 or 3")
        if self.no_fusion_prob is not None and not 0.0 <= self.no_fusion_prob < 1.0:
            raise InvalidConfig("no_fusion_prob must lie in [0, 1)")
        if self.force_lambda is not None and not 0.0 <= self.force_lambda <= 1.0:
            raise InvalidConfig("force_lambda must lie in [0, 1]")


@dataclass
class MixPlan:
    """Per-batch mixing record.

    ``partners[m]`` is the permutation feeding mixing slot ``m`` (slot 0 is the
    identity) and ``weights[:, m]`` its per-sample convex weight.
    """

    partners: List[np.ndarray]
    weights: np.ndarray
    depth: Optional[int]
    skipped: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.skipped is None:
            self.skipped = np.zeros(len(self.partners[0]), dtype=bool)

    @property
    def pairing(self) -> np.ndarray:
        return self.partners[1] if len(self.partners) > 1 else self.partners[0]

    @property
    def lambdas(self) -> np.ndarray:
        return self.weights[:, 0]

    @property
    def batch_size(self) -> int:
        return len(self.partners[0])

    @property
    def is_mixing(self) -> bool:
        return self.depth is not NO_FUSION and len(self.partners) > 1

    @classmethod
    def identity(cls, batch_size: int) -> "MixPlan":
        return cls([np.arange(batch_size)], np.ones((batch_size, 1)), NO_FUSION)

    @classmethod
    def pair(cls, pairing, lambdas, depth) -> "MixPlan":
        pairing = np.asarray(pairing, dtype=np.intp)
        lam = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), pairing.shape)
        return cls([np.arange(len(pairing)), pairing], np.stack([lam, 1.0 - lam], axis=1), depth)


# -- ratio sampling ---------------------------------------------------------

def arcsine_from_uniform(u):
    """Inverse CDF of Beta(0.5, 0.5): sin^2(pi u / 2)."""
    return np.sin(np.pi * np.asarray(u) / 2.0) ** 2


def arcsine_cdf(x):
    return 2.0 / np.pi * np.arcsin(np.sqrt(np.clip(x, 0.0, 1.0)))


def sample_lambda(rng: np.random.Generator, config: MixupConfig, size=None):
    if config.force_lambda is not None:
        return np.full(size, config.force_lambda) if size is not None else float(config.force_lambda)
    if config.distribution == "uniform":
        out = config.low + (config.high - config.low) * rng.random(size)
    elif config.alpha == 0.5:
        out = arcsine_from_uniform(rng.random(size))
    else:
        a = rng.gamma(config.alpha, size=size)
        b = rng.gamma(config.alpha, size=size)
        out = a / (a + b)
    return out if size is not None else float(out)


def _dirichlet_weights(rng, config: MixupConfig, size: int) -> np.ndarray:
    if config.force_lambda is not None:
        lam = config.force_lambda
        return np.tile([lam, (1 - lam) / 2, (1 - lam) / 2], (size, 1))
    g = rng.gamma(config.alpha, size=(size, 3))
    return g / g.sum(axis=1, keepdims=True)


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation without fixed points (rejection sampling)."""
    if n < 2:
        raise BatchTooSmall("a derangement needs at least two elements")
    while True:
        p = rng.permutation(n)
        if np.all(p != np.arange(n)):
            return p


def make_plan(batch_size: int, rng: np.random.Generator, config: MixupConfig) -> MixPlan:
    if not config.enabled:
        return MixPlan.identity(batch_size)
    if batch_size < 2:
        raise BatchTooSmall(f"mixup needs batch size >= 2, got {batch_size}")
    positions = list(config.positions)
    depth = positions[rng.integers(len(positions))] if len(positions) > 1 else positions[0]
    if config.allow_no_fusion:
        p_none = config.no_fusion_prob if config.no_fusion_prob is not None else 1.0 / (len(positions) + 1)
        if rng.random() < p_none:
            depth = NO_FUSION
    if config.n_way == 2:
        pairing = derangement(batch_size, rng)
        lam = sample_lambda(rng, config, batch_size)
        plan = MixPlan.pair(pairing, lam, depth)
    else:
        partners = [np.arange(batch_size), derangement(batch_size, rng), derangement(batch_size, rng)]
        plan = MixPlan(partners, _dirichlet_weights(rng, config, batch_size), depth)
    if depth is NO_FUSION:
        return MixPlan.identity(batch_size)
    return plan


# -- feature interpolation --------------------------------------------------

def interpolate_features(h_i: Tensor, h_j: Tensor, lam: float) -> Tensor:
    """lam * h_i + (1 - lam) * h_j, differentiable in both inputs."""
    if h_i.shape != h_j.shape:
        raise ShapeMismatch(f"cannot mix features of shape {h_i.shape} and {h_j.shape}")
    return ops.weighted_sum([h_i, h_j], [lam, 1.0 - lam])


def interpolate_three(h1: Tensor, h2: Tensor, h3: Tensor, weights: Sequence[float]) -> Tensor:
    if not (h1.shape == h2.shape == h3.shape):
        raise ShapeMismatch("three-way mixing needs equal shapes")
    return ops.weighted_sum([h1, h2, h3], weights)


def mix_batch(h: Tensor, plan: MixPlan) -> Tensor:
    """Mix every sample with its partners: out[b] = sum_m w[b, m] * h[partners[m][b]]."""
    if h.shape[0] != plan.batch_size:
        raise ShapeMismatch(f"plan for {plan.batch_size} samples, features for {h.shape[0]}")
    w = plan.weights
    bshape = (h.shape[0],) + (1,) * (h.ndim - 1)
    data = h.data
    out = w[:, 0].reshape(bshape) * data[plan.partners[0]]
    for m in range(1, len(plan.partners)):
        out = out + w[:, m].reshape(bshape) * data[plan.partners[m]]

    def back(g):
        gh = np.zeros_like(data)
        for m, p in enumerate(plan.partners):
            np.add.at(gh, p, w[:, m].reshape(bshape) * g)
        return (gh,)

    return record("mix_batch", (h,), out, back)


# -- losses -----------------------------------------------------------------

def loss_terms(targets: Sequence[Sequence[int]], plan: MixPlan, frames: int,
               multiply_gradients: bool = True):
    """CTC terms (targets, weights) for a planned batch, with infeasibility fallback.

    A partner whose transcript cannot be aligned in ``frames`` frames is dropped
    and the remaining feasible transcripts share weight 1 (the sample is marked
    skipped).  Samples with no feasible transcript get zero weight everywhere.

    Returns ``(terms, active)`` where ``active`` flags samples contributing loss.
    """
    B = plan.batch_size
    slots = len(plan.partners) if plan.is_mixing else 1
    weights = plan.weights[:, :slots].copy() if plan.is_mixing else np.ones((B, 1))
    if not multiply_gradients and plan.is_mixing:
        weights = np.ones_like(weights)
    ok = np.array([[is_feasible(targets[plan.partners[m][b]], frames) for m in range(slots)] for b in range(B)])
    skipped = ~ok.all(axis=1)
    for b in np.flatnonzero(skipped):
        weights[b] = ok[b] / max(ok[b].sum(), 1)
    plan.skipped = skipped & ok.any(axis=1) if slots > 1 else np.zeros(B, dtype=bool)
    terms = [([targets[i] for i in plan.partners[m]], weights[:, m]) for m in range(slots)]
    return terms, ok.any(axis=1)


def mixup_batch_loss(logits: Tensor, targets: Sequence[Sequence[int]], plan: MixPlan,
                     multiply_gradients: bool = True) -> Tuple[Tensor, np.ndarray]:
    """Weighted multi-transcript CTC loss averaged over contributing samples."""
    terms, active = loss_terms(targets, plan, logits.shape[1], multiply_gradients)
    n = int(active.sum())
    if n == 0:
        raise InfeasibleAlignment("no sample in the batch has an alignable transcript")
    return ctc_loss(logits, terms, normalizer=n), active


def mixup_ctc_loss(y, l_i, l_j, lam: float, multiply_gradients: bool = True):
    """Mixed CTC loss of one probability sequence against two transcripts.

    Returns ``(loss, grad, skipped)`` with ``grad`` taken with respect to the
    probabilities.  Without gradient multiplication the two losses are summed
    unweighted.  If exactly one transcript cannot be aligned, the other is used
    alone with weight 1 and ``skipped`` is True.
    """
    y = np.asarray(y, dtype=np.float64)
    T = y.shape[0]
    fi, fj = is_feasible(l_i, T), is_feasible(l_j, T)
    if not (fi or fj):
        raise InfeasibleAlignment("neither transcript fits the frame count")
    if not (fi and fj):
        loss, grad = ctc_loss_grad(y, l_i if fi else l_j)
        return loss, grad, True
    wi, wj = (lam, 1.0 - lam) if multiply_gradients else (1.0, 1.0)
    loss_i, grad_i = ctc_loss_grad(y, l_i)
    loss_j, grad_j = ctc_loss_grad(y, l_j)
    return wi * loss_i + wj * loss_j, wi * grad_i + wj * grad_j, False


def mixup_crossentropy_loss(y_hat, y_i, y_j, lam: float) -> float:
    """Cross-entropy against the interpolated one-hot target."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    target = lam * np.asarray(y_i, dtype=np.float64) + (1.0 - lam) * np.asarray(y_j, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(target > 0, target * np.log(y_hat), 0.0)
    return float(-terms.sum())
