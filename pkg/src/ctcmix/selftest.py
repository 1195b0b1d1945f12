"""Property suites shared by the ``selftest`` command and the test-suite.

Each suite returns a :class:`SuiteResult` holding the number of cases and
the worst error seen, compared against the suite's tolerance.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ops
from .autodiff.gradcheck import check_gradients, numerical_grad, relative_error
from .autodiff.recurrent import lstm
from .autodiff.tensor import Tensor, backward, no_grad
from .ctc import batch_ctc, brute_force_grad, ctc_brute_force, ctc_loss, ctc_loss_grad, is_feasible
from .mixup import MixPlan, MixupConfig, arcsine_cdf, loss_terms, mix_batch, mixup_batch_loss, sample_lambda
from .model.network import GatedConvRecognizer, NetworkConfig, gated_block

GradFn = Callable[[np.ndarray, Sequence[int]], Tuple[float, np.ndarray]]


@dataclass
class SuiteResult:
    name: str
    cases: int
    max_error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error <= self.tolerance)

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (f"{status}  {self.name:<16} cases={self.cases:<5d} max_error={self.max_error:.3e} "
                f"tol={self.tolerance:.0e} time={self.seconds:.1f}s{extra}")


# -- random instances -------------------------------------------------------

def random_instance(rng: np.random.Generator, max_frames: int = 8, max_symbols: int = 4,
                    max_label: int = 4) -> Tuple[np.ndarray, List[int]]:
    """A random strictly positive probability sequence and a label it can align."""
    while True:
        T = int(rng.integers(1, max_frames + 1))
        C = int(rng.integers(1, max_symbols + 1))
        S = int(rng.integers(0, max_label + 1))
        labels = rng.integers(0, C, size=S).tolist()
        if is_feasible(labels, T):
            break
    y = ops.softmax_array(rng.normal(0.0, 1.5, size=(T, C + 1)), axis=1)
    return y, labels


def random_labels(rng: np.random.Generator, n: int, classes: int, frames: int, max_len: int = 3) -> List[List[int]]:
    out = []
    while len(out) < n:
        lab = rng.integers(0, classes, size=int(rng.integers(1, max_len + 1))).tolist()
        if is_feasible(lab, frames):
            out.append(lab)
    return out


# -- CTC --------------------------------------------------------------------

def ctc_oracle_suite(cases: int = 1000, seed: int = 0) -> SuiteResult:
    """max |loss_dp - loss_bruteforce| over random instances."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        y, labels = random_instance(rng)
        dp, _ = ctc_loss_grad(y, labels)
        worst = max(worst, abs(dp - ctc_brute_force(y, labels)))
    return SuiteResult("ctc-oracle", cases, worst, 1e-9, time.perf_counter() - start,
                       "max |loss_dp - loss_bruteforce|")


def ctc_gradient_suite(cases: int = 100, seed: int = 1, grad_fn: GradFn = ctc_loss_grad,
                       floor: float = 1e-3) -> SuiteResult:
    """Analytic probability gradients against central differences of the brute-force loss."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(cases):
        y, labels = random_instance(rng, max_frames=6, max_symbols=3, max_label=3)
        _, grad = grad_fn(y, labels)
        num = brute_force_grad(y, labels, step=1e-6)
        worst = max(worst, float(relative_error(grad, num, floor).max()))
    return SuiteResult("ctc-gradient", cases, worst, 1e-5, time.perf_counter() - start)


# -- operator gradients -----------------------------------------------------

def op_gradient_suite(seed: int = 2, floor: float = 1e-4) -> SuiteResult:
    rng = np.random.default_rng(seed)
    start = time.perf_counter()

    def t(*shape, scale=1.0):
        return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)

    cases: Dict[str, Tuple[Callable, list]] = {}
    for name, stride, pad in (("conv-same", (1, 1), "same"), ("conv-strided", (2, 1), "valid")):
        cases[name] = (lambda x, k, b, s=stride, p=pad: ops.conv2d(x, k, b, s, p),
                       [t(2, 3, 6, 5), t(4, 3, 3, 2, scale=0.5), t(4)])
    cases["gated-block"] = (lambda x, k, b: gated_block(x, k, b), [t(2, 3, 4, 5), t(3, 3, 3, 3, scale=0.5), t(3)])
    cases["max-pool"] = (lambda x: ops.max_pool2d(x, (2, 2)), [t(2, 2, 4, 6)])
    cases["tiling"] = (lambda x: ops.space_to_depth(x, (2, 2)), [t(2, 1, 4, 6)])
    cases["linear"] = (lambda x, w, b: ops.linear(x, w, b), [t(2, 3, 4), t(4, 5), t(5)])
    cases["sigmoid"] = (ops.sigmoid, [t(3, 4, scale=3.0)])
    cases["tanh"] = (ops.tanh, [t(3, 4, scale=2.0)])
    cases["softmax"] = (lambda x: ops.softmax(x, axis=-1), [t(3, 5)])
    cases["log-softmax"] = (lambda x: ops.log_softmax(x, axis=-1), [t(3, 5)])
    cases["lstm"] = (lambda x, a, r, b: lstm(x, a, r, b), [t(2, 5, 3), t(3, 8, scale=0.5), t(2, 8, scale=0.5), t(8)])
    cases["lstm-reverse"] = (lambda x, a, r, b: lstm(x, a, r, b, reverse=True),
                             [t(2, 5, 3), t(3, 8, scale=0.5), t(2, 8, scale=0.5), t(8)])
    plan = MixPlan.pair(np.array([1, 2, 0]), np.array([0.3, 0.8, 0.55]), 0)
    cases["mix-batch"] = (lambda h: mix_batch(h, plan), [t(3, 2, 4)])
    worst, worst_name = 0.0, ""
    for name, (fn, inputs) in cases.items():
        with no_grad():
            probe = rng.normal(size=fn(*inputs).shape)
        err = check_gradients(lambda *xs: ops.sum(ops.mul_const(fn(*xs), probe)), inputs, step=1e-6, floor=floor)
        if err > worst:
            worst, worst_name = err, name
    return SuiteResult("op-gradients", len(cases), worst, 1e-5, time.perf_counter() - start,
                       f"worst op: {worst_name}" if worst_name else "")


# -- samplers ---------------------------------------------------------------

def ks_statistic(samples: np.ndarray, cdf: Callable[[np.ndarray], np.ndarray]) -> float:
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    f = cdf(x)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))


def sampler_suite(draws: int = 100_000, seed: int = 3) -> SuiteResult:
    """KS distance of Beta(0.5) draws to the arcsine CDF, plus uniform range and mean checks."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    ks = ks_statistic(sample_lambda(rng, MixupConfig(distribution="beta", alpha=0.5), draws), arcsine_cdf)
    u = sample_lambda(rng, MixupConfig(distribution="uniform", low=0.1, high=0.9), draws)
    # range violations are reported as an error of 1 so the suite fails outright
    range_err = 0.0 if (u.min() >= 0.1 and u.max() <= 0.9) else 1.0
    mean_err = abs(float(u.mean()) - 0.5)
    worst = max(ks, range_err, mean_err)
    return SuiteResult("samplers", 2 * draws, worst, 0.01, time.perf_counter() - start,
                       f"ks={ks:.4f} uniform_mean_dev={mean_err:.4f}")


# -- mixup linearity ----------------------------------------------------------

def _grads(model: GatedConvRecognizer) -> Dict[str, np.ndarray]:
    return {k: p.grad.copy() for k, p in model.params.items()}


def _norm_rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b)) / scale


def mixup_linearity_error(model: GatedConvRecognizer, images: np.ndarray, labels: List[List[int]],
                          plan: MixPlan) -> float:
    """Compare the mixed loss and gradients with the weighted sum of two single-label runs.

    The plan must use a single ratio for the whole batch and every label must
    fit the frame count.  Returns the largest relative error, normwise per
    parameter tensor and absolute-relative for the loss.
    """
    lam = plan.lambdas
    if not np.all(lam == lam[0]):
        raise ValueError("linearity check needs one shared ratio per plan")
    lam = float(lam[0])
    B = len(labels)

    model.zero_grad()
    mixed = mixup_batch_loss(model.forward(images, plan), labels, plan)[0]
    backward(mixed)
    g_mix = _grads(model)

    singles = []
    for targets in (labels, [labels[j] for j in plan.pairing]):
        model.zero_grad()
        loss = ctc_loss(model.forward(images, plan), [(targets, np.ones(B))], normalizer=B)
        backward(loss)
        singles.append((float(loss.data), _grads(model)))
    (l_i, g_i), (l_j, g_j) = singles

    expected = lam * l_i + (1.0 - lam) * l_j
    worst = abs(float(mixed.data) - expected) / max(abs(expected), 1e-300)
    for k in g_mix:
        worst = max(worst, _norm_rel(g_mix[k], lam * g_i[k] + (1.0 - lam) * g_j[k]))
    return worst


def tiny_model(alphabet: str = "abcdefghij", seed: int = 0, dropout: float = 0.0) -> GatedConvRecognizer:
    return GatedConvRecognizer(NetworkConfig.from_preset("tiny", alphabet, dropout=dropout), seed=seed)


def mixup_linearity_suite(draws: int = 21, seed: int = 4, batch: int = 4, width: int = 64) -> SuiteResult:
    """Random (ratio, pairing, depth) draws cycling through every mixable depth."""
    from .mixup import derangement

    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    model = tiny_model(seed=seed)
    frames = model.output_length(width)
    depths = model.mix_depths()
    worst = 0.0
    for d in range(draws):
        images = rng.normal(size=(batch, 1, model.config.height, width))
        labels = random_labels(rng, batch, len(model.config.alphabet), frames)
        plan = MixPlan.pair(derangement(batch, rng), np.full(batch, rng.random()), depths[d % len(depths)])
        worst = max(worst, mixup_linearity_error(model, images, labels, plan))
    return SuiteResult("mixup-linearity", draws, worst, 1e-10, time.perf_counter() - start,
                       f"depths {depths}")


# -- full model -------------------------------------------------------------

def tile_plan(plan: MixPlan, copies: int) -> MixPlan:
    """The same plan applied independently to ``copies`` stacked replicas of a batch."""
    B = plan.batch_size
    partners = [np.concatenate([p + k * B for k in range(copies)]) for p in plan.partners]
    return MixPlan(partners, np.tile(plan.weights, (copies, 1)), plan.depth)


def model_gradcheck(model: GatedConvRecognizer, images: np.ndarray, labels: List[List[int]],
                    plan: Optional[MixPlan] = None, step: float = 1e-4, floor: float = 1e-6,
                    names: Optional[Sequence[str]] = None, chunk: int = 64) -> Tuple[float, str, int]:
    """Central-difference check of every parameter entry of ``model`` (no dropout).

    A perturbed loss reruns only the owning layer; up to ``chunk`` perturbed
    copies of its output are stacked along the batch axis and pushed through
    the remaining layers together, with the plan tiled per copy.
    Returns ``(worst relative error, parameter name, entries checked)``.
    """
    plan = plan if plan is not None else MixPlan.identity(len(labels))
    B = len(labels)
    x = Tensor(np.asarray(images, dtype=np.float64))
    model.zero_grad()
    trace: Dict[int, Tensor] = {}
    loss = mixup_batch_loss(model.run_layers(x, plan, trace=trace), labels, plan)[0]
    backward(loss)
    n_layers = len(model.config.layers)

    def losses(layer: int, outs: List[np.ndarray]) -> np.ndarray:
        k = len(outs)
        tiled = tile_plan(plan, k)
        stacked = Tensor(np.concatenate(outs, axis=0))
        with no_grad():
            logits = stacked if layer == n_layers else model.run_layers(stacked, tiled, start=layer + 1)
            if layer == n_layers:
                P = model.params
                logits = ops.linear(stacked, P["output.weight"], P["output.bias"])
            log_probs = ops.log_softmax_array(logits.data, axis=-1)
        terms, active = loss_terms(labels * k, tiled, log_probs.shape[1])
        total = np.zeros(k * B)
        for targets, weights in terms:
            per, _, feasible = batch_ctc(log_probs, targets, need_grad=False)
            total += weights * np.where(feasible, per, 0.0)
        return total.reshape(k, B).sum(axis=1) / active[:B].sum()

    worst, worst_name, checked = 0.0, "", 0
    for name in (names if names is not None else list(model.params)):
        p = model.params[name]
        layer = model.layer_of(name)
        cached = Tensor(trace[layer].data)

        def layer_out() -> np.ndarray:
            with no_grad():
                if layer == n_layers:
                    return cached.data
                return model.run_layers(cached, plan, start=layer, stop=layer + 1).data

        flat = p.data.reshape(-1)
        num = np.zeros(flat.size)
        for lo in range(0, flat.size, chunk):
            idx = range(lo, min(lo + chunk, flat.size))
            outs = []
            for i in idx:
                orig = flat[i]
                for delta in (step, -step):
                    flat[i] = orig + delta
                    outs.append(layer_out())
                flat[i] = orig
            if layer == n_layers:
                # the projection is the perturbed layer itself
                vals = []
                for i in idx:
                    orig = flat[i]
                    for delta in (step, -step):
                        flat[i] = orig + delta
                        vals.append(losses(layer, [cached.data])[0])
                    flat[i] = orig
                vals = np.array(vals)
            else:
                vals = losses(layer, outs)
            num[lo:lo + len(idx)] = (vals[0::2] - vals[1::2]) / (2.0 * step)
        checked += p.size
        err = float(relative_error(p.grad.reshape(-1), num, floor).max())
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name, checked


# -- entry point --------------------------------------------------------------

def run_selftest(quick: bool = False, grad_fn: GradFn = ctc_loss_grad,
                 progress: Optional[Callable[[SuiteResult], None]] = None) -> List[SuiteResult]:
    plan = [
        lambda: ctc_oracle_suite(200 if quick else 1000),
        lambda: ctc_gradient_suite(20 if quick else 100, grad_fn=grad_fn),
        lambda: op_gradient_suite(),
        lambda: sampler_suite(),
        lambda: mixup_linearity_suite(6 if quick else 21),
    ]
    results = []
    for run in plan:
        res = run()
        results.append(res)
        if progress is not None:
            progress(res)
    return results
