"""Differentiable primitives used by the recognition network.

Image-shaped tensors are laid out (batch, depth, height, width); sequence
tensors are (batch, time, depth).
"""
from __future__ import annotations

from typing import Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import EmptyOutput, ShapeMismatch
from .tensor import Tensor, as_tensor, record

Scalar = Union[int, float]


def _pair(v) -> Tuple[int, int]:
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        if np.ndim(b) != 0:
            b = Tensor(b)
        else:
            c = float(b)
            return record("add_scalar", (a,), a.data + c, lambda g: (g,))
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            return scale(a, b)
        b = Tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: Scalar) -> Tensor:
    c = float(c)
    return record("scale", (a,), a.data * c, lambda g: (g * c,))


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a non-differentiable array broadcastable to ``a``."""
    c = np.asarray(c, dtype=np.float64)
    out = a.data * c
    if out.shape != a.shape:
        raise ShapeMismatch(f"mul_const: {c.shape} does not broadcast onto {a.shape}")
    return record("mul_const", (a,), out, lambda g: (g * c,))


def sum(a: Tensor) -> Tensor:
    shape = a.shape
    return record("sum", (a,), np.array(a.data.sum()), lambda g: (np.broadcast_to(g, shape),))


def mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return record("mean", (a,), np.array(a.data.mean()), lambda g: (np.broadcast_to(g / n, shape),))


def weighted_sum(tensors: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Return sum_i w_i * t_i for same-shape tensors."""
    tensors = list(tensors)
    weights = [float(w) for w in weights]
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeMismatch(f"weighted_sum: {t.shape} vs {shape}")
    out = weights[0] * tensors[0].data
    for w, t in zip(weights[1:], tensors[1:]):
        out = out + w * t.data
    return record("weighted_sum", tensors, out, lambda g: tuple(w * g for w in weights))


# -- activations ------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and is a single pass
    return 0.5 + 0.5 * np.tanh(0.5 * x)


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return record("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return record("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


def identity(a: Tensor) -> Tensor:
    return a


ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "identity": identity}


def softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_array(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    s = softmax_array(a.data, axis)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return record("softmax", (a,), s, back)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ls = log_softmax_array(a.data, axis)

    def back(g):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", (a,), ls, back)


# -- shape manipulation -----------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record("transpose", (a,), a.data.transpose(axes), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record("concat", tensors, out, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Gather along the batch axis; backward scatter-adds."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return record("take_rows", (a,), a.data[index], back)


def space_to_depth(a: Tensor, block=(2, 2)) -> Tensor:
    """Tile each bh x bw neighbourhood into depth; trailing rows/cols are cropped."""
    bh, bw = _pair(block)
    B, D, H, W = a.shape
    Ho, Wo = H // bh, W // bw
    if Ho <= 0 or Wo <= 0:
        raise EmptyOutput(f"tiling {bh}x{bw} of {H}x{W} is empty")
    x = a.data[:, :, : Ho * bh, : Wo * bw]
    out = x.reshape(B, D, Ho, bh, Wo, bw).transpose(0, 1, 3, 5, 2, 4).reshape(B, D * bh * bw, Ho, Wo)

    def back(g):
        gx = np.zeros((B, D, H, W))
        gx[:, :, : Ho * bh, : Wo * bw] = (
            g.reshape(B, D, bh, bw, Ho, Wo).transpose(0, 1, 4, 2, 5, 3).reshape(B, D, Ho * bh, Wo * bw)
        )
        return (gx,)

    return record("space_to_depth", (a,), np.ascontiguousarray(out), back)


# -- dense layers -----------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[..., D] @ w[D, E] + b[E]."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear: x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data
    lead = int(np.prod(xd.shape[:-1]))

    def back(g):
        g2 = g.reshape(lead, -1)
        return g @ wd.T, xd.reshape(lead, -1).T @ g2, g2.sum(axis=0)

    return record("linear", (x, w, b), out, back)


def _conv_geometry(H, W, kh, kw, sh, sw, padding):
    if padding == "same":
        ph, pw = kh - 1, kw - 1
    elif padding == "valid":
        ph, pw = 0, 0
    else:
        raise ValueError(f"unknown padding mode {padding!r}")
    Ho = (H + ph - kh) // sh + 1
    Wo = (W + pw - kw) // sw + 1
    return ph, pw, Ho, Wo


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1), padding: str = "valid") -> Tensor:
    """2-D cross-correlation.

    ``same`` pads ``k - 1`` zeros per axis (``(k-1)//2`` before, the rest after),
    ``valid`` pads nothing.
    """
    B, D, H, W = x.shape
    Do, Dk, kh, kw = w.shape
    if Dk != D:
        raise ShapeMismatch(f"conv2d: input depth {D} but kernel expects {Dk}")
    if b.shape != (Do,):
        raise ShapeMismatch(f"conv2d: bias {b.shape} for {Do} output maps")
    sh, sw = _pair(stride)
    ph, pw, Ho, Wo = _conv_geometry(H, W, kh, kw, sh, sw, padding)
    if Ho <= 0 or Wo <= 0:
        raise EmptyOutput(f"conv2d: {kh}x{kw}/{sh}x{sw} on {H}x{W} gives {Ho}x{Wo}")
    top, left = ph // 2, pw // 2
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (top, ph - top), (left, pw - left)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]
    # cols: B, D, Ho, Wo, kh, kw
    wd = w.data
    out = np.tensordot(cols, wd, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, Do
    out = out.transpose(0, 3, 1, 2) + b.data[None, :, None, None]
    Hp, Wp = xp.shape[2], xp.shape[3]

    def back(g):
        gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))  # Do, D, kh, kw
        gb = g.sum(axis=(0, 2, 3))
        gcols = np.tensordot(g, wd, axes=([1], [0]))  # B, Ho, Wo, D, kh, kw
        gxp = np.zeros((B, D, Hp, Wp))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + (Ho - 1) * sh + 1 : sh, j : j + (Wo - 1) * sw + 1 : sw] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, top : top + H, left : left + W]
        return gx, gw, gb

    return record("conv2d", (x, w, b), np.ascontiguousarray(out), back)


def max_pool2d(x: Tensor, window, stride=None) -> Tensor:
    """Max over windows; gradient goes to the first maximum in row-major window order."""
    ph, pw = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    B, D, H, W = x.shape
    Ho = (H - ph) // sh + 1
    Wo = (W - pw) // sw + 1
    if ph > H or pw > W or Ho <= 0 or Wo <= 0:
        raise EmptyOutput(f"max_pool2d: {ph}x{pw} on {H}x{W}")
    win = sliding_window_view(x.data, (ph, pw), axis=(2, 3))[:, :, : (Ho - 1) * sh + 1 : sh, : (Wo - 1) * sw + 1 : sw]
    flat = win.reshape(B, D, Ho, Wo, ph * pw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gx = np.zeros((B, D, H, W))
        for i in range(ph):
            for j in range(pw):
                hit = arg == i * pw + j
                if hit.any():
                    gx[:, :, i : i + (Ho - 1) * sh + 1 : sh, j : j + (Wo - 1) * sw + 1 : sw] += g * hit
        return (gx,)

    return record("max_pool2d", (x,), out, back)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    keep = rng.random(x.shape) >= rate
    return mul_const(x, keep / (1.0 - rate))
