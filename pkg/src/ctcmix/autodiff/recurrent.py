"""LSTM over whole sequences with exact backpropagation through time."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .ops import _sigmoid, concat
from .tensor import Tensor, record


def lstm(x: Tensor, w_in: Tensor, w_rec: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Unidirectional LSTM.

    Parameters
    ----------
    x : Tensor
        (batch, time, d_in) input sequence.
    w_in, w_rec, bias : Tensor
        (d_in, 4H), (H, 4H) and (4H,) with gate blocks ordered input, forget,
        candidate, output.
    reverse : bool
        Scan from the last frame to the first.

    Returns
    -------
    Tensor
        (batch, time, H) hidden states, aligned with the input frames.
    """
    B, T, Din = x.shape
    H = w_rec.shape[0]
    if w_in.shape != (Din, 4 * H) or w_rec.shape != (H, 4 * H) or bias.shape != (4 * H,):
        raise ShapeMismatch(f"lstm: x{x.shape} w_in{w_in.shape} w_rec{w_rec.shape} bias{bias.shape}")
    if T < 1:
        raise ShapeMismatch("lstm needs at least one frame")
    xd = x.data[:, ::-1] if reverse else x.data
    wr = w_rec.data
    pre = xd @ w_in.data + bias.data  # B, T, 4H

    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cs = np.empty((B, T + 1, H))
    cs[:, 0] = 0.0
    gates = np.empty((B, T, 4 * H))
    for t in range(T):
        z = pre[:, t] + h @ wr
        act = _sigmoid(z)
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = act
        cs[:, t + 1] = c
        hs[:, t] = h

    def back(gout):
        g_seq = gout[:, ::-1] if reverse else gout
        dpre = np.empty((B, T, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            act = gates[:, t]
            i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
            tc = np.tanh(cs[:, t + 1])
            dh = g_seq[:, t] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dpre[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H : 2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ wr.T
        flat = dpre.reshape(B * T, 4 * H)
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1).reshape(B * T, H)
        g_rec = h_prev.T @ flat
        g_in = xd.reshape(B * T, Din).T @ flat
        gx = dpre @ w_in.data.T
        if reverse:
            gx = gx[:, ::-1]
        return gx, g_in, g_rec, flat.sum(axis=0)

    out = hs[:, ::-1] if reverse else hs
    return record("lstm", (x, w_in, w_rec, bias), np.ascontiguousarray(out), back)


def bidirectional_lstm(x: Tensor, forward_params, backward_params) -> Tensor:
    """Concatenate a forward and a reversed LSTM along depth: (B, T, 2H)."""
    fwd = lstm(x, *forward_params)
    bwd = lstm(x, *backward_params, reverse=True)
    return concat([fwd, bwd], axis=2)
