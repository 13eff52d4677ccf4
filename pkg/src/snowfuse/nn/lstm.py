"""Single-layer LSTM over a whole sequence, with hand-rolled BPTT.

Gate layout in the stacked weight rows is (input, forget, candidate,
output). For step t:

    z = wx @ x_t + wh @ h_{t-1} + b          # [4H]
    i = sigmoid(z[0:H]); f = sigmoid(z[H:2H])
    g = tanh(z[2H:3H]);  o = sigmoid(z[3H:4H])
    c_t = f * c_{t-1} + i * g
    h_t = o * tanh(c_t)

Only the final hidden state h_T is returned; backward propagates through
every step and accumulates into wx, wh, b, the inputs, and any provided
initial state.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, make_result


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_sequence(inputs: Tensor, wx: Tensor, wh: Tensor, b: Tensor,
                  h0: Tensor | None = None, c0: Tensor | None = None) -> Tensor:
    """Run the cell over [T, F] inputs and return h_T as [H]."""
    if inputs.data.ndim != 2:
        raise ShapeError(f"lstm_sequence expects [T, F] inputs, got {inputs.shape}")
    t_len, f_dim = inputs.data.shape
    if t_len < 1:
        raise ShapeError("lstm_sequence needs at least one step")
    if wx.data.ndim != 2 or wx.data.shape[1] != f_dim or wx.data.shape[0] % 4 != 0:
        raise ShapeError(f"lstm wx shape {wx.shape} incompatible with inputs {inputs.shape}")
    hid = wx.data.shape[0] // 4
    if wh.data.shape != (4 * hid, hid):
        raise ShapeError(f"lstm wh shape {wh.shape} incompatible with hidden size {hid}")
    if b.data.shape != (4 * hid,):
        raise ShapeError(f"lstm bias shape {b.shape} incompatible with hidden size {hid}")
    for init, name in ((h0, "h0"), (c0, "c0")):
        if init is not None and init.data.shape != (hid,):
            raise ShapeError(f"lstm {name} shape {init.data.shape} != ({hid},)")

    h_prev = np.zeros(hid) if h0 is None else h0.data
    c_prev = np.zeros(hid) if c0 is None else c0.data
    xs = inputs.data
    cache = []
    for t in range(t_len):
        z = wx.data @ xs[t] + wh.data @ h_prev + b.data
        i = _sigmoid(z[:hid])
        f = _sigmoid(z[hid:2 * hid])
        g = np.tanh(z[2 * hid:3 * hid])
        o = _sigmoid(z[3 * hid:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((h_prev, c_prev, i, f, g, o, tc))
        h_prev, c_prev = h, c
    out = h_prev

    def bwd(gh_out):
        dwx = np.zeros_like(wx.data) if wx.requires_grad else None
        dwh = np.zeros_like(wh.data) if wh.requires_grad else None
        db = np.zeros_like(b.data) if b.requires_grad else None
        dx = np.zeros_like(xs) if inputs.requires_grad else None
        dh = gh_out.copy()
        dc = np.zeros(hid)
        for t in range(t_len - 1, -1, -1):
            hp, cp, i, f, g, o, tc = cache[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cp
            dc_prev = dc * f
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ])
            if dwx is not None:
                dwx += np.outer(dz, xs[t])
            if dwh is not None:
                dwh += np.outer(dz, hp)
            if db is not None:
                db += dz
            if dx is not None:
                dx[t] = wx.data.T @ dz
            dh = wh.data.T @ dz
            dc = dc_prev
        if dwx is not None:
            wx.ensure_grad()
            wx.grad += dwx
        if dwh is not None:
            wh.ensure_grad()
            wh.grad += dwh
        if db is not None:
            b.ensure_grad()
            b.grad += db
        if dx is not None:
            inputs.ensure_grad()
            inputs.grad += dx
        if h0 is not None and h0.requires_grad:
            h0.ensure_grad()
            h0.grad += dh
        if c0 is not None and c0.requires_grad:
            c0.ensure_grad()
            c0.grad += dc

    parents = tuple(p for p in (inputs, wx, wh, b, h0, c0) if p is not None)
    return make_result(out, parents, bwd)


def lstm_sequence_batch(inputs: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """Run the same cell over [N, T, F] inputs and return h_T as [N, H].

    Identical recurrence with a leading sample axis; gates for a step are
    one [N, 4H] matrix product. Initial state is zero (the only case the
    model uses in batched form).
    """
    if inputs.data.ndim != 3:
        raise ShapeError(f"lstm_sequence_batch expects [N, T, F] inputs, got {inputs.shape}")
    n, t_len, f_dim = inputs.data.shape
    if t_len < 1:
        raise ShapeError("lstm_sequence_batch needs at least one step")
    if wx.data.ndim != 2 or wx.data.shape[1] != f_dim or wx.data.shape[0] % 4 != 0:
        raise ShapeError(f"lstm wx shape {wx.shape} incompatible with inputs {inputs.shape}")
    hid = wx.data.shape[0] // 4
    if wh.data.shape != (4 * hid, hid):
        raise ShapeError(f"lstm wh shape {wh.shape} incompatible with hidden size {hid}")
    if b.data.shape != (4 * hid,):
        raise ShapeError(f"lstm bias shape {b.shape} incompatible with hidden size {hid}")

    xs = inputs.data
    h_prev = np.zeros((n, hid))
    c_prev = np.zeros((n, hid))
    cache = []
    for t in range(t_len):
        z = xs[:, t] @ wx.data.T + h_prev @ wh.data.T + b.data
        i = _sigmoid(z[:, :hid])
        f = _sigmoid(z[:, hid:2 * hid])
        g = np.tanh(z[:, 2 * hid:3 * hid])
        o = _sigmoid(z[:, 3 * hid:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.append((h_prev, c_prev, i, f, g, o, tc))
        h_prev, c_prev = h, c
    out = h_prev

    def bwd(gh_out):
        dwx = np.zeros_like(wx.data) if wx.requires_grad else None
        dwh = np.zeros_like(wh.data) if wh.requires_grad else None
        db = np.zeros_like(b.data) if b.requires_grad else None
        dx = np.zeros_like(xs) if inputs.requires_grad else None
        dh = gh_out.copy()
        dc = np.zeros((n, hid))
        for t in range(t_len - 1, -1, -1):
            hp, cp, i, f, g, o, tc = cache[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * cp
            dc_prev = dc * f
            dz = np.concatenate([
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ], axis=1)
            if dwx is not None:
                dwx += dz.T @ xs[:, t]
            if dwh is not None:
                dwh += dz.T @ hp
            if db is not None:
                db += dz.sum(axis=0)
            if dx is not None:
                dx[:, t] = dz @ wx.data
            dh = dz @ wh.data
            dc = dc_prev
        if dwx is not None:
            wx.ensure_grad()
            wx.grad += dwx
        if dwh is not None:
            wh.ensure_grad()
            wh.grad += dwh
        if db is not None:
            b.ensure_grad()
            b.grad += db
        if dx is not None:
            inputs.ensure_grad()
            inputs.grad += dx

    return make_result(out, (inputs, wx, wh, b), bwd)
