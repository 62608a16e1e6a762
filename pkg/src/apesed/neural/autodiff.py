"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every op computes its output eagerly and, when a tape is given, records a
closure that propagates the output gradient to its inputs. Calling
``Tape.backward`` on the loss runs the closures in reverse order.

Gradients accumulate by rebinding (`t.grad = g` or `t.grad + g`), never by
in-place mutation, so a gradient array is always safe to share between
nodes. Passing ``tape=None`` runs any op in pure inference mode.

The LSTM cell and the weighted cross-entropy are fused ops with
hand-derived adjoints; everything else composes from small primitives.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class Tensor:
    """An array plus its accumulated gradient."""

    __slots__ = ("data", "grad", "needs_grad")

    def __init__(self, data, needs_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.data.shape


class Tape:
    """Records backward closures in execution order."""

    def __init__(self):
        self._nodes = []

    def record(self, fn) -> None:
        self._nodes.append(fn)

    def backward(self, out: Tensor) -> None:
        out.grad = np.ones_like(out.data)
        for fn in reversed(self._nodes):
            fn()


def _acc(t: Tensor, g: np.ndarray) -> None:
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, a.needs_grad or b.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            if a.needs_grad:
                _acc(a, g @ b.data.T)
            if b.needs_grad:
                _acc(b, a.data.T @ g)
        tape.record(bw)
    return out


def add(tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, a.needs_grad or b.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            if a.needs_grad:
                _acc(a, _unbroadcast(g, a.data.shape))
            if b.needs_grad:
                _acc(b, _unbroadcast(g, b.data.shape))
        tape.record(bw)
    return out


def mul(tape, a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, a.needs_grad or b.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            if a.needs_grad:
                _acc(a, _unbroadcast(g * b.data, a.data.shape))
            if b.needs_grad:
                _acc(b, _unbroadcast(g * a.data, b.data.shape))
        tape.record(bw)
    return out


def scale(tape, a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            if out.grad is not None:
                _acc(a, out.grad * s)
        tape.record(bw)
    return out


def sigmoid(tape, a: Tensor) -> Tensor:
    y = expit(a.data)
    out = Tensor(y, a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            if out.grad is not None:
                _acc(a, out.grad * y * (1.0 - y))
        tape.record(bw)
    return out


def tanh(tape, a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            if out.grad is not None:
                _acc(a, out.grad * (1.0 - y * y))
        tape.record(bw)
    return out


def relu(tape, a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), a.needs_grad)
    if tape is not None and out.needs_grad:
        mask = a.data > 0
        def bw():
            if out.grad is not None:
                _acc(a, out.grad * mask)
        tape.record(bw)
    return out


def softmax_rows(tape, a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=-1, keepdims=True)
    out = Tensor(y, a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            _acc(a, y * (g - (g * y).sum(axis=-1, keepdims=True)))
        tape.record(bw)
    return out


def transpose(tape, a: Tensor) -> Tensor:
    out = Tensor(a.data.T, a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            if out.grad is not None:
                _acc(a, out.grad.T)
        tape.record(bw)
    return out


def slice_cols(tape, a: Tensor, j0: int, j1: int) -> Tensor:
    out = Tensor(np.ascontiguousarray(a.data[:, j0:j1]), a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            buf = np.zeros_like(a.data)
            buf[:, j0:j1] = g
            _acc(a, buf)
        tape.record(bw)
    return out


def concat_cols(tape, parts: list[Tensor]) -> Tensor:
    out = Tensor(np.hstack([p.data for p in parts]), any(p.needs_grad for p in parts))
    if tape is not None and out.needs_grad:
        widths = [p.data.shape[1] for p in parts]
        def bw():
            g = out.grad
            if g is None:
                return
            j = 0
            for p, w in zip(parts, widths):
                if p.needs_grad:
                    _acc(p, g[:, j:j + w])
                j += w
        tape.record(bw)
    return out


def stack_rows(tape, parts: list[Tensor]) -> Tensor:
    out = Tensor(np.vstack([p.data for p in parts]), any(p.needs_grad for p in parts))
    if tape is not None and out.needs_grad:
        heights = [p.data.shape[0] for p in parts]
        def bw():
            g = out.grad
            if g is None:
                return
            i = 0
            for p, h in zip(parts, heights):
                if p.needs_grad:
                    _acc(p, g[i:i + h])
                i += h
        tape.record(bw)
    return out


def gather_rows(tape, a: Tensor, index: np.ndarray) -> Tensor:
    """Row permutation/selection: out[i] = a[index[i]]."""
    out = Tensor(a.data[index], a.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            buf = np.zeros_like(a.data)
            np.add.at(buf, index, g)
            _acc(a, buf)
        tape.record(bw)
    return out


def layernorm(tape, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = Tensor(xn * gamma.data + beta.data,
                 x.needs_grad or gamma.needs_grad or beta.needs_grad)
    if tape is not None and out.needs_grad:
        def bw():
            g = out.grad
            if g is None:
                return
            if gamma.needs_grad:
                _acc(gamma, _unbroadcast(g * xn, gamma.data.shape))
            if beta.needs_grad:
                _acc(beta, _unbroadcast(g, beta.data.shape))
            if x.needs_grad:
                gxn = g * gamma.data
                _acc(x, inv * (gxn - gxn.mean(axis=-1, keepdims=True)
                               - xn * (gxn * xn).mean(axis=-1, keepdims=True)))
        tape.record(bw)
    return out


def lstm_cell(tape, x: Tensor, h_prev: Tensor, c_prev: Tensor,
              w: Tensor, u: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step, fused into a single tape node.

    Gate layout along the 4H axis is [input, forget, cell, output]. Returns
    (h_new, c_new); the adjoints below are derived by hand so a T-step
    sequence costs one node per step instead of a dozen.
    """
    hs = c_prev.data.shape[1]
    z = x.data @ w.data + h_prev.data @ u.data + b.data
    gi = expit(z[:, :hs])
    gf = expit(z[:, hs:2 * hs])
    gg = np.tanh(z[:, 2 * hs:3 * hs])
    go = expit(z[:, 3 * hs:])
    c_new = gf * c_prev.data + gi * gg
    tc = np.tanh(c_new)
    h_new = go * tc

    needs = any(t.needs_grad for t in (x, h_prev, c_prev, w, u, b))
    h_out = Tensor(h_new, needs)
    c_out = Tensor(c_new, needs)
    if tape is not None and needs:
        def bw():
            gh, gc = h_out.grad, c_out.grad
            if gh is None and gc is None:
                return
            zero = np.zeros_like(c_new)
            gh_ = gh if gh is not None else zero
            gc_ = gc if gc is not None else zero
            dc = gc_ + gh_ * go * (1.0 - tc * tc)
            dzi = (dc * gg) * gi * (1.0 - gi)
            dzf = (dc * c_prev.data) * gf * (1.0 - gf)
            dzg = (dc * gi) * (1.0 - gg * gg)
            dzo = (gh_ * tc) * go * (1.0 - go)
            dz = np.hstack([dzi, dzf, dzg, dzo])
            if x.needs_grad:
                _acc(x, dz @ w.data.T)
            if h_prev.needs_grad:
                _acc(h_prev, dz @ u.data.T)
            if c_prev.needs_grad:
                _acc(c_prev, dc * gf)
            if w.needs_grad:
                _acc(w, x.data.T @ dz)
            if u.needs_grad:
                _acc(u, h_prev.data.T @ dz)
            if b.needs_grad:
                _acc(b, dz.sum(axis=0))
        tape.record(bw)
    return h_out, c_out


def weighted_ce_logits(tape, logits: Tensor, labels: np.ndarray,
                       row_weights: np.ndarray, denom: float | None = None) -> Tensor:
    """Weight-normalized cross-entropy straight from logits.

    loss = sum_t w_t * (-log softmax(z)_t[L_t]) / denom, with denom
    defaulting to sum(w). Passing an explicit denom lets several partial
    batches share one normalizer; their losses then just add up.
    """
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(sez)
    w = np.asarray(row_weights, dtype=z.dtype)
    labels = np.asarray(labels)
    if denom is None:
        denom = float(w.sum())
    if denom <= 0.0:
        return Tensor(np.asarray(0.0, dtype=z.dtype))
    rows = np.arange(z.shape[0])
    num = -(w * logp[rows, labels]).sum()
    out = Tensor(np.asarray(num / denom, dtype=z.dtype), logits.needs_grad)
    if tape is not None and out.needs_grad:
        probs = ez / sez
        def bw():
            g = out.grad
            if g is None:
                return
            d = probs * w[:, None]
            d[rows, labels] -= w
            _acc(logits, (float(g) / denom) * d)
        tape.record(bw)
    return out
