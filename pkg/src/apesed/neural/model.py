"""Frame-level sequence labelers: LSTM, bidirectional LSTM, transformer
encoder, and the two autoregressive LSTM variants.

Every architecture maps a T x input_dim feature matrix to per-frame class
posteriors: hidden sequence H, dense projection D, row-wise softmax P. The
autoregressive variants feed the previous frame's pre-softmax dense output
back into the next step's input; the bidirectional one runs a second such
layer in reverse time and sums the two dense outputs before the softmax.

Batches of variable-length clips are padded to the longest clip and the
loss is masked on padding frames; backward-direction layers consume each
clip reversed within its own true length, so padding never leaks into
valid frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import BadConfig, DimMismatch, LengthMismatch
from . import autodiff as ad
from .autodiff import Tape, Tensor

ARCHS = ("lstm", "blstm", "transformer", "ar_lstm", "ar_blstm")
_AR_ARCHS = ("ar_lstm", "ar_blstm")


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    input_dim: int
    hidden_size: int = 1024
    heads: int = 8
    layers: int = 6
    num_class: int = 2
    dropout: float = 0.4

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise BadConfig(f"unknown arch {self.arch!r}")
        if self.input_dim < 1:
            raise BadConfig(f"input_dim must be >= 1, got {self.input_dim}")
        if self.hidden_size < 1:
            raise BadConfig(f"hidden_size must be >= 1, got {self.hidden_size}")
        if self.num_class < 2:
            raise BadConfig(f"num_class must be >= 2, got {self.num_class}")
        if not 0.0 <= self.dropout < 1.0:
            raise BadConfig(f"dropout must be in [0, 1), got {self.dropout}")
        if self.arch == "transformer":
            if self.heads < 1 or self.layers < 1:
                raise BadConfig("transformer needs heads >= 1 and layers >= 1")
            if self.hidden_size % self.heads != 0:
                raise BadConfig(
                    f"hidden_size {self.hidden_size} not divisible by "
                    f"heads {self.heads}"
                )

    @property
    def hidden_dim(self) -> int:
        """Width of the hidden sequence H fed to the dense layer."""
        if self.arch in ("blstm", "ar_blstm"):
            return 2 * self.hidden_size
        return self.hidden_size

    @property
    def step_input_dim(self) -> int:
        """Per-step recurrent input width (AR archs append the fed-back D)."""
        if self.arch in _AR_ARCHS:
            return self.input_dim + self.num_class
        return self.input_dim

    @property
    def ff_dim(self) -> int:
        return 2 * self.hidden_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class PosteriorMatrix:
    """Per-frame class posteriors plus the tensors behind them."""

    clip_id: str
    values: np.ndarray  # T x num_class, rows sum to 1
    dense: np.ndarray   # T x num_class, pre-softmax
    hidden: np.ndarray  # T x hidden_dim

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]


class SequenceModel:
    """A ModelConfig plus its named parameter tensors."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).data.dtype

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple, str]]:
    """(name, shape, init kind) for every parameter, in canonical order."""
    h, c, d = cfg.hidden_size, cfg.num_class, cfg.input_dim
    step = cfg.step_input_dim

    def lstm(prefix, in_dim):
        return [
            (prefix + ".W", (in_dim, 4 * h), "xavier"),
            (prefix + ".U", (h, 4 * h), "xavier"),
            (prefix + ".b", (4 * h,), "lstm_bias"),
        ]

    def dense(prefix, in_dim):
        return [
            (prefix + ".W", (in_dim, c), "xavier"),
            (prefix + ".b", (c,), "zeros"),
        ]

    if cfg.arch == "lstm":
        return lstm("lstm", d) + dense("dense", h)
    if cfg.arch == "blstm":
        return lstm("fwd", d) + lstm("bwd", d) + dense("dense", 2 * h)
    if cfg.arch == "ar_lstm":
        return lstm("lstm", step) + dense("dense", h)
    if cfg.arch == "ar_blstm":
        return (lstm("fwd", step) + dense("fwd_dense", h)
                + lstm("bwd", step) + dense("bwd_dense", h))

    m, ff = h, cfg.ff_dim
    specs = [("input_proj.W", (d, m), "xavier"), ("input_proj.b", (m,), "zeros")]
    for i in range(cfg.layers):
        p = f"layers.{i}"
        specs += [
            (f"{p}.ln1.gamma", (m,), "ones"),
            (f"{p}.ln1.beta", (m,), "zeros"),
            (f"{p}.attn.Wq", (m, m), "xavier"),
            (f"{p}.attn.bq", (m,), "zeros"),
            (f"{p}.attn.Wk", (m, m), "xavier"),
            (f"{p}.attn.bk", (m,), "zeros"),
            (f"{p}.attn.Wv", (m, m), "xavier"),
            (f"{p}.attn.bv", (m,), "zeros"),
            (f"{p}.attn.Wo", (m, m), "xavier"),
            (f"{p}.attn.bo", (m,), "zeros"),
            (f"{p}.ln2.gamma", (m,), "ones"),
            (f"{p}.ln2.beta", (m,), "zeros"),
            (f"{p}.ff.W1", (m, ff), "xavier"),
            (f"{p}.ff.b1", (ff,), "zeros"),
            (f"{p}.ff.W2", (ff, m), "xavier"),
            (f"{p}.ff.b2", (m,), "zeros"),
        ]
    specs += [("final_ln.gamma", (m,), "ones"), ("final_ln.beta", (m,), "zeros")]
    specs += dense("dense", m)
    return specs


def init(config: ModelConfig, seed: int, dtype=np.float32) -> SequenceModel:
    """Build a model with Xavier-uniform weights, zero biases, and LSTM
    forget-gate biases of +1. Same (config, seed) gives identical values."""
    rng = np.random.default_rng(seed)
    h = config.hidden_size
    params = {}
    for name, shape, kind in _param_specs(config):
        if kind == "xavier":
            lim = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-lim, lim, size=shape)
        elif kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        else:  # lstm_bias: gate order [input, forget, cell, output]
            data = np.zeros(shape)
            data[h:2 * h] = 1.0
        params[name] = Tensor(data.astype(dtype), needs_grad=True)
    return SequenceModel(config, params)


def class_weights(counts: np.ndarray, balance: bool = True) -> np.ndarray:
    """Per-class loss weights: reciprocal frame counts, 0 for absent
    classes; all ones when balancing is off."""
    counts = np.asarray(counts, dtype=np.float64)
    if not balance:
        return np.ones(len(counts))
    w = np.zeros(len(counts))
    nz = counts > 0
    w[nz] = 1.0 / counts[nz]
    return w


def loss(posteriors: PosteriorMatrix, labels, weights: np.ndarray) -> float:
    """Weight-normalized cross-entropy on posteriors.

    loss = sum_t w[L_t] * (-log P_t[L_t]) / sum_t w[L_t], with the log
    clamped at 1e-12.
    """
    labels = np.asarray(labels)
    p = posteriors.values
    if len(labels) != p.shape[0]:
        raise LengthMismatch(f"{len(labels)} labels vs {p.shape[0]} posterior rows")
    w = np.asarray(weights, dtype=np.float64)[labels]
    picked = np.maximum(p[np.arange(len(labels)), labels], 1e-12)
    den = w.sum()
    if den <= 0:
        return 0.0
    return float(-(w * np.log(picked)).sum() / den)


def _dropout(tape, t: Tensor, p: float, rng, dtype) -> Tensor:
    if p <= 0.0:
        return t
    mask = (rng.random(t.data.shape) >= p).astype(dtype)
    mask /= np.asarray(1.0 - p, dtype=dtype)
    return ad.mul(tape, t, Tensor(mask))


def _reversed_padded(xs_padded: np.ndarray, lengths: list[int]) -> np.ndarray:
    """Reverse each clip within its own length; padding stays at the end."""
    out = np.zeros_like(xs_padded)
    for b, n in enumerate(lengths):
        out[b, :n] = xs_padded[b, :n][::-1]
    return out


def _realign_perm(lengths: list[int], tmax: int) -> np.ndarray:
    """Row permutation mapping reversed-time stacked rows back to forward
    time order. Rows are time-major: row t*B + b is clip b at step t."""
    b_total = len(lengths)
    perm = np.arange(tmax * b_total)
    for b, n in enumerate(lengths):
        s = np.arange(n)
        perm[s * b_total + b] = (n - 1 - s) * b_total + b
    return perm


def _run_lstm_steps(model, prefix, x_steps, tape):
    """Plain LSTM over a list of B x D step inputs; returns per-step h."""
    p = model.params
    w, u, b = p[prefix + ".W"], p[prefix + ".U"], p[prefix + ".b"]
    bsz = x_steps[0].data.shape[0]
    h = Tensor(np.zeros((bsz, model.config.hidden_size), dtype=model.dtype))
    c = Tensor(np.zeros((bsz, model.config.hidden_size), dtype=model.dtype))
    hs = []
    for x_t in x_steps:
        h, c = ad.lstm_cell(tape, x_t, h, c, w, u, b)
        hs.append(h)
    return hs


def _run_ar_steps(model, lstm_prefix, dense_prefix, x_steps, tape, train_mode, rng):
    """Autoregressive LSTM: step input is concat(I_t, D_{t-1}), D_0 = 0.

    The fed-back signal is the pre-softmax dense output, computed from the
    same (dropout-masked when training) hidden state that the loss sees.
    Returns (per-step dense outputs, per-step raw hidden states).
    """
    cfg = model.config
    p = model.params
    w, u, b = p[lstm_prefix + ".W"], p[lstm_prefix + ".U"], p[lstm_prefix + ".b"]
    wd, bd = p[dense_prefix + ".W"], p[dense_prefix + ".b"]
    bsz = x_steps[0].data.shape[0]
    h = Tensor(np.zeros((bsz, cfg.hidden_size), dtype=model.dtype))
    c = Tensor(np.zeros((bsz, cfg.hidden_size), dtype=model.dtype))
    d_prev = Tensor(np.zeros((bsz, cfg.num_class), dtype=model.dtype))
    ds, hs = [], []
    for x_t in x_steps:
        inp = ad.concat_cols(tape, [x_t, d_prev])
        h, c = ad.lstm_cell(tape, inp, h, c, w, u, b)
        hs.append(h)
        hd = _dropout(tape, h, cfg.dropout, rng, model.dtype) if train_mode else h
        d_prev = ad.add(tape, ad.matmul(tape, hd, wd), bd)
        ds.append(d_prev)
    return ds, hs


def _run_recurrent(model, xs, tape, train_mode, rng, want_hidden=False):
    """All four recurrent archs over a padded batch.

    Returns (logits Tensor with time-major rows t*B + b, row_map giving
    each clip's row indices in clip time order, hidden Tensor or None).
    """
    cfg = model.config
    p = model.params
    bsz = len(xs)
    lengths = [x.shape[0] for x in xs]
    tmax = max(lengths)
    padded = np.zeros((bsz, tmax, cfg.input_dim), dtype=model.dtype)
    for i, x in enumerate(xs):
        padded[i, :x.shape[0]] = x
    x_steps = [Tensor(np.ascontiguousarray(padded[:, t, :])) for t in range(tmax)]
    row_map = [np.arange(n) * bsz + i for i, n in enumerate(lengths)]

    def reversed_steps():
        rev = _reversed_padded(padded, lengths)
        return [Tensor(np.ascontiguousarray(rev[:, t, :])) for t in range(tmax)]

    hidden = None
    if cfg.arch == "lstm":
        h_all = ad.stack_rows(tape, _run_lstm_steps(model, "lstm", x_steps, tape))
        hidden = h_all
        if train_mode:
            h_all = _dropout(tape, h_all, cfg.dropout, rng, model.dtype)
        logits = ad.add(tape, ad.matmul(tape, h_all, p["dense.W"]), p["dense.b"])
    elif cfg.arch == "blstm":
        hf = ad.stack_rows(tape, _run_lstm_steps(model, "fwd", x_steps, tape))
        hb = ad.stack_rows(tape, _run_lstm_steps(model, "bwd", reversed_steps(), tape))
        hb = ad.gather_rows(tape, hb, _realign_perm(lengths, tmax))
        h_all = ad.concat_cols(tape, [hf, hb])
        hidden = h_all
        if train_mode:
            h_all = _dropout(tape, h_all, cfg.dropout, rng, model.dtype)
        logits = ad.add(tape, ad.matmul(tape, h_all, p["dense.W"]), p["dense.b"])
    elif cfg.arch == "ar_lstm":
        ds, hs = _run_ar_steps(model, "lstm", "dense", x_steps, tape, train_mode, rng)
        logits = ad.stack_rows(tape, ds)
        if want_hidden:
            hidden = ad.stack_rows(tape, hs)
    else:  # ar_blstm
        df, hf = _run_ar_steps(model, "fwd", "fwd_dense", x_steps, tape,
                               train_mode, rng)
        db, hb = _run_ar_steps(model, "bwd", "bwd_dense", reversed_steps(), tape,
                               train_mode, rng)
        perm = _realign_perm(lengths, tmax)
        logits = ad.add(tape, ad.stack_rows(tape, df),
                        ad.gather_rows(tape, ad.stack_rows(tape, db), perm))
        if want_hidden:
            hidden = ad.concat_cols(tape, [
                ad.stack_rows(tape, hf),
                ad.gather_rows(tape, ad.stack_rows(tape, hb), perm),
            ])
    return logits, row_map, hidden


def _sinusoidal_pe(t: int, dim: int, dtype) -> np.ndarray:
    pos = np.arange(t)[:, None].astype(np.float64)
    i = np.arange((dim + 1) // 2)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((t, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, :dim // 2])
    return pe.astype(dtype)


def _run_transformer_clip(model, x, tape, train_mode, rng, positional=True):
    """Pre-norm transformer encoder on one clip; returns (logits, hidden)."""
    cfg = model.config
    p = model.params
    m = cfg.hidden_size
    dh = m // cfg.heads
    inv_sqrt = 1.0 / np.sqrt(dh)

    def drop(t):
        return _dropout(tape, t, cfg.dropout, rng, model.dtype) if train_mode else t

    h = ad.add(tape, ad.matmul(tape, Tensor(x), p["input_proj.W"]),
               p["input_proj.b"])
    if positional:
        h = ad.add(tape, h, Tensor(_sinusoidal_pe(x.shape[0], m, model.dtype)))
    for i in range(cfg.layers):
        pre = f"layers.{i}"
        y = ad.layernorm(tape, h, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"])
        q = ad.add(tape, ad.matmul(tape, y, p[f"{pre}.attn.Wq"]), p[f"{pre}.attn.bq"])
        k = ad.add(tape, ad.matmul(tape, y, p[f"{pre}.attn.Wk"]), p[f"{pre}.attn.bk"])
        v = ad.add(tape, ad.matmul(tape, y, p[f"{pre}.attn.Wv"]), p[f"{pre}.attn.bv"])
        heads = []
        for hd in range(cfg.heads):
            j0, j1 = hd * dh, (hd + 1) * dh
            qh = ad.slice_cols(tape, q, j0, j1)
            kh = ad.slice_cols(tape, k, j0, j1)
            vh = ad.slice_cols(tape, v, j0, j1)
            scores = ad.scale(tape, ad.matmul(tape, qh, ad.transpose(tape, kh)),
                              inv_sqrt)
            heads.append(ad.matmul(tape, ad.softmax_rows(tape, scores), vh))
        att = ad.add(tape, ad.matmul(tape, ad.concat_cols(tape, heads),
                                     p[f"{pre}.attn.Wo"]), p[f"{pre}.attn.bo"])
        h = ad.add(tape, h, drop(att))
        y = ad.layernorm(tape, h, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"])
        ff = ad.relu(tape, ad.add(tape, ad.matmul(tape, y, p[f"{pre}.ff.W1"]),
                                  p[f"{pre}.ff.b1"]))
        ff = ad.add(tape, ad.matmul(tape, ff, p[f"{pre}.ff.W2"]), p[f"{pre}.ff.b2"])
        h = ad.add(tape, h, drop(ff))
    hidden = ad.layernorm(tape, h, p["final_ln.gamma"], p["final_ln.beta"])
    hd = drop(hidden)
    logits = ad.add(tape, ad.matmul(tape, hd, p["dense.W"]), p["dense.b"])
    return logits, hidden


def _check_input(cfg: ModelConfig, values: np.ndarray) -> np.ndarray:
    if values.ndim != 2 or values.shape[1] != cfg.input_dim:
        raise DimMismatch(
            f"features are {values.shape}, model expects T x {cfg.input_dim}"
        )
    return values


def forward(model: SequenceModel, features, train_mode: bool = False,
            rng=None, positional: bool = True) -> PosteriorMatrix:
    """Run one clip through the model and return per-frame posteriors.

    With train_mode off this is deterministic and dropout-free. The
    `positional` flag exists so tests can probe the transformer's
    permutation behavior; leave it on otherwise.
    """
    cfg = model.config
    x = _check_input(cfg, np.asarray(features.values, dtype=model.dtype))
    if train_mode and cfg.dropout > 0.0 and rng is None:
        raise ValueError("train_mode with dropout needs an rng")
    if cfg.arch == "transformer":
        logits, hidden = _run_transformer_clip(model, x, None, train_mode, rng,
                                               positional=positional)
    else:
        logits, _, hidden = _run_recurrent(model, [x], None, train_mode, rng,
                                           want_hidden=True)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    return PosteriorMatrix(
        clip_id=getattr(features, "clip_id", ""),
        values=probs,
        dense=logits.data,
        hidden=hidden.data,
    )


def build_loss(model: SequenceModel, feats: list, label_tracks: list,
               weights: np.ndarray, tape: Tape | None,
               train_mode: bool = False, rng=None) -> Tensor:
    """Weight-normalized cross-entropy over a batch of clips.

    One normalizer (the total label weight across all valid frames of the
    batch) is shared by every clip, so a padded batch and a sequence of
    per-clip partial losses produce the same value.
    """
    cfg = model.config
    xs, labels = [], []
    for fm, lt in zip(feats, label_tracks):
        x = _check_input(cfg, np.asarray(fm.values, dtype=model.dtype))
        lab = np.asarray(lt.labels if hasattr(lt, "labels") else lt)
        if x.shape[0] != len(lab):
            raise LengthMismatch(
                f"clip {fm.clip_id}: {x.shape[0]} feature rows vs {len(lab)} labels"
            )
        xs.append(x)
        labels.append(lab)
    w = np.asarray(weights, dtype=np.float64)
    if train_mode and cfg.dropout > 0.0 and rng is None:
        raise ValueError("train_mode with dropout needs an rng")

    if cfg.arch == "transformer":
        denom = float(sum(w[lab].sum() for lab in labels))
        total = None
        for x, lab in zip(xs, labels):
            logits, _ = _run_transformer_clip(model, x, tape, train_mode, rng)
            part = ad.weighted_ce_logits(tape, logits, lab, w[lab], denom=denom)
            total = part if total is None else ad.add(tape, total, part)
        return total

    logits, row_map, _ = _run_recurrent(model, xs, tape, train_mode, rng)
    n_rows = logits.data.shape[0]
    flat_labels = np.zeros(n_rows, dtype=np.int64)
    row_w = np.zeros(n_rows, dtype=np.float64)
    for idx, lab in zip(row_map, labels):
        flat_labels[idx] = lab
        row_w[idx] = w[lab]
    return ad.weighted_ce_logits(tape, logits, flat_labels, row_w)


def backward(model: SequenceModel, features, label_track,
             weights: np.ndarray) -> dict[str, np.ndarray]:
    """Exact gradients of loss(forward(features)) for one clip, dropout off.

    Returns one array per parameter, zeros where the loss does not depend
    on it (all-zero-weight labels, for instance).
    """
    model.zero_grads()
    tape = Tape()
    out = build_loss(model, [features], [label_track], weights, tape,
                     train_mode=False)
    tape.backward(out)
    grads = {}
    for name, t in model.params.items():
        grads[name] = np.zeros_like(t.data) if t.grad is None else t.grad
        t.grad = None
    return grads
