"""Differentiable building blocks with explicit backward passes.

Everything is batch-first and float64. Forward functions return an output
plus an opaque cache; the matching backward consumes the cache, adds into
each Parameter's ``.grad`` and returns the gradient with respect to the
input. No graph machinery: the classifier composes these by hand and the
finite-difference checker keeps the algebra honest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from .params import Parameter, ParameterStore


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


# ---------------------------------------------------------------------------
# linear / embedding / dropout


def linear_forward(x: np.ndarray, w: Parameter, b: Parameter | None):
    """y = x @ W.T + b for x of shape (..., in_dim)."""
    if x.shape[-1] != w.value.shape[1]:
        raise ShapeMismatch(
            f"linear {w.name}: input width {x.shape[-1]} != {w.value.shape[1]}"
        )
    y = x @ w.value.T
    if b is not None:
        y = y + b.value
    return y, (x,)


def linear_backward(dy: np.ndarray, cache, w: Parameter, b: Parameter | None):
    (x,) = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    w.grad += dy2.T @ x2
    if b is not None:
        b.grad += dy2.sum(axis=0)
    return dy @ w.value


def embedding_forward(tokens: np.ndarray, table: Parameter):
    """Lookup rows of an embedding table; tokens is an integer array."""
    if tokens.min(initial=0) < 0 or tokens.max(initial=0) >= table.value.shape[0]:
        raise ShapeMismatch(
            f"token id outside embedding table {table.name} "
            f"(vocab {table.value.shape[0]})"
        )
    return table.value[tokens], (tokens,)


def embedding_backward(dy: np.ndarray, cache, table: Parameter) -> None:
    (tokens,) = cache
    np.add.at(
        table.grad, tokens.reshape(-1), dy.reshape(-1, dy.shape[-1])
    )


def dropout_forward(
    x: np.ndarray, p: float, train: bool, rng: np.random.Generator | None
):
    if not train or p <= 0.0:
        return x, None
    if rng is None:
        raise ValueError("dropout in train mode requires an rng")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dy: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return dy
    return dy * mask


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GruLayerConfig:
    """Stacked GRU configuration; unidirectional unless stated otherwise."""

    input_dim: int
    hidden_dim: int = 64
    num_layers: int = 2
    inter_layer_dropout: float = 0.2
    bidirectional: bool = False

    @property
    def output_dim(self) -> int:
        return self.hidden_dim * (2 if self.bidirectional else 1)


_GATE_KEYS = ("w_ih", "w_hh", "b_ih", "b_hh")


def _direction_init(store, prefix, h, d, rng):
    return {
        "w_ih": store.xavier(f"{prefix}.w_ih", (3 * h, d), rng),
        "w_hh": store.xavier(f"{prefix}.w_hh", (3 * h, h), rng),
        "b_ih": store.zeros(f"{prefix}.b_ih", (3 * h,)),
        "b_hh": store.zeros(f"{prefix}.b_hh", (3 * h,)),
    }


def gru_init(
    store: ParameterStore,
    prefix: str,
    config: GruLayerConfig,
    rng: np.random.Generator,
) -> list[dict]:
    """Register GRU parameters; gate order along axis 0 is (reset, update,
    candidate), three blocks of hidden_dim rows each."""
    layers = []
    h = config.hidden_dim
    for layer in range(config.num_layers):
        d = config.input_dim if layer == 0 else config.output_dim
        entry = {"fwd": _direction_init(store, f"{prefix}.l{layer}", h, d, rng)}
        if config.bidirectional:
            entry["rev"] = _direction_init(
                store, f"{prefix}.l{layer}.rev", h, d, rng
            )
        layers.append(entry)
    return layers


def gru_params(
    store: ParameterStore, prefix: str, config: GruLayerConfig
) -> list[dict]:
    layers = []
    for layer in range(config.num_layers):
        entry = {
            "fwd": {k: store[f"{prefix}.l{layer}.{k}"] for k in _GATE_KEYS}
        }
        if config.bidirectional:
            entry["rev"] = {
                k: store[f"{prefix}.l{layer}.rev.{k}"] for k in _GATE_KEYS
            }
        layers.append(entry)
    return layers


def _gru_layer_forward(x: np.ndarray, p: dict[str, Parameter], h_dim: int):
    batch, t_len, _ = x.shape
    h_prev = np.zeros((batch, h_dim))
    hs = np.empty((t_len, batch, h_dim))
    cache_r = np.empty((t_len, batch, h_dim))
    cache_z = np.empty((t_len, batch, h_dim))
    cache_n = np.empty((t_len, batch, h_dim))
    cache_ghn = np.empty((t_len, batch, h_dim))
    cache_hprev = np.empty((t_len, batch, h_dim))
    w_ih, w_hh = p["w_ih"].value, p["w_hh"].value
    b_ih, b_hh = p["b_ih"].value, p["b_hh"].value
    # precompute the input projection for all timesteps at once
    gi_all = x @ w_ih.T + b_ih
    for t in range(t_len):
        gi = gi_all[:, t]
        gh = h_prev @ w_hh.T + b_hh
        r = sigmoid(gi[:, :h_dim] + gh[:, :h_dim])
        z = sigmoid(gi[:, h_dim : 2 * h_dim] + gh[:, h_dim : 2 * h_dim])
        ghn = gh[:, 2 * h_dim :]
        n = np.tanh(gi[:, 2 * h_dim :] + r * ghn)
        cache_r[t], cache_z[t], cache_n[t] = r, z, n
        cache_ghn[t], cache_hprev[t] = ghn, h_prev
        h_prev = (1.0 - z) * n + z * h_prev
        hs[t] = h_prev
    out = np.transpose(hs, (1, 0, 2))
    return out, (x, cache_r, cache_z, cache_n, cache_ghn, cache_hprev)


def _gru_layer_backward(dh_out: np.ndarray, cache, p: dict[str, Parameter]):
    x, r_s, z_s, n_s, ghn_s, hprev_s = cache
    batch, t_len, _ = x.shape
    h_dim = r_s.shape[2]
    w_ih, w_hh = p["w_ih"], p["w_hh"]
    dx = np.empty_like(x)
    dgi_all = np.empty((batch, t_len, 3 * h_dim))
    dh_next = np.zeros((batch, h_dim))
    dw_hh = np.zeros_like(w_hh.value)
    db_hh = np.zeros_like(p["b_hh"].value)
    for t in range(t_len - 1, -1, -1):
        dh = dh_out[:, t] + dh_next
        r, z, n = r_s[t], z_s[t], n_s[t]
        ghn, h_prev = ghn_s[t], hprev_s[t]
        dz = dh * (h_prev - n) * z * (1.0 - z)
        dn = dh * (1.0 - z) * (1.0 - n * n)
        dr = dn * ghn * r * (1.0 - r)
        dgi = np.concatenate([dr, dz, dn], axis=1)
        dgh = np.concatenate([dr, dz, dn * r], axis=1)
        dgi_all[:, t] = dgi
        dw_hh += dgh.T @ h_prev
        db_hh += dgh.sum(axis=0)
        dh_next = dgh @ w_hh.value + dh * z
    w_hh.grad += dw_hh
    p["b_hh"].grad += db_hh
    dgi2 = dgi_all.reshape(-1, 3 * h_dim)
    w_ih.grad += dgi2.T @ x.reshape(-1, x.shape[2])
    p["b_ih"].grad += dgi2.sum(axis=0)
    dx[...] = dgi_all @ w_ih.value
    return dx


def gru_forward(
    x: np.ndarray,
    layers: list[dict],
    config: GruLayerConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run a stacked GRU over x of shape (batch, T, input_dim).

    Returns the top layer's hidden states, (batch, T, hidden_dim) for the
    default direction or twice that width when bidirectional (reverse-pass
    states concatenated per timestep). Initial hidden state is zero.
    Inter-layer dropout applies only in train mode and is reproducible for
    a given rng state.
    """
    if x.ndim != 3:
        raise ShapeMismatch(f"gru input must be 3-D, got shape {x.shape}")
    if x.shape[2] != config.input_dim:
        raise ShapeMismatch(
            f"gru input width {x.shape[2]} != configured {config.input_dim}"
        )
    caches = []
    out = x
    for layer, p in enumerate(layers):
        fwd_out, fwd_cache = _gru_layer_forward(out, p["fwd"], config.hidden_dim)
        rev_cache = None
        if "rev" in p:
            rev_out, rev_cache = _gru_layer_forward(
                out[:, ::-1], p["rev"], config.hidden_dim
            )
            fwd_out = np.concatenate([fwd_out, rev_out[:, ::-1]], axis=2)
        out = fwd_out
        mask = None
        if layer < len(layers) - 1:
            out, mask = dropout_forward(
                out, config.inter_layer_dropout, train, rng
            )
        caches.append((fwd_cache, rev_cache, mask))
    return out, caches


def gru_backward(
    dh: np.ndarray,
    caches,
    layers: list[dict],
) -> np.ndarray:
    grad = dh
    h = caches[0][0][1].shape[2] if caches else 0
    for p, (fwd_cache, rev_cache, mask) in zip(reversed(layers), reversed(caches)):
        if mask is not None:
            grad = dropout_backward(grad, mask)
        if rev_cache is not None:
            dx_f = _gru_layer_backward(grad[:, :, :h], fwd_cache, p["fwd"])
            dx_r = _gru_layer_backward(
                grad[:, ::-1, h:], rev_cache, p["rev"]
            )
            grad = dx_f + dx_r[:, ::-1]
        else:
            grad = _gru_layer_backward(grad, fwd_cache, p["fwd"])
    return grad


# ---------------------------------------------------------------------------
# context attention

# The pooling weights are softmax(tanh(W h_t + b) . c) over timesteps; c is
# a trainable context vector, so the layer learns which notes matter.


def attention_forward(h: np.ndarray, w: Parameter, b: Parameter, c: Parameter):
    """Pool (batch, T, h) hidden states into (batch, h) summaries.

    Returns (summary, weights, cache); weights has shape (batch, T).
    """
    if h.ndim != 3:
        raise ShapeMismatch(f"attention input must be 3-D, got {h.shape}")
    if h.shape[2] != w.value.shape[1]:
        raise ShapeMismatch(
            f"attention width {h.shape[2]} != {w.value.shape[1]}"
        )
    u = np.tanh(h @ w.value.T + b.value)
    scores = u @ c.value
    alpha = softmax(scores, axis=1)
    y = np.einsum("bt,bth->bh", alpha, h)
    return y, alpha, (h, u, alpha)


def attention_backward(
    dy: np.ndarray, cache, w: Parameter, b: Parameter, c: Parameter
) -> np.ndarray:
    h, u, alpha = cache
    dalpha = np.einsum("bh,bth->bt", dy, h)
    dh = alpha[:, :, None] * dy[:, None, :]
    dscores = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    c.grad += np.einsum("bt,bth->h", dscores, u)
    du = dscores[:, :, None] * c.value[None, None, :]
    dpre = du * (1.0 - u * u)
    dpre2 = dpre.reshape(-1, dpre.shape[-1])
    w.grad += dpre2.T @ h.reshape(-1, h.shape[-1])
    b.grad += dpre2.sum(axis=0)
    dh += dpre @ w.value
    return dh
