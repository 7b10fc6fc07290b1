"""Difficulty classifier: feature trunks, fusion strategies, loss heads.

A model is one or more trunks (embedding lookup for pitch tokens, then a
stacked GRU pooled by context attention), a fusion rule combining trunk
summaries, and a single linear layer feeding the head required by the
configured loss. Forward and backward are explicit; the same code path is
exercised by the finite-difference checks.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, CoverageMismatch, ShapeMismatch, WidthMismatch
from .losses import (
    HEAD_KINDS,
    coral_sum_grad,
    decode_head,
    msmooth_sum_grad,
    nll_sum_grad,
    ordinal_sum_grad,
    probs_from_head,
    regclass_sum_grad,
)
from .nn.layers import (
    GruLayerConfig,
    attention_backward,
    attention_forward,
    embedding_backward,
    embedding_forward,
    gru_backward,
    gru_forward,
    gru_init,
    gru_params,
    linear_backward,
    linear_forward,
    log_softmax,
    sigmoid,
    softmax,
)
from .nn.params import ParameterStore, load_checkpoint, save_checkpoint
from .representations import PITCH_VOCAB, REP_NAMES

log = logging.getLogger(__name__)

FUSION_KINDS = ("none", "sync", "concat", "sum", "att", "int")
LATE_FUSIONS = ("concat", "sum", "att", "int")


@dataclass
class StreamSpec:
    name: str
    kind: str  # "tokens" or "float"
    input_dim: int


@dataclass
class ClassifierConfig:
    rep_name: str
    k: int
    head: str
    fusion: str = "none"
    hidden_dim: int = 64
    num_layers: int = 2
    dropout: float = 0.2
    bidirectional: bool = False
    pitch_embed_dim: int = 32
    fusion_heads: int = 2
    fusion_streams: tuple[str, ...] = ("argnn", "virtuoso")
    seed: int = 0
    input_dims: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rep_name not in REP_NAMES:
            raise ConfigError(f"unknown representation {self.rep_name!r}")
        if self.head not in HEAD_KINDS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.fusion not in FUSION_KINDS:
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if (self.fusion != "none") != (self.rep_name == "fused"):
            raise ConfigError("fusion strategies apply exactly to rep 'fused'")
        if self.k < 2:
            raise ConfigError("need at least two difficulty levels")
        if self.fusion == "int" and self.trunk_width % self.fusion_heads:
            raise ConfigError("trunk width must divide evenly across fusion heads")
        if self.fusion == "sync" and "pitch" in self.fusion_streams:
            raise ConfigError("sync fusion concatenates embeddings, not tokens")

    @property
    def trunk_width(self) -> int:
        return self.hidden_dim * (2 if self.bidirectional else 1)

    def streams(self) -> list[StreamSpec]:
        if self.rep_name == "pitch":
            return [StreamSpec("pitch", "tokens", self.pitch_embed_dim)]
        if self.rep_name in ("virtuoso", "virtuoso_enc"):
            name = self.rep_name
            return [StreamSpec(name, "float", self._dim(name))]
        if self.rep_name == "argnn":
            return [
                StreamSpec("rh", "float", self._dim("rh")),
                StreamSpec("lh", "float", self._dim("lh")),
            ]
        # fused
        if self.fusion == "sync":
            return [StreamSpec("sync", "float", self._dim("sync"))]
        out = []
        for rep in self.fusion_streams:
            if rep == "argnn":
                out.append(StreamSpec("rh", "float", self._dim("rh")))
                out.append(StreamSpec("lh", "float", self._dim("lh")))
            elif rep == "pitch":
                out.append(StreamSpec("pitch", "tokens", self.pitch_embed_dim))
            else:
                out.append(StreamSpec(rep, "float", self._dim(rep)))
        if len(out) < 2:
            raise ConfigError("late fusion needs at least two streams")
        return out

    def _dim(self, name: str) -> int:
        if name not in self.input_dims:
            raise ConfigError(f"input_dims missing feature width for {name!r}")
        return int(self.input_dims[name])

    @property
    def branch_count(self) -> int:
        return len(self.streams())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_streams"] = list(self.fusion_streams)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ClassifierConfig":
        obj = dict(obj)
        obj["fusion_streams"] = tuple(obj.get("fusion_streams", ("argnn", "virtuoso")))
        return cls(**obj)


@dataclass
class PredictionRecord:
    piece_id: str
    head: str
    k: int
    distribution: np.ndarray
    decoded: int | None
    attention: dict[str, np.ndarray] = field(default_factory=dict)

    def top_attention(self, top: int = 5) -> dict[str, list[list[float]]]:
        out = {}
        for name, alpha in self.attention.items():
            if alpha is None or alpha.size == 0:
                out[name] = []
                continue
            order = np.argsort(-alpha)[:top]
            out[name] = [[int(i), float(alpha[i])] for i in order]
        return out

    def to_dict(self, top: int = 5) -> dict:
        return {
            "piece_id": self.piece_id,
            "head": self.head,
            "k": self.k,
            "level": self.decoded,
            "distribution": [float(v) for v in self.distribution],
            "top_attention": self.top_attention(top),
        }


def criterion_sum_grad(head, raw, labels, k, weights=None, alpha=1.0):
    """Per-sample loss vector plus gradients w.r.t. the raw head outputs."""
    if head == "nll":
        per, dlogp = nll_sum_grad(raw, labels, k, weights)
        return per, {"main": dlogp}
    if head == "regclass":
        log_probs, scalar = raw
        per, dlogp, dscalar = regclass_sum_grad(
            log_probs, scalar, labels, k, alpha, weights
        )
        return per, {"main": dlogp, "scalar": dscalar}
    if head == "msmooth":
        per, dprobs = msmooth_sum_grad(raw, labels, k, weights=weights)
        return per, {"main": dprobs}
    if head == "ordinal":
        per, dpred = ordinal_sum_grad(raw, labels, k)
        return per, {"main": dpred}
    if head == "coral":
        g, biases = raw
        per, dg, dbias = coral_sum_grad(g, biases, labels, k)
        return per, {"main": dg, "bias": dbias}
    raise ConfigError(f"unknown head {head!r}")


class DifficultyModel:
    """Trainable classifier over one or more per-note feature streams."""

    def __init__(self, config: ClassifierConfig):
        self.config = config
        self.store = ParameterStore()
        self.streams = config.streams()
        self._gru_configs: dict[str, GruLayerConfig] = {}
        rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        tw = config.trunk_width
        for spec in self.streams:
            if spec.kind == "tokens":
                self.store.xavier(
                    f"{spec.name}.embed", (PITCH_VOCAB, config.pitch_embed_dim), rng
                )
            gcfg = GruLayerConfig(
                input_dim=spec.input_dim,
                hidden_dim=config.hidden_dim,
                num_layers=config.num_layers,
                inter_layer_dropout=config.dropout,
                bidirectional=config.bidirectional,
            )
            self._gru_configs[spec.name] = gcfg
            gru_init(self.store, f"{spec.name}.gru", gcfg, rng)
            self.store.xavier(f"{spec.name}.att.w", (tw, tw), rng)
            self.store.zeros(f"{spec.name}.att.b", (tw,))
            self.store.xavier(f"{spec.name}.att.c", (tw,), rng)

        n_streams = len(self.streams)
        if config.fusion == "att":
            self.store.xavier("fuse.att.w", (tw, tw), rng)
            self.store.zeros("fuse.att.b", (tw,))
            self.store.xavier("fuse.att.c", (tw,), rng)
        elif config.fusion == "int":
            dh = tw // config.fusion_heads
            for j in range(config.fusion_heads):
                self.store.xavier(f"fuse.int.wq{j}", (dh, tw), rng)
                self.store.xavier(f"fuse.int.wk{j}", (dh, tw), rng)
                self.store.xavier(f"fuse.int.wv{j}", (dh, tw), rng)
            self.store.xavier("fuse.int.wres", (tw, tw), rng)

        fc_in = self._fc_input_width(n_streams)
        out_k = 1 if config.head == "coral" else config.k
        self.store.xavier("head.fc.w", (out_k, fc_in), rng)
        self.store.zeros("head.fc.b", (out_k,))
        if config.head == "regclass":
            self.store.xavier("head.scalar.w", (1, fc_in), rng)
            self.store.zeros("head.scalar.b", (1,))
        elif config.head == "coral":
            self.store.zeros("head.bias", (config.k - 1,))

    def _fc_input_width(self, n_streams: int) -> int:
        tw = self.config.trunk_width
        fusion = self.config.fusion
        if fusion in ("none", "sync"):
            return tw * n_streams  # one trunk each; argnn concatenates two
        if fusion in ("sum", "att"):
            return tw
        if fusion in ("concat", "int"):
            return tw * n_streams
        raise ConfigError(f"unknown fusion {fusion!r}")

    # -- forward -----------------------------------------------------------

    def _trunk_forward(self, spec: StreamSpec, x, train, rng):
        batch = x.shape[0]
        if x.shape[1] == 0:
            log.debug("stream %s: empty branch, zero summary", spec.name)
            return np.zeros((batch, self.config.trunk_width)), None, ("empty", batch)
        if spec.kind == "tokens":
            tokens = x.reshape(batch, -1).astype(np.int64)
            emb, emb_cache = embedding_forward(tokens, self.store[f"{spec.name}.embed"])
        else:
            emb, emb_cache = np.asarray(x, dtype=np.float64), None
        layers = gru_params(self.store, f"{spec.name}.gru", self._gru_configs[spec.name])
        hidden, gru_cache = gru_forward(
            emb, layers, self._gru_configs[spec.name], train=train, rng=rng
        )
        summary, alpha, att_cache = attention_forward(
            hidden,
            self.store[f"{spec.name}.att.w"],
            self.store[f"{spec.name}.att.b"],
            self.store[f"{spec.name}.att.c"],
        )
        return summary, alpha, ("full", emb_cache, gru_cache, att_cache)

    def _trunk_backward(self, spec: StreamSpec, dsummary, cache):
        if cache[0] == "empty":
            return
        _, emb_cache, gru_cache, att_cache = cache
        dh = attention_backward(
            dsummary,
            att_cache,
            self.store[f"{spec.name}.att.w"],
            self.store[f"{spec.name}.att.b"],
            self.store[f"{spec.name}.att.c"],
        )
        layers = gru_params(self.store, f"{spec.name}.gru", self._gru_configs[spec.name])
        dx = gru_backward(dh, gru_cache, layers)
        if spec.kind == "tokens":
            embedding_backward(dx, emb_cache, self.store[f"{spec.name}.embed"])

    def _autoint_forward(self, y):
        cfg = self.config
        batch, n_fields, h = y.shape
        dh = cfg.trunk_width // cfg.fusion_heads
        outs, head_caches = [], []
        for j in range(cfg.fusion_heads):
            wq = self.store[f"fuse.int.wq{j}"].value
            wk = self.store[f"fuse.int.wk{j}"].value
            wv = self.store[f"fuse.int.wv{j}"].value
            q = y @ wq.T
            k_ = y @ wk.T
            v = y @ wv.T
            scores = q @ np.transpose(k_, (0, 2, 1))
            att = softmax(scores, axis=-1)
            outs.append(att @ v)
            head_caches.append((q, k_, v, att))
        concat = np.concatenate(outs, axis=-1)
        res = y @ self.store["fuse.int.wres"].value.T
        pre = concat + res
        out = np.maximum(pre, 0.0)
        return out.reshape(batch, n_fields * h), (y, head_caches, pre)

    def _autoint_backward(self, dflat, cache):
        cfg = self.config
        y, head_caches, pre = cache
        batch, n_fields, h = y.shape
        dh = cfg.trunk_width // cfg.fusion_heads
        dout = dflat.reshape(batch, n_fields, h)
        dpre = dout * (pre > 0.0)
        y2 = y.reshape(-1, h)
        dpre2 = dpre.reshape(-1, h)
        wres = self.store["fuse.int.wres"]
        wres.grad += dpre2.T @ y2
        dy = dpre @ wres.value
        for j in range(cfg.fusion_heads):
            q, k_, v, att = head_caches[j]
            do = dpre[..., j * dh : (j + 1) * dh]
            datt = do @ np.transpose(v, (0, 2, 1))
            dv = np.transpose(att, (0, 2, 1)) @ do
            dscores = att * (datt - np.sum(att * datt, axis=-1, keepdims=True))
            dq = dscores @ k_
            dk = np.transpose(dscores, (0, 2, 1)) @ q
            for name, dmat in (("wq", dq), ("wk", dk), ("wv", dv)):
                p = self.store[f"fuse.int.{name}{j}"]
                p.grad += dmat.reshape(-1, dh).T @ y2
                dy += dmat @ p.value
        return dy

    def _fuse_forward(self, summaries):
        fusion = self.config.fusion
        if fusion in ("none", "sync"):
            if len(summaries) == 1:
                return summaries[0], None
            return np.concatenate(summaries, axis=1), None
        widths = {s.shape[1] for s in summaries}
        if fusion in ("sum", "att", "int") and len(widths) != 1:
            raise WidthMismatch(f"{fusion} fusion needs equal widths, got {widths}")
        if fusion == "concat":
            return np.concatenate(summaries, axis=1), None
        if fusion == "sum":
            return np.sum(summaries, axis=0), None
        stacked = np.stack(summaries, axis=1)  # (batch, streams, h)
        if fusion == "att":
            fused, alpha, cache = attention_forward(
                stacked,
                self.store["fuse.att.w"],
                self.store["fuse.att.b"],
                self.store["fuse.att.c"],
            )
            return fused, ("att", cache, alpha)
        if fusion == "int":
            fused, cache = self._autoint_forward(stacked)
            return fused, ("int", cache)
        raise ConfigError(f"unknown fusion {fusion!r}")

    def _fuse_backward(self, du, fuse_cache, n_streams, h):
        fusion = self.config.fusion
        if fusion in ("none", "sync", "concat"):
            if n_streams == 1:
                return [du]
            return [du[:, i * h : (i + 1) * h] for i in range(n_streams)]
        if fusion == "sum":
            return [du for _ in range(n_streams)]
        if fusion == "att":
            _, cache, _ = fuse_cache
            dstack = attention_backward(
                du,
                cache,
                self.store["fuse.att.w"],
                self.store["fuse.att.b"],
                self.store["fuse.att.c"],
            )
            return [dstack[:, i, :] for i in range(n_streams)]
        if fusion == "int":
            dstack = self._autoint_backward(du, fuse_cache[1])
            return [dstack[:, i, :] for i in range(n_streams)]
        raise ConfigError(f"unknown fusion {fusion!r}")

    def forward_group(self, items, train=False, rng=None):
        """Run a batch of same-shape items; returns (raw, cache).

        Each item maps stream name to its (T, d) feature matrix; all items
        in the group must agree on every stream's T.
        """
        head = self.config.head
        summaries, alphas, trunk_caches = [], {}, []
        for spec in self.streams:
            try:
                x = np.stack([item[spec.name] for item in items])
            except KeyError as exc:
                raise ShapeMismatch(f"item missing stream {exc}") from exc
            except ValueError as exc:
                raise ShapeMismatch(
                    f"stream {spec.name}: items disagree on shape"
                ) from exc
            if spec.kind == "float" and x.shape[-1] != spec.input_dim:
                raise ShapeMismatch(
                    f"stream {spec.name}: width {x.shape[-1]} != {spec.input_dim}"
                )
            summary, alpha, cache = self._trunk_forward(spec, x, train, rng)
            summaries.append(summary)
            alphas[spec.name] = alpha
            trunk_caches.append(cache)
        fused, fuse_cache = self._fuse_forward(summaries)
        fc_w, fc_b = self.store["head.fc.w"], self.store["head.fc.b"]
        fc_out, fc_cache = linear_forward(fused, fc_w, fc_b)
        scalar_cache = None
        if head == "nll":
            raw = log_softmax(fc_out, axis=1)
            head_cache = ("nll", raw)
        elif head == "regclass":
            log_probs = log_softmax(fc_out, axis=1)
            scalar, scalar_cache = linear_forward(
                fused, self.store["head.scalar.w"], self.store["head.scalar.b"]
            )
            raw = (log_probs, scalar[:, 0])
            head_cache = ("regclass", log_probs)
        elif head in ("msmooth", "ordinal"):
            probs = sigmoid(fc_out)
            raw = probs
            head_cache = (head, probs)
        elif head == "coral":
            g = fc_out[:, 0]
            raw = (g, self.store["head.bias"].value)
            head_cache = ("coral",)
        else:
            raise ConfigError(f"unknown head {head!r}")
        cache = (trunk_caches, fuse_cache, fc_cache, scalar_cache, head_cache, alphas)
        return raw, cache

    def backward_group(self, draw, cache):
        """Backpropagate criterion gradients; accumulates into .grad."""
        trunk_caches, fuse_cache, fc_cache, scalar_cache, head_cache, _ = cache
        head = self.config.head
        kind = head_cache[0]
        if kind != head:
            raise ShapeMismatch("cache does not match configured head")
        if head == "nll":
            log_probs = head_cache[1]
            dlogp = draw["main"]
            dfc = dlogp - np.exp(log_probs) * dlogp.sum(axis=1, keepdims=True)
        elif head == "regclass":
            log_probs = head_cache[1]
            dlogp = draw["main"]
            dfc = dlogp - np.exp(log_probs) * dlogp.sum(axis=1, keepdims=True)
        elif head in ("msmooth", "ordinal"):
            probs = head_cache[1]
            dfc = draw["main"] * probs * (1.0 - probs)
        elif head == "coral":
            dfc = draw["main"][:, None]
            self.store["head.bias"].grad += draw["bias"]
        else:
            raise ConfigError(f"unknown head {head!r}")
        du = linear_backward(
            dfc, fc_cache, self.store["head.fc.w"], self.store["head.fc.b"]
        )
        if head == "regclass":
            du = du + linear_backward(
                draw["scalar"][:, None],
                scalar_cache,
                self.store["head.scalar.w"],
                self.store["head.scalar.b"],
            )
        dsummaries = self._fuse_backward(
            du, fuse_cache, len(self.streams), self.config.trunk_width
        )
        for spec, dsummary, trunk_cache in zip(
            self.streams, dsummaries, trunk_caches
        ):
            self._trunk_backward(spec, dsummary, trunk_cache)

    # -- inference ----------------------------------------------------------

    def raw_rows(self, raw, index: int):
        """Extract one sample's raw head output from a batched structure."""
        head = self.config.head
        if head == "regclass":
            return (raw[0][index], float(raw[1][index]))
        if head == "coral":
            return (float(raw[0][index]), raw[1])
        return raw[index]

    def predict_group(self, items, piece_ids, threshold: float = 0.5):
        raw, cache = self.forward_group(items, train=False)
        alphas = cache[5]
        records = []
        for i, pid in enumerate(piece_ids):
            row = self.raw_rows(raw, i)
            dist = probs_from_head(self.config.head, row, self.config.k)
            decoded = decode_head(self.config.head, row, self.config.k, threshold)
            attention = {
                name: (None if a is None else a[i].copy())
                for name, a in alphas.items()
            }
            records.append(
                PredictionRecord(
                    piece_id=pid,
                    head=self.config.head,
                    k=self.config.k,
                    distribution=dist,
                    decoded=decoded,
                    attention=attention,
                )
            )
        return records

    # -- persistence ---------------------------------------------------------

    def save_bundle(self, bundle_dir: str | Path, experiment: dict | None = None):
        bundle_dir = Path(bundle_dir)
        bundle_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.store, bundle_dir / "checkpoint.bin")
        sidecar = {"classifier": self.config.to_dict()}
        if experiment:
            sidecar["experiment"] = experiment
        (bundle_dir / "config.json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load_bundle(cls, bundle_dir: str | Path):
        bundle_dir = Path(bundle_dir)
        sidecar = json.loads((bundle_dir / "config.json").read_text(encoding="utf-8"))
        config = ClassifierConfig.from_dict(sidecar["classifier"])
        model = cls(config)
        values = load_checkpoint(bundle_dir / "checkpoint.bin")
        missing = set(model.store.names()) ^ set(values)
        if missing:
            raise ConfigError(f"checkpoint disagrees with config: {sorted(missing)}")
        for name in model.store.names():
            if model.store[name].value.shape != values[name].shape:
                raise ConfigError(f"checkpoint shape mismatch for {name}")
            model.store[name].value[...] = values[name]
        return model, sidecar.get("experiment", {})


def ensemble_predict(
    per_model_records: list[list[PredictionRecord]],
) -> list[PredictionRecord]:
    """Average member class distributions per piece; argmax decodes.

    Members must cover identical piece sets with identical K. Ties in the
    averaged distribution resolve to the lower (easier) level. A member's
    undefined decode does not exclude its distribution from the mean.
    """
    if not per_model_records:
        raise CoverageMismatch("ensemble needs at least one member")
    base = {r.piece_id: r for r in per_model_records[0]}
    k = per_model_records[0][0].k if per_model_records[0] else 0
    for records in per_model_records:
        ids = {r.piece_id for r in records}
        if ids != set(base):
            raise CoverageMismatch("ensemble members cover different pieces")
        for r in records:
            if r.k != k:
                raise CoverageMismatch("ensemble members disagree on K")
    by_id = [{r.piece_id: r for r in records} for records in per_model_records]
    out = []
    for pid in sorted(base):
        mean = np.mean([m[pid].distribution for m in by_id], axis=0)
        out.append(
            PredictionRecord(
                piece_id=pid,
                head="ensemble",
                k=k,
                distribution=mean,
                decoded=int(np.argmax(mean)) + 1,
            )
        )
    return out
