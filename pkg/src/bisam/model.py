"""Dual-pathway self-attention classifier.

Seven stages: input tokens, linear embedding, sinusoidal positional encoding
(signal tokens only; descriptive-variable order is arbitrary), one attention
block per pathway (self-attention, dropout, feed-forward, layer norm, with
residual connections), average pooling over tokens, dropout, and a final
dense layer producing two logits.

Two pathways always run with independent weights. In multi-modal mode one
pathway reads the signal tokens and the other the descriptive tokens; in
unimodal modes both read the same sequence. Pooled outputs are fused by
concatenation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .corpus import DescriptiveVector
from .rng import stream
from .spectral import BandPowerTable
from .tensor import Tensor

CHECKPOINT_FORMAT_VERSION = 1

SIGNAL_ONLY = "SignalOnly"
DESCRIPTIVE_ONLY = "DescriptiveOnly"
MULTI_MODAL = "MultiModal"
MODALITIES = (SIGNAL_ONLY, DESCRIPTIVE_ONLY, MULTI_MODAL)

PATHWAYS = ("path0", "path1")
LAYER_STAGES = ("input", "embedding", "positional_encoding", "attention",
                "average_pooling", "dropout", "dense")


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or inconsistent with the requested config."""


@dataclass(frozen=True)
class ModelConfig:
    modality: str = MULTI_MODAL
    channel_subset: tuple[str, ...] = ()
    d_model: int = 32
    n_heads: int = 4
    d_ff: int = 64
    p_drop: float = 0.2
    n_bands: int = 4
    n_dv: int = 3
    seed: int = 0
    use_positional: bool = True  # diagnostic switch

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.modality != DESCRIPTIVE_ONLY and not self.channel_subset:
            raise ValueError("signal modalities need a nonempty channel subset")

    def pathway_feature_dims(self) -> tuple[int, int]:
        if self.modality == SIGNAL_ONLY:
            return self.n_bands, self.n_bands
        if self.modality == DESCRIPTIVE_ONLY:
            return 2, 2
        return self.n_bands, 2


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # [seq_len, feature_dim]
    kind: str           # "signal" | "descriptive"

    def __post_init__(self):
        if self.kind not in ("signal", "descriptive"):
            raise ValueError(f"unknown token kind {self.kind!r}")
        if self.tokens.ndim != 2:
            raise ValueError("tokens must be [seq_len, feature_dim]")


def tokenize(table: BandPowerTable, id: str, dv: DescriptiveVector | None,
             cfg: ModelConfig) -> list[TokenSequence]:
    """Token sequences for one subject, per the configured modality."""
    seqs = []
    if cfg.modality in (SIGNAL_ONLY, MULTI_MODAL):
        idx = table.channel_indices(cfg.channel_subset)
        seqs.append(TokenSequence(tokens=table.feature_row(id)[idx], kind="signal"))
    if cfg.modality in (DESCRIPTIVE_ONLY, MULTI_MODAL):
        if dv is None:
            raise ValueError("descriptive modality needs an encoded DescriptiveVector")
        tokens = np.stack([dv.values, dv.present_mask], axis=1)
        seqs.append(TokenSequence(tokens=tokens, kind="descriptive"))
    return seqs


# ---------------------------------------------------------------------------
# weights

def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    d, dff = cfg.d_model, cfg.d_ff
    for pw, fdim in zip(PATHWAYS, cfg.pathway_feature_dims()):
        shapes[f"{pw}.embed.w"] = (fdim, d)
        shapes[f"{pw}.embed.b"] = (d,)
        # projection biases omitted: a key bias cancels in softmax (zero
        # gradient forever), the rest are absorbed by the layer-norm affine
        for proj in ("q", "k", "v", "o"):
            shapes[f"{pw}.attn.w{proj}"] = (d, d)
        shapes[f"{pw}.ffn.w1"] = (d, dff)
        shapes[f"{pw}.ffn.b1"] = (dff,)
        shapes[f"{pw}.ffn.w2"] = (dff, d)
        shapes[f"{pw}.ffn.b2"] = (d,)
        for ln in ("ln1", "ln2"):
            shapes[f"{pw}.{ln}.g"] = (d,)
            shapes[f"{pw}.{ln}.b"] = (d,)
    shapes["head.w"] = (2 * d, 2)
    shapes["head.b"] = (2,)
    return shapes


@dataclass
class BisamWeights:
    params: dict[str, Tensor]
    trained: bool = False

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            out[name] = np.zeros_like(p.data) if p.grad is None else p.grad
        return out


def init_weights(cfg: ModelConfig) -> BisamWeights:
    """Glorot-uniform matrices, zero biases, unit layer-norm gains."""
    params = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            data = stream(cfg.seed, f"init/{name}").uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return BisamWeights(params=params)


# ---------------------------------------------------------------------------
# forward

def sinusoidal_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same)."""
    pos = np.arange(seq_len, dtype=float)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=float)[None, :]
    angles = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((seq_len, d_model))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe


def embed(tokens: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.add(T.matmul(tokens, w), b)


def positional_encode(emb: Tensor) -> Tensor:
    pe = sinusoidal_encoding(emb.shape[-2], emb.shape[-1])
    return T.add_const(emb, pe)


def _self_attention(x: Tensor, weights: BisamWeights, pw: str, cfg: ModelConfig,
                    collect: dict | None) -> Tensor:
    d_head = cfg.d_model // cfg.n_heads
    q = T.matmul(x, weights[f"{pw}.attn.wq"])
    k = T.matmul(x, weights[f"{pw}.attn.wk"])
    v = T.matmul(x, weights[f"{pw}.attn.wv"])
    heads = []
    for h in range(cfg.n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh, kh, vh = (T.slice_last(t, lo, hi) for t in (q, k, v))
        scores = T.scale(T.matmul(qh, T.transpose_last2(kh)), 1.0 / np.sqrt(d_head))
        attn = T.softmax(scores, axis=-1)
        if collect is not None:
            collect.setdefault(f"{pw}.attn_weights", []).append(attn.data)
        heads.append(T.matmul(attn, vh))
    ctx = T.concat(heads, axis=-1)
    if collect is not None:
        collect[f"{pw}.context"] = ctx.data
    return T.matmul(ctx, weights[f"{pw}.attn.wo"])


def attention_block(x: Tensor, weights: BisamWeights, pw: str, cfg: ModelConfig,
                    mode: str, rng=None, collect: dict | None = None) -> Tensor:
    """Self-attention and feed-forward sublayers, each wrapped in
    dropout + residual + layer norm."""
    sa = _self_attention(x, weights, pw, cfg, collect)
    y1 = T.layer_norm(T.add(x, T.dropout(sa, cfg.p_drop, mode, rng)),
                      weights[f"{pw}.ln1.g"], weights[f"{pw}.ln1.b"])
    hidden = T.relu(T.add(T.matmul(y1, weights[f"{pw}.ffn.w1"]), weights[f"{pw}.ffn.b1"]))
    ff = T.add(T.matmul(hidden, weights[f"{pw}.ffn.w2"]), weights[f"{pw}.ffn.b2"])
    return T.layer_norm(T.add(y1, T.dropout(ff, cfg.p_drop, mode, rng)),
                        weights[f"{pw}.ln2.g"], weights[f"{pw}.ln2.b"])


def forward_batch(batch: list[tuple[np.ndarray, str]], cfg: ModelConfig,
                  weights: BisamWeights, mode: str, rng=None,
                  collect: dict | None = None) -> Tensor:
    """Logits [batch, 2] for stacked pathway inputs.

    ``batch`` holds one ([n, seq_len, feature_dim], kind) entry per pathway;
    unimodal configs pass the same stacked sequence twice.
    """
    if len(batch) != 2:
        raise ValueError("expected one input per pathway (two total)")
    stages = [] if collect is not None else None
    pooled = []
    for pw, (tokens, kind) in zip(PATHWAYS, batch):
        if stages is not None and pw == PATHWAYS[0]:
            stages.append("input")
        x = embed(Tensor(np.asarray(tokens, dtype=float)),
                  weights[f"{pw}.embed.w"], weights[f"{pw}.embed.b"])
        if stages is not None and pw == PATHWAYS[0]:
            stages.append("embedding")
        if kind == "signal" and cfg.use_positional:
            x = positional_encode(x)
        if stages is not None and pw == PATHWAYS[0]:
            stages.append("positional_encoding")
        x = attention_block(x, weights, pw, cfg, mode, rng, collect)
        if stages is not None and pw == PATHWAYS[0]:
            stages.append("attention")
        h = T.mean(x, axis=-2)
        if stages is not None and pw == PATHWAYS[0]:
            stages.append("average_pooling")
        if collect is not None:
            collect[f"{pw}.pooled"] = h.data
        pooled.append(h)
    fused = T.dropout(T.concat(pooled, axis=-1), cfg.p_drop, mode, rng)
    if stages is not None:
        stages.append("dropout")
    logits = T.add(T.matmul(fused, weights["head.w"]), weights["head.b"])
    if stages is not None:
        stages.append("dense")
        collect["stages"] = stages
    return logits


def _pathway_pair(seqs: list[TokenSequence], cfg: ModelConfig) -> list[TokenSequence]:
    if cfg.modality == MULTI_MODAL:
        if len(seqs) != 2 or seqs[0].kind != "signal" or seqs[1].kind != "descriptive":
            raise ValueError("multi-modal forward needs (signal, descriptive) sequences")
        return seqs
    if len(seqs) != 1:
        raise ValueError(f"{cfg.modality} forward takes exactly one sequence")
    expected = "signal" if cfg.modality == SIGNAL_ONLY else "descriptive"
    if seqs[0].kind != expected:
        raise ValueError(f"{cfg.modality} forward needs a {expected} sequence")
    return [seqs[0], seqs[0]]


def bisam_forward(seqs: list[TokenSequence], cfg: ModelConfig, weights: BisamWeights,
                  mode: str = "eval", rng=None, collect: dict | None = None) -> np.ndarray:
    """Logits [2] for one subject."""
    pair = _pathway_pair(seqs, cfg)
    batch = [(s.tokens[None, :, :], s.kind) for s in pair]
    return forward_batch(batch, cfg, weights, mode, rng, collect).data[0]


# ---------------------------------------------------------------------------
# persistence

def save_checkpoint(weights: BisamWeights, cfg: ModelConfig, path) -> None:
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": {**asdict(cfg), "channel_subset": list(cfg.channel_subset)},
        "trained": weights.trained,
        "params": {
            name: {"shape": list(p.data.shape), "data": p.data.ravel().tolist()}
            for name, p in weights.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path, expect_cfg: ModelConfig | None = None):
    """Returns (weights, cfg); verifies shapes against the embedded config,
    and against ``expect_cfg`` when given."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: malformed checkpoint ({e})") from e
    if doc.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    raw = doc["config"]
    raw["channel_subset"] = tuple(raw["channel_subset"])
    cfg = ModelConfig(**raw)
    if expect_cfg is not None:
        for f in ("modality", "channel_subset", "d_model", "n_heads", "d_ff",
                  "n_bands", "n_dv"):
            if getattr(cfg, f) != getattr(expect_cfg, f):
                raise CheckpointError(
                    f"checkpoint {f} {getattr(cfg, f)!r} does not match the "
                    f"requested run's {getattr(expect_cfg, f)!r}")
    expected = _param_shapes(cfg)
    params = {}
    for name, shape in expected.items():
        if name not in doc["params"]:
            raise CheckpointError(f"checkpoint missing parameter {name!r}")
        entry = doc["params"][name]
        if tuple(entry["shape"]) != shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(entry['shape'])}, "
                f"config needs {shape}")
        data = np.array(entry["data"], dtype=float).reshape(shape)
        params[name] = Tensor(data, requires_grad=True)
    return BisamWeights(params=params, trained=bool(doc.get("trained", False))), cfg
