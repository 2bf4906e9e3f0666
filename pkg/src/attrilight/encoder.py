"""Deterministic toy transformer text encoder.

A small frozen encoder stands in for the pretrained text towers of
detection models: same interface (token ids in, pooled embedding out, an
additive attention mask steering what is encoded), none of the weights.
Construction is fully determined by (config, seed); weight matrices are
drawn uniformly from [-1/sqrt(d_model), 1/sqrt(d_model)], layer-norm
parameters start at identity.  Everything runs in float64 so checksums
and embeddings are bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .masks import (
    NEG_INF,
    MaskDegenerateRowError,
    RestrictAxis,
    attribute_mask_1d,
    bert_attribute_mask,
    bert_default_mask,
    clip_attribute_mask,
    clip_default_mask,
    token_mask_1d,
)
from .tokens import VOCAB_SIZE, AttributePositions, Flavor, Kind, TokenSequence

_LN_EPS = 1e-5


class EncoderConfigError(ValueError):
    """Invalid encoder dimensions."""


@dataclass(frozen=True)
class EncoderConfig:
    flavor: Flavor
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    seq_len: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.d_model <= 0 or self.n_layers <= 0 or self.n_heads <= 0:
            raise EncoderConfigError("dimensions must be positive")
        if self.seq_len < 3:
            raise EncoderConfigError("seq_len must hold START, END and one token")
        if self.d_model % self.n_heads != 0:
            raise EncoderConfigError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )

    def to_dict(self) -> dict:
        return {
            "flavor": self.flavor.value,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "seq_len": self.seq_len,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            flavor=Flavor(d["flavor"]),
            d_model=int(d["d_model"]),
            n_layers=int(d["n_layers"]),
            n_heads=int(d["n_heads"]),
            seq_len=int(d["seq_len"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ff1: np.ndarray
    ff2: np.ndarray
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray


@dataclass(frozen=True)
class Encoder:
    config: EncoderConfig
    token_embedding: np.ndarray
    positional_embedding: np.ndarray
    layers: tuple[LayerWeights, ...]

    def weight_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            "token_embedding": self.token_embedding,
            "positional_embedding": self.positional_embedding,
        }
        for i, layer in enumerate(self.layers):
            for name in ("wq", "wk", "wv", "wo", "ff1", "ff2",
                         "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
                arrays[f"layer{i}_{name}"] = getattr(layer, name)
        return arrays

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.weight_arrays()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.weight_arrays()[name]).tobytes())
        return digest.hexdigest()


def init_encoder(config: EncoderConfig) -> Encoder:
    """Build a frozen encoder; identical (config, seed) gives identical weights."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    scale = 1.0 / np.sqrt(config.d_model)
    d = config.d_model

    def draw(*shape):
        return rng.uniform(-scale, scale, size=shape)

    token_embedding = draw(VOCAB_SIZE, d)
    positional_embedding = draw(config.seq_len, d)
    layers = []
    for _ in range(config.n_layers):
        layers.append(
            LayerWeights(
                wq=draw(d, d),
                wk=draw(d, d),
                wv=draw(d, d),
                wo=draw(d, d),
                ff1=draw(d, 4 * d),
                ff2=draw(4 * d, d),
                ln1_gamma=np.ones(d),
                ln1_beta=np.zeros(d),
                ln2_gamma=np.ones(d),
                ln2_beta=np.zeros(d),
            )
        )
    return Encoder(
        config=config,
        token_embedding=token_embedding,
        positional_embedding=positional_embedding,
        layers=tuple(layers),
    )


def row_softmax(scores: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with max-subtraction.

    Entries carrying the additive NEG_INF sentinel come out exactly zero;
    a row that is NEG_INF everywhere comes out uniform (the sentinel is
    finite, so the row maximum cancels it instead of producing NaN).
    """
    shifted = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(shifted)
    return weights / weights.sum(axis=-1, keepdims=True)


def attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    mask: np.ndarray,
    strict: bool = True,
    return_weights: bool = False,
):
    """Masked scaled dot-product attention: softmax(q k^T / sqrt(d_k) + mask) v.

    Raises:
        MaskDegenerateRowError: with ``strict=True`` (the default) when a
            mask row has no unmasked entry.  ``strict=False`` lets such
            rows degrade to uniform attention, which is how the encoder
            runs ablation masks that cover the special tokens.
    """
    if q.shape != k.shape or k.shape[0] != v.shape[0]:
        raise ValueError("q, k, v shapes disagree")
    if mask.shape != (q.shape[0], k.shape[0]):
        raise ValueError("mask shape disagrees with q, k")
    if strict:
        unmasked = (mask == 0).any(axis=1)
        if not unmasked.all():
            bad = int(np.flatnonzero(~unmasked)[0])
            raise MaskDegenerateRowError(f"mask row {bad} is fully masked")
    scores = q @ k.T / np.sqrt(q.shape[1]) + mask
    weights = row_softmax(scores)
    out = weights @ v
    if return_weights:
        return out, weights
    return out


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS) * gamma + beta


def _multi_head_attention(
    x: np.ndarray, layer: LayerWeights, mask: np.ndarray, n_heads: int
) -> np.ndarray:
    seq_len, d = x.shape
    d_head = d // n_heads
    q = (x @ layer.wq).reshape(seq_len, n_heads, d_head).transpose(1, 0, 2)
    k = (x @ layer.wk).reshape(seq_len, n_heads, d_head).transpose(1, 0, 2)
    v = (x @ layer.wv).reshape(seq_len, n_heads, d_head).transpose(1, 0, 2)
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(d_head) + mask[None, :, :]
    weights = row_softmax(scores)
    heads = (weights @ v).transpose(1, 0, 2).reshape(seq_len, d)
    return heads @ layer.wo


def encode(seq: TokenSequence, mask: np.ndarray, enc: Encoder) -> np.ndarray:
    """Run the full stack under ``mask`` and pool one embedding vector.

    Pooling follows the flavor: the causal flavor reads the END position,
    the bidirectional flavor averages the TEXT positions (the default
    mask confines every special-token row to itself, so any single
    special position would be caption-independent).
    """
    cfg = enc.config
    if seq.total_len != cfg.seq_len:
        raise ValueError(
            f"sequence length {seq.total_len} != encoder seq_len {cfg.seq_len}"
        )
    if mask.shape != (cfg.seq_len, cfg.seq_len):
        raise ValueError("mask shape disagrees with encoder seq_len")

    x = enc.token_embedding[np.array(seq.ids)] + enc.positional_embedding
    for layer in enc.layers:
        x = _layer_norm(x + _multi_head_attention(x, layer, mask, cfg.n_heads),
                        layer.ln1_gamma, layer.ln1_beta)
        ff = np.maximum(x @ layer.ff1, 0.0) @ layer.ff2
        x = _layer_norm(x + ff, layer.ln2_gamma, layer.ln2_beta)

    if cfg.flavor is Flavor.CAUSAL:
        pooled = x[seq.end_index]
    else:
        text = seq.text_positions()
        pooled = x[list(text)].mean(axis=0) if text else x[0]
    return pooled.copy()


def default_mask_for(seq: TokenSequence, flavor: Flavor) -> np.ndarray:
    if flavor is Flavor.CAUSAL:
        return clip_default_mask(seq.total_len)
    return bert_default_mask(token_mask_1d(seq))


def attribute_mask_for(
    seq: TokenSequence,
    phi: AttributePositions,
    flavor: Flavor,
    restrict_axis: RestrictAxis = RestrictAxis.QUERIES,
    check_rows: bool = True,
) -> np.ndarray:
    if flavor is Flavor.CAUSAL:
        return clip_attribute_mask(seq.total_len, phi, check_rows=check_rows)
    theta = attribute_mask_1d(seq, phi)
    return bert_attribute_mask(theta, token_mask_1d(seq), restrict_axis=restrict_axis)


class EncodedPair(NamedTuple):
    u_global: np.ndarray
    u_attri: np.ndarray
    skip: bool


def encode_pair(
    seq: TokenSequence,
    phi: AttributePositions,
    enc: Encoder,
    restrict_axis: RestrictAxis = RestrictAxis.QUERIES,
    check_rows: bool = True,
) -> EncodedPair:
    """Encode under the default mask and the attribute-restricted mask.

    When phi holds no TEXT position (no attributes were extracted) the
    attribute embedding is defined equal to the global one and the skip
    flag tells the composer to leave the global embedding untouched.
    """
    flavor = enc.config.flavor
    u_global = encode(seq, default_mask_for(seq, flavor), enc)
    has_text_attr = any(seq.kinds[p] is Kind.TEXT for p in phi.positions)
    if not has_text_attr:
        return EncodedPair(u_global, u_global.copy(), True)
    attr_mask = attribute_mask_for(
        seq, phi, flavor, restrict_axis=restrict_axis, check_rows=check_rows
    )
    u_attri = encode(seq, attr_mask, enc)
    return EncodedPair(u_global, u_attri, False)


# --------------------------------------------------------------------------
# Checkpoint I/O
# --------------------------------------------------------------------------

def save_encoder(enc: Encoder, path) -> None:
    """Write an .npz checkpoint with config header and weight checksum."""
    arrays = enc.weight_arrays()
    header = json.dumps(enc.config.to_dict(), sort_keys=True)
    np.savez(
        path,
        __config__=np.array(header),
        __checksum__=np.array(enc.checksum()),
        **arrays,
    )


def load_encoder(path) -> Encoder:
    """Load a checkpoint written by save_encoder, verifying its checksum."""
    with np.load(path) as data:
        config = EncoderConfig.from_dict(json.loads(str(data["__config__"])))
        stored_checksum = str(data["__checksum__"])
        arrays = {k: data[k] for k in data.files if not k.startswith("__")}
    config.validate()
    layers = []
    for i in range(config.n_layers):
        layers.append(
            LayerWeights(**{
                name: arrays[f"layer{i}_{name}"]
                for name in ("wq", "wk", "wv", "wo", "ff1", "ff2",
                             "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta")
            })
        )
    enc = Encoder(
        config=config,
        token_embedding=arrays["token_embedding"],
        positional_embedding=arrays["positional_embedding"],
        layers=tuple(layers),
    )
    if enc.checksum() != stored_checksum:
        raise ValueError(f"checkpoint checksum mismatch in {path}")
    return enc
