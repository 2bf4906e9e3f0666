"""Fitting the three composition scalars on frozen encoder outputs.

Each (caption, region) pair becomes one binary-classification sample:
label 1 for the positive caption, 0 for negatives.  The logit is the
cosine similarity between the region feature and the composed text
embedding, scaled by a fixed constant so the cross-entropy has usable
dynamic range; the scale is not trainable, keeping the parameter set to
exactly three scalars.  Optimization is full-batch gradient descent with
a backtracking halving line search, so the loss trace never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .compose import WeightTriplet
from .encoder import Encoder, encode_pair
from .masks import RestrictAxis
from .tokens import match_positions, tokenize

LOGIT_SCALE = 10.0


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 1e-2
    epochs: int = 200
    init: WeightTriplet = field(default_factory=WeightTriplet.identity)
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")


@dataclass
class FitBatch:
    """Stacked per-sample arrays; rows with ``skip`` compose to u_global."""

    u_global: np.ndarray  # (n, d)
    u_attri: np.ndarray   # (n, d)
    skip: np.ndarray      # (n,) bool
    region: np.ndarray    # (n, d)
    labels: np.ndarray    # (n,) float 0/1

    def __len__(self) -> int:
        return self.labels.shape[0]


def make_batch(samples) -> FitBatch:
    """Stack (u_global, u_attri, skip, region_feature, label) tuples."""
    samples = list(samples)
    if not samples:
        raise FitError("empty batch")
    return FitBatch(
        u_global=np.stack([s[0] for s in samples]),
        u_attri=np.stack([s[1] for s in samples]),
        skip=np.array([bool(s[2]) for s in samples]),
        region=np.stack([s[3] for s in samples]),
        labels=np.array([float(s[4]) for s in samples]),
    )


def _composed(t: WeightTriplet, batch: FitBatch) -> np.ndarray:
    composed = t.w_global * batch.u_global + t.w_attri * batch.u_attri + t.bias
    return np.where(batch.skip[:, None], batch.u_global, composed)


def _cosines(batch: FitBatch, composed: np.ndarray):
    norm_r = np.linalg.norm(batch.region, axis=1)
    norm_c = np.linalg.norm(composed, axis=1)
    dots = np.einsum("ij,ij->i", batch.region, composed)
    return dots / (norm_r * norm_c), norm_r, norm_c


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                    np.exp(z) / (1.0 + np.exp(z)))


def fit_loss(t: WeightTriplet, batch: FitBatch, l2: float = 0.0) -> float:
    """Mean binary cross-entropy of the scaled cosine logits, plus L2."""
    cos, _, _ = _cosines(batch, _composed(t, batch))
    p = _sigmoid(LOGIT_SCALE * cos)
    y = batch.labels
    bce = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean()
    return float(bce) + l2 * (t.w_global**2 + t.w_attri**2 + t.bias**2)


def grad_triplet(t: WeightTriplet, batch: FitBatch, l2: float = 0.0) -> np.ndarray:
    """Analytic gradient of fit_loss_l2 at ``t``: (g_wglobal, g_wattri, g_bias)."""
    composed = _composed(t, batch)
    cos, norm_r, norm_c = _cosines(batch, composed)
    p = _sigmoid(LOGIT_SCALE * cos)
    n = len(batch)
    # d(bce)/d(logit) = (p - y) / n; chain through cos and the composition
    dlogit = (p - batch.labels) / n
    # d(cos)/d(composed) = r / (|r| |c|) - cos * c / |c|^2
    dcos_dc = (batch.region / (norm_r * norm_c)[:, None]
               - cos[:, None] * composed / (norm_c**2)[:, None])
    weight = (dlogit * LOGIT_SCALE)[:, None] * dcos_dc
    weight = np.where(batch.skip[:, None], 0.0, weight)
    g_wg = float(np.einsum("ij,ij->", weight, batch.u_global))
    g_wa = float(np.einsum("ij,ij->", weight, batch.u_attri))
    g_b = float(weight.sum())
    reg = 2.0 * l2 * np.array([t.w_global, t.w_attri, t.bias])
    return np.array([g_wg, g_wa, g_b]) + reg


@dataclass
class FitTrace:
    losses: list[float]
    triplets: list[WeightTriplet]
    final: WeightTriplet


def fit_batch(batch: FitBatch, cfg: FitConfig) -> FitTrace:
    """Full-batch descent; backtracking halves the step on non-decrease."""
    labels = set(batch.labels.tolist())
    if labels <= {0.0} or labels <= {1.0}:
        raise FitError("degenerate dataset: needs both positive and negative labels")

    t = cfg.init
    loss = fit_loss(t, batch, cfg.l2)
    losses: list[float] = []
    triplets: list[WeightTriplet] = []
    for _ in range(cfg.epochs):
        grad = grad_triplet(t, batch, cfg.l2)
        step = cfg.learning_rate
        accepted = None
        for _ in range(60):
            candidate = WeightTriplet(t.w_global - step * grad[0],
                                      t.w_attri - step * grad[1],
                                      t.bias - step * grad[2])
            candidate_loss = fit_loss(candidate, batch, cfg.l2)
            if candidate_loss <= loss:
                accepted = (candidate, candidate_loss)
                break
            step /= 2.0
        if accepted is not None:
            t, loss = accepted
        losses.append(loss)
        triplets.append(t)
    return FitTrace(losses=losses, triplets=triplets, final=t)


def build_batch(instances, enc: Encoder, extractor,
                restrict_axis: RestrictAxis = RestrictAxis.QUERIES) -> FitBatch:
    """Embed every caption of every object once (the encoder is frozen)."""
    samples = []
    pair_cache: dict[str, tuple] = {}

    def embed(caption):
        if caption not in pair_cache:
            seq = tokenize(caption, enc.config.seq_len)
            attrs = extractor(caption)
            phi = match_positions(seq, list(attrs.words), enc.config.flavor)
            pair_cache[caption] = encode_pair(seq, phi, enc,
                                              restrict_axis=restrict_axis)
        return pair_cache[caption]

    for inst in instances:
        for obj, vocab in zip(inst.objects, inst.vocabs):
            if obj.region_feature is None:
                raise FitError("objects lack region features; "
                               "load the dataset with an encoder")
            for label, caption in [(1.0, vocab.pos),
                                   *[(0.0, c) for c in vocab.neg]]:
                pair = embed(caption)
                samples.append((pair.u_global, pair.u_attri, pair.skip,
                                obj.region_feature, label))
    return make_batch(samples)


def fit(instances, enc: Encoder, extractor, cfg: FitConfig,
        restrict_axis: RestrictAxis = RestrictAxis.QUERIES) -> FitTrace:
    """Fit the composition triplet on a generated benchmark subset."""
    return fit_batch(build_batch(instances, enc, extractor, restrict_axis), cfg)


def write_trace_csv(trace: FitTrace, path, provenance: dict) -> None:
    import json

    lines = [f"# provenance: {json.dumps(provenance, sort_keys=True)}",
             "epoch,loss,w_global,w_attri,bias"]
    for epoch, (loss, t) in enumerate(zip(trace.losses, trace.triplets)):
        lines.append(f"{epoch},{loss:.10f},{t.w_global:.10f},"
                     f"{t.w_attri:.10f},{t.bias:.10f}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
