"""Explicit linear composition of global and attribute embeddings.

The attribute-highlighted embedding is w_global * u_global +
w_attri * u_attri + bias, with the bias broadcast as a scalar to every
coordinate.  The triplet (w_global, w_attri, bias) is the entire
trainable parameter set and the unit of transfer between encoders; when
transferring, the bias is zeroed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WeightTriplet:
    w_global: float
    w_attri: float
    bias: float

    def __post_init__(self):
        for name in ("w_global", "w_attri", "bias"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def identity(cls) -> "WeightTriplet":
        return cls(1.0, 0.0, 0.0)

    def to_dict(self, source_model: str | None = None) -> dict:
        d = {"w_global": self.w_global, "w_attri": self.w_attri, "bias": self.bias}
        if source_model is not None:
            d["source_model"] = source_model
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "WeightTriplet":
        return cls(float(d["w_global"]), float(d["w_attri"]), float(d["bias"]))


def compose(
    u_global: np.ndarray,
    u_attri: np.ndarray,
    triplet: WeightTriplet,
    skip: bool = False,
) -> np.ndarray:
    """Linearly fuse the two embeddings; with ``skip`` (no attributes were
    extracted) the global embedding passes through unchanged."""
    if u_global.shape != u_attri.shape:
        raise ValueError("embedding dimensions disagree")
    if skip:
        return u_global.copy()
    return triplet.w_global * u_global + triplet.w_attri * u_attri + triplet.bias


def decompose_category(u_global: np.ndarray, u_attri: np.ndarray) -> np.ndarray:
    """The implied category component: what the global embedding carries
    beyond the attribute-specific one."""
    if u_global.shape != u_attri.shape:
        raise ValueError("embedding dimensions disagree")
    return u_global - u_attri


def transfer_triplet(triplet: WeightTriplet) -> WeightTriplet:
    """Prepare a triplet for use on another encoder: keep the weights,
    zero the bias."""
    return WeightTriplet(triplet.w_global, triplet.w_attri, 0.0)


def save_triplet(triplet: WeightTriplet, path, source_model: str | None = None,
                 provenance: dict | None = None) -> None:
    payload = triplet.to_dict(source_model=source_model)
    if provenance is not None:
        payload["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def load_triplet(path) -> WeightTriplet:
    with open(path, encoding="utf-8") as f:
        return WeightTriplet.from_dict(json.load(f))
