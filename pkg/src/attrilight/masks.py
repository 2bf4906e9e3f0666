"""1D token masks and 2D additive attention masks for both encoder flavors.

Masks are S x S float64 matrices whose entries are exactly 0 (attend) or
``NEG_INF`` (do not attend).  ``NEG_INF`` is the most negative finite
float64, not an IEEE infinity: adding it to finite attention scores keeps
softmax arithmetic NaN-free while still driving masked weights to exactly
zero after normalization.  A row that is masked everywhere therefore
degrades to uniform attention instead of NaN; the strict entry points
below reject such rows, the encoder's ablation paths deliberately allow
them.
"""

from __future__ import annotations

import enum

import numpy as np

from .tokens import AttributePositions, Kind, TokenSequence

NEG_INF = float(np.finfo(np.float64).min)


class RestrictAxis(enum.Enum):
    """Which side of the attention product an attribute mask restricts.

    QUERIES keeps only attribute rows attending (the literal outer-product
    form); KEYS keeps only attribute columns attendable, mirroring the
    causal flavor's column rule.
    """

    QUERIES = "queries"
    KEYS = "keys"


class MaskDegenerateRowError(ValueError):
    """A mask row has no unmasked entry, so softmax over it is undefined."""


def token_mask_1d(seq: TokenSequence) -> np.ndarray:
    """1 at TEXT positions, 0 at START/END/PAD."""
    return np.array(
        [1.0 if k is Kind.TEXT else 0.0 for k in seq.kinds], dtype=np.float64
    )


def attribute_mask_1d(seq: TokenSequence, phi: AttributePositions) -> np.ndarray:
    """1 exactly at the attribute positions, 0 elsewhere."""
    values = np.zeros(seq.total_len, dtype=np.float64)
    for p in phi.positions:
        if p >= seq.total_len:
            raise ValueError(f"position {p} outside sequence of length {seq.total_len}")
        values[p] = 1.0
    return values


def _binarize(allowed: np.ndarray) -> np.ndarray:
    return np.where(allowed, 0.0, NEG_INF)


def bert_default_mask(psi: np.ndarray) -> np.ndarray:
    """Bidirectional default mask: text tokens attend each other, every
    special token attends only itself."""
    psi = np.asarray(psi, dtype=np.float64)
    allowed = np.outer(psi, psi) + np.diag(1.0 - psi)
    return _binarize(allowed >= 1.0)

def bert_attribute_mask(
    theta: np.ndarray,
    psi: np.ndarray,
    restrict_axis: RestrictAxis = RestrictAxis.QUERIES,
) -> np.ndarray:
    """Bidirectional attribute mask: the attribute indicator replaces one
    side of the text-text attention product, specials keep self-attention.

    With QUERIES (the literal form) a row whose position is neither an
    attribute nor a special ends up fully masked; see module docstring for
    how such rows behave downstream.
    """
    theta = np.asarray(theta, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    if theta.shape != psi.shape:
        raise ValueError("theta and psi must have equal length")
    if restrict_axis is RestrictAxis.QUERIES:
        product = np.outer(theta, psi)
    else:
        product = np.outer(psi, theta)
    allowed = product + np.diag(1.0 - psi)
    return _binarize(allowed >= 1.0)


def clip_default_mask(total_len: int) -> np.ndarray:
    """Causal default mask: strictly lower-triangular attention pattern."""
    if total_len < 1:
        raise ValueError("total_len must be >= 1")
    i = np.arange(total_len)
    return _binarize(i[:, None] >= i[None, :])


def clip_attribute_mask(
    total_len: int,
    phi: AttributePositions,
    check_rows: bool = True,
) -> np.ndarray:
    """Causal attribute mask: attend position j only when j <= i and j is
    an attribute position.

    Raises:
        MaskDegenerateRowError: if some row has no unmasked entry (cannot
            happen when position 0 is in phi, which match_positions
            guarantees for the causal flavor).  ``check_rows=False`` skips
            the check for ablation modes that mask the special tokens.
    """
    i = np.arange(total_len)
    in_phi = np.zeros(total_len, dtype=bool)
    for p in phi.positions:
        if p >= total_len:
            raise ValueError(f"position {p} outside sequence of length {total_len}")
        in_phi[p] = True
    allowed = (i[:, None] >= i[None, :]) & in_phi[None, :]
    if check_rows and not allowed.any(axis=1).all():
        bad = int(np.flatnonzero(~allowed.any(axis=1))[0])
        raise MaskDegenerateRowError(
            f"row {bad} has no attendable position; phi must contain 0"
        )
    return _binarize(allowed)
