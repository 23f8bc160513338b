from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..models import LossWeights


@dataclass(frozen=True)
class LossBreakdown:
    contrastive: float
    anchor: float
    ranking: float
    total: float

    def __add__(self, other: "LossBreakdown") -> "LossBreakdown":
        return LossBreakdown(
            self.contrastive + other.contrastive,
            self.anchor + other.anchor,
            self.ranking + other.ranking,
            self.total + other.total,
        )

    @classmethod
    def zero(cls) -> "LossBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CapotGradients:
    """Gradients w.r.t. the trainable embeddings f(x), f(x+) and f(x-)."""

    clean: np.ndarray
    positive: np.ndarray
    negative: np.ndarray


def _as_vector(value: np.ndarray) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _check_dims(*vectors: np.ndarray) -> None:
    shapes = {vector.shape for vector in vectors}
    if len(shapes) != 1:
        raise DataError(f"embedding dimension mismatch: {sorted(shapes)}")


def contrastive_loss(
    e_x: np.ndarray, e_pos: np.ndarray, e_neg: np.ndarray, weights: LossWeights
) -> tuple[float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """max(0, tau_pos*|x - x+|^2 - tau_neg*|x - x-|^2 + eps) and its subgradients."""
    e_x, e_pos, e_neg = _as_vector(e_x), _as_vector(e_pos), _as_vector(e_neg)
    _check_dims(e_x, e_pos, e_neg)

    to_pos = e_x - e_pos
    to_neg = e_x - e_neg
    pre_hinge = (
        weights.tau_positive * float(to_pos @ to_pos)
        - weights.tau_negative * float(to_neg @ to_neg)
        + weights.eps_contrastive
    )
    if pre_hinge <= 0.0:
        zero = np.zeros_like(e_x)
        return 0.0, (zero, zero.copy(), zero.copy())

    grad_pos = -2.0 * weights.tau_positive * to_pos
    grad_neg = 2.0 * weights.tau_negative * to_neg
    grad_x = -grad_pos - grad_neg
    return pre_hinge, (grad_x, grad_pos, grad_neg)


def anchor_loss(e_x: np.ndarray, e_frozen: np.ndarray, weights: LossWeights) -> tuple[float, np.ndarray]:
    """Drift penalty max(0, |f(x) - f_a(x)|^2 + eps_a); the frozen side carries no gradient."""
    e_x, e_frozen = _as_vector(e_x), _as_vector(e_frozen)
    _check_dims(e_x, e_frozen)

    drift = e_x - e_frozen
    pre_hinge = float(drift @ drift) + weights.eps_anchor
    if pre_hinge <= 0.0:
        return 0.0, np.zeros_like(e_x)
    return pre_hinge, 2.0 * drift


def ranking_loss(score_pos: float, score_anchor: float, weights: LossWeights) -> tuple[float, tuple[float, float]]:
    """max(0, -(s+ - s_a) + eps_r) with gradients w.r.t. (s+, s_a)."""
    if not (math.isfinite(score_pos) and math.isfinite(score_anchor)):
        raise DataError("ranking scores must be finite")
    pre_hinge = -(score_pos - score_anchor) + weights.eps_ranking
    if pre_hinge <= 0.0:
        return 0.0, (0.0, 0.0)
    return pre_hinge, (-1.0, 1.0)


def capot_loss(
    e_x: np.ndarray,
    e_pos: np.ndarray,
    e_neg: np.ndarray,
    e_frozen: np.ndarray,
    weights: LossWeights,
) -> tuple[LossBreakdown, CapotGradients]:
    e_x, e_pos, e_neg, e_frozen = (_as_vector(v) for v in (e_x, e_pos, e_neg, e_frozen))
    _check_dims(e_x, e_pos, e_neg, e_frozen)

    contrastive, (cx, cp, cn) = contrastive_loss(e_x, e_pos, e_neg, weights)
    anchor, ax = anchor_loss(e_x, e_frozen, weights)
    score_pos = float(e_pos @ e_x)
    score_anchor = float(e_frozen @ e_x)
    ranking, (d_pos, d_anchor) = ranking_loss(score_pos, score_anchor, weights)

    tau_c, tau_a, tau_r = weights.tau_contrastive, weights.tau_anchor, weights.tau_ranking
    total = tau_c * contrastive + tau_a * anchor + tau_r * ranking

    grad_x = tau_c * cx + tau_a * ax + tau_r * (d_pos * e_pos + d_anchor * e_frozen)
    grad_pos = tau_c * cp + tau_r * d_pos * e_x
    grad_neg = tau_c * cn
    return LossBreakdown(contrastive, anchor, ranking, total), CapotGradients(grad_x, grad_pos, grad_neg)


def capot_batch_loss(
    e_x: np.ndarray,
    e_pos: np.ndarray,
    e_neg: np.ndarray,
    e_frozen: np.ndarray,
    weights: LossWeights,
) -> tuple[LossBreakdown, CapotGradients]:
    """Row-wise capot_loss over a batch; losses are summed, gradients kept per row."""
    e_x, e_pos, e_neg, e_frozen = (np.asarray(v, dtype=np.float64) for v in (e_x, e_pos, e_neg, e_frozen))
    _check_dims(e_x, e_pos, e_neg, e_frozen)
    if e_x.ndim != 2:
        raise DataError("batch embeddings must be 2-dimensional")

    to_pos = e_x - e_pos
    to_neg = e_x - e_neg
    drift = e_x - e_frozen
    sq_pos = np.einsum("ij,ij->i", to_pos, to_pos)
    sq_neg = np.einsum("ij,ij->i", to_neg, to_neg)
    sq_drift = np.einsum("ij,ij->i", drift, drift)
    score_pos = np.einsum("ij,ij->i", e_pos, e_x)
    score_anchor = np.einsum("ij,ij->i", e_frozen, e_x)
    if not (np.all(np.isfinite(score_pos)) and np.all(np.isfinite(score_anchor))):
        raise DataError("ranking scores must be finite")

    pre_c = weights.tau_positive * sq_pos - weights.tau_negative * sq_neg + weights.eps_contrastive
    pre_a = sq_drift + weights.eps_anchor
    pre_r = -(score_pos - score_anchor) + weights.eps_ranking
    active_c = (pre_c > 0.0).astype(np.float64)[:, None]
    active_a = (pre_a > 0.0).astype(np.float64)[:, None]
    active_r = (pre_r > 0.0).astype(np.float64)[:, None]

    contrastive = float(np.sum(np.maximum(pre_c, 0.0)))
    anchor = float(np.sum(np.maximum(pre_a, 0.0)))
    ranking = float(np.sum(np.maximum(pre_r, 0.0)))
    tau_c, tau_a, tau_r = weights.tau_contrastive, weights.tau_anchor, weights.tau_ranking
    total = tau_c * contrastive + tau_a * anchor + tau_r * ranking

    c_pos = -2.0 * weights.tau_positive * to_pos * active_c
    c_neg = 2.0 * weights.tau_negative * to_neg * active_c
    grad_x = (
        tau_c * (-c_pos - c_neg)
        + tau_a * 2.0 * drift * active_a
        + tau_r * (e_frozen - e_pos) * active_r
    )
    grad_pos = tau_c * c_pos - tau_r * e_x * active_r
    grad_neg = tau_c * c_neg
    return LossBreakdown(contrastive, anchor, ranking, total), CapotGradients(grad_x, grad_pos, grad_neg)
