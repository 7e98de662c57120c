"""Contrastive objectives over projected embeddings.

Embeddings are L2-normalized (1e-12 floor) before similarity, so the dot
products below are cosine similarities and every loss is invariant to
positive rescaling of any embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ContractError, Tensor

# additive mask; exp(-1e30 + s) underflows to exactly 0 for any realistic s
_MASK = -1e30


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")


def unimodal_nt_xent(views: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """NT-Xent over 2*N paired views; view i is positive with view i+N.

    Per anchor i the denominator runs over all other views (the anchor
    itself is excluded, its positive included); the batch loss averages the
    per-anchor terms over all 2*N anchors.
    """
    if views.ndim != 2:
        raise ContractError(f"views must be (2N, D), got {views.shape}")
    two_n = views.shape[0]
    if two_n % 2 != 0 or two_n < 2:
        raise ContractError(f"view count must be even and >= 2, got {two_n}")
    n = two_n // 2
    z = dc.l2_normalize(views, axis=1)
    sim = dc.scale(dc.matmul(z, dc.transpose(z, (1, 0))), 1.0 / cfg.temperature)
    pos_index = np.concatenate([np.arange(n, two_n), np.arange(0, n)])
    pos_matrix = np.zeros((two_n, two_n))
    pos_matrix[np.arange(two_n), pos_index] = 1.0
    pos_sim = dc.sum_(dc.mul(sim, pos_matrix), axis=1)
    masked = dc.add(sim, np.eye(two_n) * _MASK)
    denom = dc.logsumexp(masked, axis=1)
    return dc.mean(dc.add(denom, dc.scale(pos_sim, -1.0)))


def multimodal_info_nce(gesture: Tensor, speech: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """Symmetric cross-modal InfoNCE; index-aligned positives on the diagonal.

    Each anchor contrasts only against the N opposite-modality embeddings
    (the positive included); gesture-anchored and speech-anchored terms are
    averaged over 2*N.
    """
    if gesture.ndim != 2 or speech.ndim != 2 or gesture.shape != speech.shape:
        raise ContractError(f"modality shapes must match, got {gesture.shape} vs {speech.shape}")
    n = gesture.shape[0]
    zg = dc.l2_normalize(gesture, axis=1)
    zs = dc.l2_normalize(speech, axis=1)
    sim = dc.scale(dc.matmul(zg, dc.transpose(zs, (1, 0))), 1.0 / cfg.temperature)
    diag = dc.sum_(dc.mul(sim, np.eye(n)), axis=1)
    row = dc.add(dc.logsumexp(sim, axis=1), dc.scale(diag, -1.0))  # gestures as anchors
    col = dc.add(dc.logsumexp(sim, axis=0), dc.scale(diag, -1.0))  # speech as anchors
    return dc.scale(dc.add(dc.mean(row), dc.mean(col)), 0.5)


def combined_loss(l_uni, l_mm):
    """Arithmetic mean of the unimodal and multimodal objectives."""
    if isinstance(l_uni, Tensor) or isinstance(l_mm, Tensor):
        return dc.scale(dc.add(l_uni, l_mm), 0.5)
    return 0.5 * (float(l_uni) + float(l_mm))
