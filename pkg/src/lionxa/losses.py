"""Segmentation, cross-modal and adversarial objectives."""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, EmptyHistogram, EmptyLoss, ShapeError
from .lidar_io import IGNORE

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 0.0
    lambda_tl: float = 0.0
    lambda_t: float = 0.0
    lambda_p: float = 0.0
    g2d_tp: float = 0.0
    g3d_tp: float = 0.0
    g2d_tf: float = 0.0
    d2d_tp: float = 0.0
    d3d_tp: float = 0.0
    d2d_tf: float = 0.0
    d2d_sp: float = 0.0
    d3d_sp: float = 0.0
    d2d_sf: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{f.name} must be a finite non-negative number, got {v}")
        if self.lambda_p >= 1:
            raise ConfigError(f"lambda_p must be < 1, got {self.lambda_p}")

    ADVERSARIAL = ("g2d_tp", "g3d_tp", "g2d_tf", "d2d_tp", "d3d_tp", "d2d_tf", "d2d_sp", "d3d_sp", "d2d_sf")

    def as_tuple(self):
        return astuple(self)

    def replace(self, **changes):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return LossWeights(**vals)

    def without_adversarial(self):
        return self.replace(**{k: 0.0 for k in self.ADVERSARIAL})

    @property
    def adversarial(self):
        return any(getattr(self, k) > 0 for k in self.ADVERSARIAL)


def class_weights(histogram):
    """w_c = 1 / ln(1.02 + f_c) with f_c the class frequency."""
    h = np.asarray(histogram, dtype=np.float64)
    total = h.sum()
    if total <= 0:
        raise EmptyHistogram("class histogram has no counts")
    return 1.0 / np.log(1.02 + h / total)


def seg_loss_3d(logits, labels, weights=None):
    """Weighted cross-entropy over non-ignored rows, averaged over their count."""
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{n} logit rows vs {labels.shape[0]} labels")
    keep = labels != IGNORE
    count = int(keep.sum())
    if count == 0:
        raise EmptyLoss("every label is ignored")
    w = np.ones(c) if weights is None else np.asarray(weights, dtype=np.float64)
    coef = np.zeros((n, c))
    rows = np.nonzero(keep)[0]
    coef[rows, labels[rows]] = w[labels[rows]] / count
    return -ad.sum_(ad.mul(ad.log_softmax(logits), coef))


def seg_loss_2d(logits, label_image, weights=None):
    """Pixel-wise version; invalid or ignored pixels carry IGNORE in ``label_image``."""
    c = logits.shape[-1]
    if logits.shape[:-1] != np.shape(label_image):
        raise ShapeError(f"logits {logits.shape} vs label image {np.shape(label_image)}")
    return seg_loss_3d(ad.reshape(logits, (-1, c)), np.asarray(label_image).reshape(-1), weights)


@dataclass
class SegBatch:
    """Network outputs and labels of one labelled stream."""

    logits_3d: ad.Tensor
    labels_3d: np.ndarray
    logits_2d: ad.Tensor
    labels_2d: np.ndarray


def supervised_loss(batch_s: SegBatch, batch_tl: SegBatch | None, lambda_p, weights=None):
    def one(b):
        loss = seg_loss_3d(b.logits_3d, b.labels_3d, weights)
        if lambda_p:
            loss = loss + lambda_p * seg_loss_2d(b.logits_2d, b.labels_2d, weights)
        return loss

    loss = one(batch_s)
    if batch_tl is not None:
        loss = loss + one(batch_tl)
    return loss


def kl_divergence(p, q):
    """(1/N) sum P log(P/Q) with P treated as a constant and Q clamped."""
    p = p.data if isinstance(p, ad.Tensor) else np.asarray(p, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise ShapeError(f"kl: {p.shape} vs {q.shape}")
    n = p.shape[0]
    plogp = float(np.sum(np.where(p > 0, p * np.log(np.maximum(p, PROB_EPS)), 0.0))) / n
    cross = ad.sum_(ad.mul(ad.log(q, eps=PROB_EPS), p / n))
    return plogp - cross


def cross_modal_loss(main_2d, mimic_2d, main_3d, mimic_3d):
    """Each mimicry head imitates the other stream's detached main prediction.

    All four arguments are per-point probability rows over the same points.
    """
    return kl_divergence(main_3d, mimic_2d) + kl_divergence(main_2d, mimic_3d)


def total_loss(l_sup, xm_s, xm_tl, xm_t, w: LossWeights):
    loss = l_sup
    for lam, term in ((w.lambda_s, xm_s), (w.lambda_tl, xm_tl), (w.lambda_t, xm_t)):
        if lam and term is not None:
            loss = loss + lam * term
    return loss


def bce(p, label):
    """Batch-averaged binary cross-entropy against a constant 0/1 label."""
    if label == 1:
        return -ad.mean(ad.log(p, eps=PROB_EPS))
    return -ad.mean(ad.log(1.0 - p, eps=PROB_EPS))


def discriminator_loss(d_source, d_target, lambda_source, lambda_target):
    """Source is labelled 0, target 1."""
    loss = lambda_source * bce(d_source, 0)
    return loss + lambda_target * bce(d_target, 1)


def generator_adv_loss(d_target, lam):
    """Push target outputs towards the source label."""
    return lam * bce(d_target, 0)
