"""Segmentation and adversarial losses."""

from __future__ import annotations

import numpy as np

from xdseg import tensor as T
from xdseg.tensor import Tensor


def _scores(t) -> Tensor:
    t = T.as_tensor(t)
    if t.size and (np.any(t.data < 0) or np.any(t.data > 1)):
        raise ValueError("discriminator scores must lie in [0, 1]")
    return t


def pixel_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-sample softmax cross-entropy, averaged over pixels -> shape (B,)."""
    y = T.as_tensor(labels, like=logits)
    if y.shape != logits.shape:
        raise T.ShapeError(f"labels {y.shape} do not match logits {logits.shape}")
    rows = y.data.sum(axis=1)
    if np.any(y.data < 0) or not np.allclose(rows, 1.0, atol=1e-6) \
            or np.any((y.data != 0) & (y.data != 1)):
        raise ValueError("labels must be one-hot along the channel axis")
    logp = T.log(T.softmax_channels(logits))
    return T.neg(T.mean(T.sum(y * logp, axis=1), axis=(1, 2)))


def cross_entropy_loss(logits: Tensor, labels, sample_weights=None) -> Tensor:
    """Mean over batch and pixels of -sum_c y_c log softmax(logits)_c.

    ``sample_weights`` (B,) scale each sample's contribution; the result is
    divided by B, not by the weight total, so unit weights give the plain mean.
    """
    per_sample = pixel_cross_entropy(logits, labels)
    if sample_weights is None:
        return T.mean(per_sample)
    w = np.asarray(sample_weights, dtype=logits.dtype)
    if w.shape != per_sample.shape:
        raise T.ShapeError(f"sample_weights shape {w.shape} != batch {per_sample.shape}")
    return T.mean(per_sample * Tensor(w))


def disc_loss(real_scores, fake_scores) -> Tensor:
    """E[D(u)] + E[1 - D(u_hat)]; the discriminator ascends this."""
    real, fake = _scores(real_scores), _scores(fake_scores)
    return T.mean(real) + (1.0 - T.mean(fake))


def gen_adv_loss(fake_scores) -> Tensor:
    """E[D(u_hat)]; the segmenter ascends this."""
    return T.mean(_scores(fake_scores))


def combined_loss(l_cls, l_gen, weight: float = 0.001):
    """l_cls + weight * l_gen. Works on floats and on tensors."""
    if weight < 0:
        raise ValueError("adversarial weight must be >= 0")
    return l_cls + weight * l_gen
