"""Class-balanced binary cross entropy and the deep-supervision total loss.

For an image with ``|Y+|`` positive and ``|Y-|`` negative pixels::

    alpha = lam * |Y+| / (|Y+| + |Y-|)     weights background pixels (y = 0)
    beta  =       |Y-| / (|Y+| + |Y-|)     weights layer pixels (y = 1)
    l(x)  = -alpha * log(1 - x)   if y = 0
            -beta  * log(x)       if y = 1

Pixel losses are summed within an image and averaged over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .gridcore import Node, ShapeError

EPS = 1e-12
DEFAULT_LAMBDA = 1.1


@dataclass(frozen=True)
class ClassBalance:
    alpha: float
    beta: float
    lam: float
    pos_count: int
    neg_count: int


def class_balance(labels, lam: float = DEFAULT_LAMBDA) -> ClassBalance:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("label grid is empty")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary (0 or 1)")
    pos = int(np.count_nonzero(labels))
    neg = int(labels.size - pos)
    total = pos + neg
    return ClassBalance(alpha=lam * pos / total, beta=neg / total, lam=lam, pos_count=pos, neg_count=neg)


def balanced_bce(activation, labels, bal: ClassBalance) -> tuple[float, np.ndarray]:
    """Loss summed over pixels and its gradient with respect to ``activation``."""
    x = np.asarray(activation, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape != y.shape:
        raise ShapeError(f"activation shape {x.shape} does not match labels {y.shape}")
    x = np.clip(x, EPS, 1 - EPS)
    pos = y == 1
    loss = -bal.beta * np.log(x[pos]).sum() - bal.alpha * np.log1p(-x[~pos]).sum()
    grad = np.where(pos, -bal.beta / x, bal.alpha / (1 - x))
    return float(loss), grad


def _softplus(z):
    return np.logaddexp(0.0, z)


def balanced_bce_logits(logit, labels, balances) -> Node:
    """Graph op: batch-mean of per-image balanced BCE evaluated on pre-sigmoid logits.

    Uses ``-log(sigmoid(z)) = softplus(-z)`` and ``-log(1 - sigmoid(z)) = softplus(z)``,
    which equals :func:`balanced_bce` on ``sigmoid(z)`` without clamping.
    """
    z = logit.value
    y = np.asarray(labels)
    if z.shape != y.shape:
        raise ShapeError(f"logit shape {z.shape} does not match labels {y.shape}")
    n = z.shape[0]
    alpha = np.array([b.alpha for b in balances]).reshape(n, 1, 1, 1)
    beta = np.array([b.beta for b in balances]).reshape(n, 1, 1, 1)
    pos = y == 1
    per_pixel = np.where(pos, beta * _softplus(-z), alpha * _softplus(z))
    value = np.array(per_pixel.sum() / n)
    s = expit(z)

    def backward(g):
        return [g * np.where(pos, beta * (s - 1), alpha * s) / n]

    return Node(value, "loss", (logit,), backward)


def add_losses(terms) -> Node:
    terms = list(terms)
    if not terms:
        raise ValueError("add_losses needs at least one term")
    value = np.array(sum(float(t.value) for t in terms))
    return Node(value, "add", terms, lambda g: [g] * len(terms))


def total_loss(output, labels, lam: float = DEFAULT_LAMBDA) -> Node:
    """Sum of balanced BCE over every active side output plus the fuse output."""
    labels = np.asarray(labels)
    if labels.ndim != 4:
        raise ShapeError(f"labels must be 4D (batch, 1, rows, cols), got {labels.shape}")
    balances = [class_balance(labels[i], lam) for i in range(labels.shape[0])]
    maps = list(output.side_logits) + [output.fuse_logit]
    return add_losses(balanced_bce_logits(m, labels, balances) for m in maps)
