"""Scalar objectives for source training and target adaptation.

The probability-space functions (``entropy_loss``, ``eqdiv_loss``,
``mixup_ce_loss``, ``total_objective``) floor every log argument at
``EPS_DIV``. The training path uses ``adaptation_objective``, which works
from logits through log-softmax so that it also returns exact gradients
with respect to the logits. The two agree whenever no probability falls
below the floor.
"""
from dataclasses import dataclass

import numpy as np

from .netcore import log_softmax

EPS_DIV = 1e-12


@dataclass
class HyperParams:
    gamma1: float = 1.0
    gamma2: float = 0.5
    rho: float = 1.0
    smoothing: float = 0.1

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("gamma1 and gamma2 must be non-negative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must lie in [0, 1)")


def uniform_prior(num_classes):
    return np.full(num_classes, 1.0 / num_classes)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise IndexError("label out of range [0, %d)" % num_classes)
    return labels


def _floored_log(p):
    return np.log(np.maximum(p, EPS_DIV))


def label_smoothing_targets(labels, num_classes, smoothing):
    labels = _check_labels(labels, num_classes)
    t = np.full((labels.shape[0], num_classes), smoothing / num_classes)
    t[np.arange(labels.shape[0]), labels] += 1.0 - smoothing
    return t


def label_smoothing_ce(logits, labels, smoothing=0.1):
    loss, _ = label_smoothing_ce_and_grad(logits, labels, smoothing)
    return loss


def label_smoothing_ce_and_grad(logits, labels, smoothing=0.1):
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    if n == 0:
        raise ValueError("label smoothing CE needs at least one sample")
    t = label_smoothing_targets(labels, c, smoothing)
    logp = log_softmax(logits)
    loss = float(-(t * logp).sum() / n)
    return loss, (np.exp(logp) - t) / n


def entropy_loss(probs):
    probs = np.asarray(probs, dtype=np.float64)
    return float(-(probs * _floored_log(probs)).sum(axis=1).mean())


def eqdiv_loss(mean_probs, prior=None):
    """KL(prior || mean_probs); the prior defaults to uniform."""
    mean_probs = np.asarray(mean_probs, dtype=np.float64)
    q = uniform_prior(mean_probs.shape[0]) if prior is None else np.asarray(prior)
    return float((q * (np.log(q) - _floored_log(mean_probs))).sum())


def mixup_ce_loss(probs, y_a, y_b, lambdas):
    probs = np.asarray(probs, dtype=np.float64)
    n, c = probs.shape
    y_a = _check_labels(y_a, c)
    y_b = _check_labels(y_b, c)
    lam = np.asarray(lambdas, dtype=np.float64)
    rows = np.arange(n)
    per = -lam * _floored_log(probs[rows, y_a]) - (1.0 - lam) * _floored_log(probs[rows, y_b])
    return float(per.mean())


def total_objective(probs, y_a, y_b, lambdas, hp):
    probs = np.asarray(probs, dtype=np.float64)
    ent = entropy_loss(probs)
    div = eqdiv_loss(probs.mean(axis=0))
    mix = mixup_ce_loss(probs, y_a, y_b, lambdas)
    return ent + hp.gamma1 * div + hp.gamma2 * mix


@dataclass
class LossParts:
    ent: float
    eqdiv: float
    mixup: float
    total: float


def adaptation_objective(logits, y_a, y_b, lambdas, hp):
    """Entropy + gamma1 * equal-diversity + gamma2 * mixup CE on one minibatch.

    Returns ``(LossParts, dL/dlogits)``. Terms with a zero weight are still
    evaluated for reporting but contribute nothing to the gradient.
    """
    logits = np.asarray(logits, dtype=np.float64)
    n, c = logits.shape
    y_a = _check_labels(y_a, c)
    y_b = _check_labels(y_b, c)
    lam = np.asarray(lambdas, dtype=np.float64)
    logp = log_softmax(logits)
    p = np.exp(logp)
    rows = np.arange(n)

    row_ent = -(p * logp).sum(axis=1)
    ent = float(row_ent.mean())
    grad = -p * (logp + row_ent[:, None]) / n

    q = uniform_prior(c)
    qhat = p.mean(axis=0)
    eqdiv = float((q * (np.log(q) - _floored_log(qhat))).sum())
    if hp.gamma1:
        g = np.where(qhat > EPS_DIV, -q / np.maximum(qhat, EPS_DIV), 0.0)
        grad += hp.gamma1 * p * (g[None, :] - (p @ g)[:, None]) / n

    mixup = float((-lam * logp[rows, y_a] - (1.0 - lam) * logp[rows, y_b]).mean())
    if hp.gamma2:
        target = np.zeros_like(p)
        target[rows, y_a] += lam
        target[rows, y_b] += 1.0 - lam
        grad += hp.gamma2 * (p - target) / n

    total = ent + hp.gamma1 * eqdiv + hp.gamma2 * mixup
    return LossParts(ent, eqdiv, mixup, total), grad
