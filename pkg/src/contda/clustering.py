"""Pseudo-labels from softmax-weighted centroids and cosine assignment.

One pass: soft centroids from the softmax output, nearest-centroid
assignment under cosine distance, hard centroids from that assignment, and
a final assignment. There is deliberately no iteration to convergence.
"""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DivergenceError, EmptyClustersError, EmptyInputError
from .netcore import softmax

EPS_CLASS_MASS = 1e-8


@dataclass
class Centroids:
    c: np.ndarray
    empty: np.ndarray
    round: int = 0

    @property
    def num_classes(self):
        return self.c.shape[0]


@dataclass
class PseudoLabelSet:
    labels: np.ndarray
    round: int = 0

    def __len__(self):
        return self.labels.shape[0]


def _as_matrix(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def initial_centroids(probs, features):
    probs = _as_matrix(probs)
    features = _as_matrix(features)
    if probs.shape[0] == 0:
        raise EmptyInputError("cannot compute centroids of an empty set")
    sums, mass = _kernels.weighted_centroids(probs, features)
    empty = mass < EPS_CLASS_MASS
    c = np.zeros_like(sums)
    c[~empty] = sums[~empty] / mass[~empty, None]
    return Centroids(c=c, empty=empty, round=0)


def cosine_distances(features, centroids):
    """Full distance matrix, with 2.0 wherever either vector has zero norm."""
    features = _as_matrix(features)
    centroids = _as_matrix(centroids)
    fn = np.linalg.norm(features, axis=1)
    cn = np.linalg.norm(centroids, axis=1)
    denom = fn[:, None] * cn[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - (features @ centroids.T) / denom
    d[denom == 0.0] = _kernels.ZERO_NORM_DISTANCE
    return d


def assign_labels(features, centroids):
    """Nearest non-empty centroid; ties go to the lowest class index."""
    valid = ~centroids.empty
    if not valid.any():
        raise EmptyClustersError("all centroids are empty")
    labels = _kernels.cosine_argmin(_as_matrix(features), _as_matrix(centroids.c), valid)
    return PseudoLabelSet(labels=labels, round=centroids.round)


def refine_centroids(features, labels, previous):
    """Hard-assignment means; classes with no members keep ``previous``."""
    features = _as_matrix(features)
    C = previous.num_classes
    onehot = np.zeros((features.shape[0], C))
    onehot[np.arange(features.shape[0]), labels.labels] = 1.0
    sums, counts = _kernels.weighted_centroids(onehot, features)
    c = previous.c.copy()
    has = counts > 0
    c[has] = sums[has] / counts[has, None]
    return Centroids(c=c, empty=previous.empty.copy(), round=1)


def cluster(probs, features):
    """Run the two-round procedure on precomputed softmax outputs and features."""
    c0 = initial_centroids(probs, features)
    y0 = assign_labels(features, c0)
    c1 = refine_centroids(features, y0, c0)
    return assign_labels(features, c1)


def pseudo_labels(model, samples):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] == 0:
        raise EmptyInputError("no samples to pseudo-label")
    with np.errstate(over="ignore", invalid="ignore"):
        feats = model.features(samples, "eval")
    if not np.all(np.isfinite(feats)):
        raise DivergenceError("non-finite features; the generator has diverged")
    probs = softmax(model.hypothesis.forward(feats))
    return cluster(probs, feats)
