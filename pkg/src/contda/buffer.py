"""Class-balanced replay buffer and its manager."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .netcore import softmax


@dataclass
class BufferEntry:
    sample: np.ndarray
    predicted_label: int
    confidence: float
    inserted_at: int
    uid: int = -1  # global target index, bookkeeping only


@dataclass
class Buffer:
    """Per-class lists of raw target samples.

    A capacity of 0 disables the buffer entirely. Any other capacity below
    ``num_classes`` would leave a class with no slot and is rejected.
    """

    capacity: int
    num_classes: int
    entries: list = field(default=None)
    state_index: int = 0

    def __post_init__(self):
        if self.capacity < 0 or (0 < self.capacity < self.num_classes):
            raise ConfigError(
                "buffer capacity %d gives zero slots for %d classes"
                % (self.capacity, self.num_classes)
            )
        if self.entries is None:
            self.entries = [[] for _ in range(self.num_classes)]

    @property
    def slots_per_class(self):
        return self.capacity // self.num_classes

    @property
    def enabled(self):
        return self.capacity > 0

    def __len__(self):
        return sum(len(e) for e in self.entries)

    def flat_entries(self):
        return [e for per_class in self.entries for e in per_class]

    def samples(self, d_in=None):
        flat = self.flat_entries()
        if not flat:
            return np.empty((0, 0 if d_in is None else d_in))
        return np.stack([e.sample for e in flat])


def relabel_buffer(model, buffer):
    """Current-model (labels, confidences) for every stored sample, in flat order."""
    if len(buffer) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0)
    probs = softmax(model.forward(buffer.samples(), "eval"))
    return probs.argmax(axis=1).astype(np.int64), probs.max(axis=1)


def update_buffer(buffer, samples, predictions, confidences, relabeled, rng,
                  batch_index=None, uids=None):
    """Return the next buffer state.

    Per class, incoming samples predicted as that class are admitted in
    order of decreasing confidence (ties keep batch order) up to the slot
    count. Any remaining slots are backfilled by drawing, without
    replacement, from previous entries whose *relabeled* class matches.
    Survivors keep their insertion-time confidence.
    """
    samples = np.asarray(samples, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.int64)
    confidences = np.asarray(confidences, dtype=np.float64)
    relabeled = np.asarray(relabeled, dtype=np.int64)
    n = samples.shape[0]
    if predictions.shape[0] != n or confidences.shape[0] != n:
        raise ValueError("predictions/confidences not aligned with samples")
    previous = buffer.flat_entries()
    if relabeled.shape[0] != len(previous):
        raise ValueError("relabeled array does not match buffer size")
    j = buffer.state_index + 1 if batch_index is None else batch_index
    uids = np.full(n, -1, dtype=np.int64) if uids is None else np.asarray(uids)

    new = Buffer(buffer.capacity, buffer.num_classes, state_index=buffer.state_index + 1)
    if not buffer.enabled:
        return new
    slots = buffer.slots_per_class
    for k in range(buffer.num_classes):
        idx = np.flatnonzero(predictions == k)
        order = idx[np.argsort(-confidences[idx], kind="stable")][:slots]
        kept = [
            BufferEntry(samples[i].copy(), k, float(confidences[i]), j, int(uids[i]))
            for i in order
        ]
        deficit = slots - len(kept)
        candidates = np.flatnonzero(relabeled == k)
        if deficit > 0 and candidates.size:
            picks = rng.choice(candidates.size, size=min(deficit, candidates.size), replace=False)
            for p in picks:
                old = previous[candidates[p]]
                kept.append(BufferEntry(old.sample, k, old.confidence, old.inserted_at, old.uid))
        new.entries[k] = kept
    return new


def merged_set(buffer, batch):
    """Batch rows followed by buffer rows, as a bare array with no labels."""
    batch = np.asarray(batch, dtype=np.float64)
    if len(buffer) == 0:
        return batch.copy()
    stored = buffer.samples()
    if batch.shape[0] == 0:
        return stored
    return np.vstack([batch, stored])
