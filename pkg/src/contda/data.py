"""Synthetic source/target domain pairs and the i.i.d. batch streamer."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, LabelAccessError


@dataclass
class Dataset:
    X: np.ndarray
    num_classes: int
    domain_tag: str
    _labels: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.domain_tag not in ("source", "target"):
            raise ValueError("domain_tag must be 'source' or 'target'")
        if self._labels is not None:
            lab = np.asarray(self._labels, dtype=np.int64)
            if lab.shape[0] != self.X.shape[0]:
                raise ValueError("labels and samples differ in length")
            if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
                raise ValueError("label out of range")
            self._labels = lab

    def __len__(self):
        return self.X.shape[0]

    @property
    def has_labels(self):
        return self._labels is not None

    @property
    def y(self):
        """Training labels. Only source data exposes them."""
        if self.domain_tag == "target":
            raise LabelAccessError("target labels are evaluation-only")
        return self._labels

    def evaluation_labels(self):
        return self._labels

    def class_counts(self):
        if self._labels is None:
            return None
        return np.bincount(self._labels, minlength=self.num_classes)


@dataclass
class DomainPairConfig:
    family: str = "moons"
    n_per_class: int = 500
    noise_sd: float = 0.1
    rotation_deg: float = 0.0
    translation: tuple = (0.0, 0.0)
    num_classes: int = 2
    radius: float = 4.0  # blobs only: class means sit on a circle of this radius
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("moons", "blobs"):
            raise ConfigError("unknown dataset family %r" % self.family)
        if self.n_per_class <= 0:
            raise ConfigError("n_per_class must be positive")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be non-negative")
        if self.family == "moons" and self.num_classes != 2:
            raise ConfigError("moons has exactly 2 classes")
        self.translation = tuple(float(t) for t in self.translation)


PRESETS = {
    "moons-rot30": dict(family="moons", n_per_class=500, noise_sd=0.1,
                        rotation_deg=30.0, num_classes=2),
    "blobs-5c": dict(family="blobs", n_per_class=250, noise_sd=1.0,
                     rotation_deg=25.0, translation=(0.75, -0.5), num_classes=5,
                     radius=4.0),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError("unknown dataset preset %r" % name)
    kw = dict(PRESETS[name])
    kw.update(overrides)
    return DomainPairConfig(**kw)


def blob_means(num_classes, radius):
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def _moons(n_per_class, noise_sd, rng):
    t = rng.uniform(0.0, np.pi, size=(2, n_per_class))
    upper = np.column_stack([np.cos(t[0]), np.sin(t[0])])
    lower = np.column_stack([1.0 - np.cos(t[1]), 0.5 - np.sin(t[1])])
    X = np.vstack([upper, lower]) - np.array([0.5, 0.25])
    X += rng.normal(0.0, noise_sd, size=X.shape)
    y = np.repeat([0, 1], n_per_class)
    return X, y


def _blobs(n_per_class, num_classes, radius, noise_sd, rng):
    means = blob_means(num_classes, radius)
    y = np.repeat(np.arange(num_classes), n_per_class)
    X = means[y] + rng.normal(0.0, noise_sd, size=(y.shape[0], 2))
    return X, y


def sample_family(config, rng):
    if config.family == "moons":
        X, y = _moons(config.n_per_class, config.noise_sd, rng)
    else:
        X, y = _blobs(config.n_per_class, config.num_classes, config.radius,
                      config.noise_sd, rng)
    perm = rng.permutation(X.shape[0])
    return X[perm], y[perm]


def apply_shift(X, rotation_deg, translation):
    a = np.deg2rad(rotation_deg)
    R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
    return X @ R.T + np.asarray(translation, dtype=np.float64)


def make_domain_pair(config):
    src_seq, tgt_seq = np.random.SeedSequence(config.seed).spawn(2)
    Xs, ys = sample_family(config, np.random.default_rng(src_seq))
    Xt, yt = sample_family(config, np.random.default_rng(tgt_seq))
    Xt = apply_shift(Xt, config.rotation_deg, config.translation)
    C = config.num_classes
    return Dataset(Xs, C, "source", ys), Dataset(Xt, C, "target", yt)


@dataclass
class BatchStream:
    batches: list
    batch_size: int

    @property
    def m(self):
        return len(self.batches)

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)


def stream_batches(target, batch_size, seed):
    """Shuffle once, then cut into contiguous chunks of ``batch_size``."""
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    n = len(target) if not isinstance(target, int) else target
    order = np.random.default_rng(seed).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return BatchStream(batches=batches, batch_size=batch_size)


def write_csv(dataset, path):
    d = dataset.X.shape[1]
    labels = dataset.evaluation_labels()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x%d" % i for i in range(d)] + ["label"])
        for i in range(len(dataset)):
            row = ["%.17g" % v for v in dataset.X[i]]
            row.append("" if labels is None else str(int(labels[i])))
            w.writerow(row)
