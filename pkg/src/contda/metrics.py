from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError


@dataclass
class MetricsRecord:
    batch_index: int
    accuracy: float
    l_ent: float = 0.0
    l_eqdiv: float = 0.0
    l_mixup: float = 0.0
    total: float = 0.0
    seconds: float = 0.0
    seed: int = 0

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def as_dict(self):
        return {name: getattr(self, name) for name in self.field_names()}

    @property
    def failed(self):
        losses = (self.l_ent, self.l_eqdiv, self.l_mixup, self.total)
        return not all(np.isfinite(losses))


def predict(model, X, chunk=4096):
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(0, X.shape[0], chunk):
        out[i:i + chunk] = model.forward(X[i:i + chunk], "eval").argmax(axis=1)
    return out


def evaluate(model, dataset):
    """Fraction of eval-mode argmax predictions that match the labels."""
    labels = dataset.evaluation_labels()
    if labels is None:
        raise ConfigError("cannot evaluate on an unlabeled dataset")
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    if model.num_classes != dataset.num_classes:
        raise ConfigError("model has %d classes, dataset has %d"
                          % (model.num_classes, dataset.num_classes))
    return float(np.mean(predict(model, dataset.X) == labels))
