"""Dense network primitives with hand-written reverse-mode gradients.

The model is split into a feature generator (MLP backbone, bottleneck
linear layer, batch norm) and a weight-normalized linear hypothesis.
Everything is float64.
"""
import copy
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    DegenerateBatchError,
    DegenerateDirectionError,
    EmptyInputError,
    StaleCacheError,
)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    momentum: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.momentum is None:
            self.momentum = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.momentum.shape):
            raise ValueError("value, grad and momentum shapes differ")

    def zero_grad(self):
        self.grad.fill(0.0)


class Linear:
    def __init__(self, d_in, d_out, rng, gain=np.sqrt(2.0)):
        std = gain / np.sqrt(d_in)
        self.W = Param(rng.normal(0.0, std, size=(d_in, d_out)))
        self.b = Param(np.zeros(d_out))
        self._x = None

    @property
    def d_in(self):
        return self.W.value.shape[0]

    @property
    def d_out(self):
        return self.W.value.shape[1]

    def forward(self, x, cache=False):
        if cache:
            self._x = x
        return x @ self.W.value + self.b.value

    def backward(self, dy):
        if self._x is None:
            raise StaleCacheError("linear layer has no cached input")
        self.W.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        self._x = None
        return dy @ self.W.value.T


class BatchNorm:
    """Per-feature batch normalization with running statistics.

    Running variance tracks the unbiased batch variance; normalization in
    train mode uses the biased one.
    """

    def __init__(self, dim, eps=BN_EPS, momentum=BN_MOMENTUM):
        self.gamma = Param(np.ones(dim))
        self.beta = Param(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x, train, cache=False):
        if not train:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            return (x - self.running_mean) * inv_std * self.gamma.value + self.beta.value
        n = x.shape[0]
        if n < 2:
            raise DegenerateBatchError(
                "train-mode batch norm needs at least 2 rows, got %d" % n
            )
        out, xhat, mean, var, inv_std = _kernels.bn_train_forward(
            np.ascontiguousarray(x), self.gamma.value, self.beta.value, self.eps
        )
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * mean
        self.running_var = (1.0 - m) * self.running_var + m * var * (n / (n - 1.0))
        if cache:
            self._cache = (xhat, inv_std)
        return out

    def backward(self, dy):
        if self._cache is None:
            raise StaleCacheError("batch norm has no cached train-mode forward")
        xhat, inv_std = self._cache
        dx, dgamma, dbeta = _kernels.bn_backward(
            np.ascontiguousarray(dy), xhat, inv_std, self.gamma.value
        )
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        self._cache = None
        return dx


class FeatureGenerator:
    """MLP backbone (ReLU) -> bottleneck linear -> batch norm."""

    def __init__(self, d_in, hidden, d_f, rng):
        self.backbone = []
        width = d_in
        for h in hidden:
            self.backbone.append(Linear(width, h, rng))
            width = h
        self.bottleneck = Linear(width, d_f, rng, gain=1.0)
        self.bn = BatchNorm(d_f)
        self.mode = "eval"
        self._relu_masks = None

    @property
    def d_in(self):
        return self.backbone[0].d_in if self.backbone else self.bottleneck.d_in

    @property
    def d_f(self):
        return self.bottleneck.d_out

    def forward(self, x, mode):
        train = mode == "train"
        self.mode = mode
        h = x
        masks = []
        for layer in self.backbone:
            h = layer.forward(h, cache=train)
            mask = h > 0.0
            h = np.where(mask, h, 0.0)
            masks.append(mask)
        h = self.bottleneck.forward(h, cache=train)
        out = self.bn.forward(h, train=train, cache=train)
        if train:
            self._relu_masks = masks
        return out

    def backward(self, dfeat):
        if self._relu_masks is None:
            raise StaleCacheError("generator backward called without a train-mode forward")
        d = self.bn.backward(dfeat)
        d = self.bottleneck.backward(d)
        for layer, mask in zip(reversed(self.backbone), reversed(self._relu_masks)):
            d = layer.backward(np.where(mask, d, 0.0))
        self._relu_masks = None
        return d

    def named_params(self):
        out = []
        for i, layer in enumerate(self.backbone):
            out.append(("backbone.%d.W" % i, layer.W))
            out.append(("backbone.%d.b" % i, layer.b))
        out += [
            ("bottleneck.W", self.bottleneck.W),
            ("bottleneck.b", self.bottleneck.b),
            ("bn.gamma", self.bn.gamma),
            ("bn.beta", self.bn.beta),
        ]
        return out


class Hypothesis:
    """Weight-normalized linear classifier without bias.

    The effective weight of class k is ``s[k] * v[k] / ||v[k]||``.
    """

    def __init__(self, d_f, num_classes, rng):
        v = rng.normal(0.0, np.sqrt(2.0 / (d_f + num_classes)), size=(num_classes, d_f))
        self.v = Param(v)
        self.s = Param(np.sqrt((v * v).sum(axis=1)))
        self._features = None

    @property
    def num_classes(self):
        return self.v.value.shape[0]

    def _norms(self):
        norms = np.sqrt((self.v.value * self.v.value).sum(axis=1))
        if np.any(norms == 0.0):
            raise DegenerateDirectionError("zero-length hypothesis direction")
        return norms

    def effective_weight(self):
        return self.v.value * (self.s.value / self._norms())[:, None]

    def forward(self, features, cache=False):
        if cache:
            self._features = features
        return features @ self.effective_weight().T

    def backward(self, dlogits, accumulate=False):
        """Return d(loss)/d(features); optionally accumulate head gradients."""
        if self._features is None:
            raise StaleCacheError("hypothesis backward called without a cached forward")
        w = self.effective_weight()
        dfeat = dlogits @ w
        if accumulate:
            dw = dlogits.T @ self._features
            norms = self._norms()
            u = self.v.value / norms[:, None]
            proj = (dw * u).sum(axis=1)
            self.s.grad += proj
            self.v.grad += (self.s.value / norms)[:, None] * (dw - proj[:, None] * u)
        self._features = None
        return dfeat

    def named_params(self):
        return [("head.v", self.v), ("head.s", self.s)]


class Model:
    """Feature generator followed by a frozen-during-adaptation hypothesis."""

    def __init__(self, generator, hypothesis):
        if hypothesis.v.value.shape[1] != generator.d_f:
            raise ValueError("hypothesis input dim does not match generator output dim")
        self.generator = generator
        self.hypothesis = hypothesis
        self._train_cache = False

    @classmethod
    def build(cls, d_in, num_classes, hidden=(64, 64), d_f=16, rng=None):
        rng = np.random.default_rng(0) if rng is None else rng
        gen = FeatureGenerator(d_in, tuple(hidden), d_f, rng)
        hyp = Hypothesis(d_f, num_classes, rng)
        return cls(gen, hyp)

    @property
    def num_classes(self):
        return self.hypothesis.num_classes

    @property
    def d_in(self):
        return self.generator.d_in

    @property
    def hidden(self):
        return tuple(layer.d_out for layer in self.generator.backbone)

    @property
    def d_f(self):
        return self.generator.d_f

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise EmptyInputError("expected a non-empty 2-D input, got shape %s" % (x.shape,))
        if x.shape[1] != self.d_in:
            raise ValueError("input has %d columns, model expects %d" % (x.shape[1], self.d_in))
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        return x

    def features(self, x, mode="eval"):
        x = self._check_input(x)
        return self.generator.forward(x, mode)

    def forward(self, x, mode="eval"):
        """Logits for ``x``; train mode caches intermediates for ``backward``."""
        feats = self.features(x, mode)
        train = mode == "train"
        self._train_cache = train
        return self.hypothesis.forward(feats, cache=train)

    def predict_proba(self, x):
        return softmax(self.forward(x, "eval"))

    def backward(self, dlogits, train_head=False):
        if not self._train_cache:
            raise StaleCacheError("backward requires a preceding train-mode forward")
        dfeat = self.hypothesis.backward(dlogits, accumulate=train_head)
        self.generator.backward(dfeat)
        self._train_cache = False

    def zero_grad(self):
        for _, p in self.named_params():
            p.zero_grad()

    def generator_params(self):
        return self.generator.named_params()

    def hypothesis_params(self):
        return self.hypothesis.named_params()

    def named_params(self):
        return self.generator_params() + self.hypothesis_params()

    def is_backbone(self, name):
        return name.startswith("backbone.")

    def copy(self):
        return copy.deepcopy(self)


def forward_features(model, x, mode="eval"):
    return model.features(x, mode)


def forward_logits(model, features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.d_f:
        raise ValueError("features must have %d columns" % model.d_f)
    return model.hypothesis.forward(features)


def softmax(logits):
    return _kernels.softmax_rows(np.ascontiguousarray(logits, dtype=np.float64))


def log_softmax(logits):
    return _kernels.log_softmax_rows(np.ascontiguousarray(logits, dtype=np.float64))


def backward(model, dlogits, train_head=False):
    model.backward(np.asarray(dlogits, dtype=np.float64), train_head=train_head)
