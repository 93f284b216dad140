"""Source training, per-batch target adaptation, and the continual driver."""
import time
from dataclasses import dataclass, field

import numpy as np

from .buffer import Buffer, merged_set, relabel_buffer, update_buffer
from .clustering import pseudo_labels
from .data import stream_batches
from .errors import ConfigError, DegenerateMixupError, DivergenceError
from .losses import HyperParams, adaptation_objective, label_smoothing_ce_and_grad
from .metrics import MetricsRecord, evaluate
from .netcore import Model, softmax


@dataclass
class VirtualBatch:
    x_mix: np.ndarray
    y_a: np.ndarray
    y_b: np.ndarray
    lambdas: np.ndarray
    x_a: np.ndarray = field(default=None, repr=False)
    x_b: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.x_mix.shape[0]


@dataclass
class OptimState:
    eta0: float = 1e-3
    momentum: float = 0.9
    progress: float = 0.0
    head_lr_multiplier: float = 10.0

    def advance(self, p):
        if p < self.progress:
            raise ValueError("schedule progress cannot move backwards")
        self.progress = min(1.0, p)


@dataclass
class ContinualConfig:
    batch_size: int = 25
    epochs_per_batch: int = 15
    minibatch_size: int = 32
    buffer_capacity: int = 0
    eta0: float = 1e-3
    momentum: float = 0.9
    head_lr_multiplier: float = 10.0
    use_mixup: bool = True
    reset_momentum: bool = False
    schedule_scope: str = "batch"  # "batch": p restarts per incoming batch; "stream": p spans the run
    hp: HyperParams = field(default_factory=HyperParams)
    seed: int = 0

    def __post_init__(self):
        if self.minibatch_size < 2:
            raise ConfigError("minibatch_size must be at least 2 for batch norm")
        if self.epochs_per_batch < 1:
            raise ConfigError("epochs_per_batch must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.schedule_scope not in ("batch", "stream"):
            raise ConfigError("schedule_scope must be 'batch' or 'stream'")


@dataclass
class SourceConfig:
    epochs: int = 30
    minibatch_size: int = 32
    eta0: float = 1e-2
    momentum: float = 0.9
    head_lr_multiplier: float = 10.0
    smoothing: float = 0.1

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.minibatch_size < 2:
            raise ConfigError("minibatch_size must be at least 2 for batch norm")


def sample_lambda(rho, rng, size=None):
    if not rho > 0:
        raise ValueError("Beta parameter rho must be positive, got %r" % rho)
    return rng.beta(rho, rho, size=size)


def make_virtual_batch(x_star, labels, rho, rng, lambdas=None):
    """Mix each row of ``x_star`` with a partner from a random permutation.

    The alpha side keeps the given order; ``lambdas`` overrides the Beta
    draws (a scalar is broadcast to every pair).
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x_star.shape[0]
    if n < 2:
        raise DegenerateMixupError("mixup needs at least 2 samples, got %d" % n)
    perm = rng.permutation(n)
    if lambdas is None:
        lam = sample_lambda(rho, rng, size=n)
    else:
        lam = np.broadcast_to(np.asarray(lambdas, dtype=np.float64), (n,)).copy()
        if np.any((lam < 0) | (lam > 1)):
            raise ValueError("mixup weights must lie in [0, 1]")
    x_b = x_star[perm]
    x_mix = lam[:, None] * x_star + (1.0 - lam)[:, None] * x_b
    return VirtualBatch(x_mix, labels.copy(), labels[perm], lam, x_star, x_b)


def lr_schedule(eta0, progress):
    """``eta0 * (1 + 10 p) ** -0.75``; accepts an OptimState as first argument."""
    if isinstance(eta0, OptimState):
        eta0, progress = eta0.eta0, eta0.progress
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    return eta0 * (1.0 + 10.0 * progress) ** -0.75


def sgd_step(named_params, lr, momentum, head_lr_multiplier=1.0):
    """Heavy-ball SGD; non-backbone parameters use ``lr * head_lr_multiplier``."""
    for name, p in named_params:
        if not np.all(np.isfinite(p.grad)):
            bad = int(np.count_nonzero(~np.isfinite(p.grad)))
            raise DivergenceError("non-finite gradient in %s (%d entries)" % (name, bad))
    for name, p in named_params:
        lr_eff = lr if name.startswith("backbone.") else lr * head_lr_multiplier
        p.momentum *= momentum
        p.momentum += p.grad
        with np.errstate(over="ignore", invalid="ignore"):
            p.value -= lr_eff * p.momentum
        if not np.all(np.isfinite(p.value)):
            raise DivergenceError("parameter %s left the finite range" % name)


def minibatch_slices(n, size):
    """Contiguous slices of at least ``size`` rows (a lone batch if n < size)."""
    parts = max(1, n // size)
    bounds = np.linspace(0, n, parts + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def train_source(dataset, config, model, rng=None):
    """Supervised label-smoothed training of the whole model, in place.

    The hypothesis is trainable here and only here.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    X, y = dataset.X, dataset.y
    if config.epochs == 0:
        return model
    slices = minibatch_slices(X.shape[0], config.minibatch_size)
    total = config.epochs * len(slices)
    params = model.named_params()
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(X.shape[0])
        for sl in slices:
            idx = order[sl]
            model.zero_grad()
            logits = model.forward(X[idx], "train")
            loss, grad = label_smoothing_ce_and_grad(logits, y[idx], config.smoothing)
            if not np.isfinite(loss):
                raise DivergenceError("source loss became non-finite at step %d" % step)
            model.backward(grad, train_head=True)
            sgd_step(params, lr_schedule(config.eta0, step / total),
                     config.momentum, config.head_lr_multiplier)
            step += 1
    return model


def fit_source(dataset, config, arch, seed):
    """Build a model from ``arch`` and train it on labeled source data."""
    init_seq, train_seq = np.random.SeedSequence([seed, 1]).spawn(2)
    model = Model.build(dataset.X.shape[1], dataset.num_classes,
                        rng=np.random.default_rng(init_seq), **arch)
    return train_source(dataset, config, model, np.random.default_rng(train_seq))


@dataclass
class BatchResult:
    buffer: Buffer
    predictions: np.ndarray
    confidences: np.ndarray
    losses: tuple  # (ent, eqdiv, mixup, total), averaged over the last epoch


def adapt_on_batch(model, batch, buffer, config, rng, batch_index=None, uids=None,
                   progress_window=(0.0, 1.0)):
    """Adapt the generator on batch + buffer, then run the buffer manager.

    Only generator parameters are updated. Pseudo-labels are refreshed at
    the start of every epoch. Schedule progress runs linearly across
    ``progress_window`` over this batch's steps; the default restarts it
    at p=0 for every incoming batch.
    """
    batch = np.asarray(batch, dtype=np.float64)
    hp = config.hp
    x_star = merged_set(buffer, batch)
    n = x_star.shape[0]
    slices = minibatch_slices(n, config.minibatch_size)
    total = config.epochs_per_batch * len(slices)
    params = model.generator_params()
    if config.reset_momentum:
        for _, p in params:
            p.momentum.fill(0.0)
    fixed_lambda = None if config.use_mixup else 1.0
    step = 0
    last = []
    for epoch in range(config.epochs_per_batch):
        labels = pseudo_labels(model, x_star).labels
        order = rng.permutation(n)
        vb = make_virtual_batch(x_star[order], labels[order], hp.rho, rng, lambdas=fixed_lambda)
        if epoch == config.epochs_per_batch - 1:
            last = []
        for sl in slices:
            model.zero_grad()
            logits = model.forward(vb.x_mix[sl], "train")
            parts, grad = adaptation_objective(logits, vb.y_a[sl], vb.y_b[sl], vb.lambdas[sl], hp)
            if not np.isfinite(parts.total):
                raise DivergenceError("adaptation loss became non-finite")
            model.backward(grad)
            p0, p1 = progress_window
            sgd_step(params, lr_schedule(config.eta0, p0 + (p1 - p0) * step / total),
                     config.momentum, config.head_lr_multiplier)
            step += 1
            last.append((parts.ent, parts.eqdiv, parts.mixup, parts.total))

    probs = softmax(model.forward(batch, "eval"))
    preds = probs.argmax(axis=1).astype(np.int64)
    confs = probs.max(axis=1)
    relabeled, _ = relabel_buffer(model, buffer)
    new_buffer = update_buffer(buffer, batch, preds, confs, relabeled, rng,
                               batch_index=batch_index, uids=uids)
    losses = tuple(float(v) for v in np.mean(np.asarray(last), axis=0))
    return BatchResult(new_buffer, preds, confs, losses)


class ContinualRun:
    """Mutable state of one continual adaptation run over a target stream.

    The model is copied on construction, so the source model passed in is
    never modified.
    """

    def __init__(self, source_model, target, config, seed=None, stream=None):
        seed = config.seed if seed is None else seed
        self.config = config
        self.seed = seed
        self.target = target
        self.model = source_model.copy()
        for _, p in self.model.named_params():
            p.zero_grad()
            p.momentum.fill(0.0)
        stream_seq, adapt_seq = np.random.SeedSequence([seed, 2]).spawn(2)
        if stream is None:
            stream = stream_batches(len(target), config.batch_size, stream_seq)
        self.stream = stream
        self.rng = np.random.default_rng(adapt_seq)
        self.buffer = Buffer(config.buffer_capacity, self.model.num_classes)
        self.batch_index = 0
        self.records = [MetricsRecord(0, evaluate(self.model, target), seed=seed)]

    @property
    def done(self):
        return self.batch_index >= self.stream.m

    def step(self):
        idx = self.stream.batches[self.batch_index]
        t0 = time.perf_counter()
        j = self.batch_index + 1
        if self.config.schedule_scope == "stream":
            window = (self.batch_index / self.stream.m, j / self.stream.m)
        else:
            window = (0.0, 1.0)
        result = adapt_on_batch(self.model, self.target.X[idx], self.buffer, self.config,
                                self.rng, batch_index=j, uids=idx, progress_window=window)
        self.buffer = result.buffer
        self.batch_index = j
        acc = evaluate(self.model, self.target)
        ent, div, mix, tot = result.losses
        rec = MetricsRecord(j, acc, ent, div, mix, tot, time.perf_counter() - t0, self.seed)
        self.records.append(rec)
        return rec

    def run(self, until=None):
        stop = self.stream.m if until is None else min(until, self.stream.m)
        while self.batch_index < stop:
            self.step()
        return self.records


def run_continual(source_model, target, config, seed=None, stream=None):
    """Adapt over the whole stream; record 0 is the unadapted source model."""
    return ContinualRun(source_model, target, config, seed, stream).run()
