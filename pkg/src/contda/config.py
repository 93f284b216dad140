"""JSON experiment configuration with one section per module.

Unknown sections or keys are rejected. ``--set section.key=value``
overrides are parsed as JSON, falling back to a bare string.
"""
import copy
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

METHODS = ("full-target", "continual-no-buffer", "conda", "conda-no-eqdiv")


@dataclass
class DataSection:
    preset: str = "moons-rot30"
    overrides: dict = field(default_factory=dict)


@dataclass
class ModelSection:
    hidden: list = field(default_factory=lambda: [64, 64])
    d_f: int = 16


@dataclass
class SourceSection:
    epochs: int = 30
    minibatch_size: int = 32
    eta0: float = 1e-2
    momentum: float = 0.9
    head_lr_multiplier: float = 10.0


@dataclass
class AdaptSection:
    batch_size: int = 25
    epochs_per_batch: int = 15
    minibatch_size: int = 32
    buffer_slots_per_class: int = 4
    eta0: float = 1e-3
    momentum: float = 0.9
    head_lr_multiplier: float = 10.0
    reset_momentum: bool = False
    schedule_scope: str = "batch"


@dataclass
class LossSection:
    gamma1: float = 1.0
    gamma2: float = 0.5
    rho: float = 1.0
    smoothing: float = 0.1


@dataclass
class ExperimentSection:
    method: str = "conda"
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out: str = "runs/default"
    batch_sizes: list = field(default_factory=lambda: [25, 50, 100])
    slots_per_class: list = field(default_factory=lambda: [0, 2, 8])
    jobs: int = 1


SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "source": SourceSection,
    "adapt": AdaptSection,
    "loss": LossSection,
    "experiment": ExperimentSection,
}


@dataclass
class ExperimentConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    source: SourceSection = field(default_factory=SourceSection)
    adapt: AdaptSection = field(default_factory=AdaptSection)
    loss: LossSection = field(default_factory=LossSection)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)

    def __post_init__(self):
        if self.experiment.method not in METHODS:
            raise ConfigError("unknown method %r; expected one of %s" % (self.experiment.method, METHODS))
        if not self.experiment.seeds:
            raise ConfigError("at least one seed is required")

    def to_dict(self):
        return asdict(self)

    def copy(self):
        return copy.deepcopy(self)


def _build_section(name, values):
    cls = SECTIONS[name]
    if not isinstance(values, dict):
        raise ConfigError("section %r must be an object" % name)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError("unknown key(s) in section %r: %s" % (name, ", ".join(unknown)))
    return cls(**values)


def from_dict(raw):
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError("unknown config section(s): %s" % ", ".join(unknown))
    return ExperimentConfig(**{name: _build_section(name, raw.get(name, {})) for name in SECTIONS})


def load_config(path=None, overrides=()):
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    raw = apply_overrides(raw, overrides)
    return from_dict(raw)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw, overrides):
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override %r is not of the form section.key=value" % item)
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) < 2:
            raise ConfigError("override key %r needs a section prefix" % key)
        if parts[0] not in SECTIONS:
            raise ConfigError("unknown config section %r" % parts[0])
        node = raw.setdefault(parts[0], {})
        for p in parts[1:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value)
    return raw


def save_config(config, path):
    with open(path, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
