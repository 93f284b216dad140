"""Binary checkpoints: magic, length-prefixed JSON header, raw float64 arrays.

Layout::

    b"CONDA\\x01"
    uint64 little-endian header length
    header (UTF-8 JSON, sorted keys, compact separators)
    arrays as little-endian float64, in the order listed in header["arrays"]

Everything numeric that must survive bit-exactly lives in the arrays; the
header carries shapes, counts, integers and the RNG state.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .buffer import Buffer, BufferEntry
from .errors import CheckpointCorruptError, CheckpointFormatError
from .metrics import MetricsRecord
from .netcore import Model

MAGIC = b"CONDA\x01"
FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")


@dataclass
class Checkpoint:
    header: dict
    arrays: dict = field(default_factory=dict)  # insertion order is the on-disk order


def encode(ckpt):
    header = dict(ckpt.header)
    header["format_version"] = FORMAT_VERSION
    header["arrays"] = [[name, list(a.shape)] for name, a in ckpt.arrays.items()]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _LEN.pack(len(blob)), blob]
    for a in ckpt.arrays.values():
        parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(data):
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("bad magic bytes; not a checkpoint")
    pos = len(MAGIC)
    if len(data) < pos + _LEN.size:
        raise CheckpointCorruptError("truncated header length")
    (hlen,) = _LEN.unpack_from(data, pos)
    pos += _LEN.size
    if len(data) < pos + hlen:
        raise CheckpointCorruptError("truncated header")
    try:
        header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError("unreadable header: %s" % exc) from None
    pos += hlen
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError("unsupported format version %r" % header.get("format_version"))
    arrays = {}
    for name, shape in header.pop("arrays"):
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if len(data) < pos + nbytes:
            raise CheckpointCorruptError("truncated array %r" % name)
        if count == 0:
            arrays[name] = np.empty(shape)
        else:
            arrays[name] = (np.frombuffer(data, dtype="<f8", count=count, offset=pos)
                            .reshape(shape).astype(np.float64))
        pos += nbytes
    if pos != len(data):
        raise CheckpointCorruptError("%d trailing bytes after last array" % (len(data) - pos))
    header.pop("format_version")
    return Checkpoint(header, arrays)


def save_checkpoint(path, ckpt):
    with open(path, "wb") as fh:
        fh.write(encode(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def _model_parts(model):
    header = {
        "arch": {
            "d_in": model.d_in,
            "hidden": list(model.hidden),
            "d_f": model.d_f,
            "num_classes": model.num_classes,
        },
        "bn": {"eps": model.generator.bn.eps, "momentum": model.generator.bn.momentum},
    }
    arrays = {}
    for name, p in model.named_params():
        arrays["param/" + name] = p.value
    for name, p in model.named_params():
        arrays["momentum/" + name] = p.momentum
    arrays["bn/running_mean"] = model.generator.bn.running_mean
    arrays["bn/running_var"] = model.generator.bn.running_var
    return header, arrays


def model_checkpoint(model, **extra):
    header, arrays = _model_parts(model)
    header["kind"] = "model"
    header.update(extra)
    return Checkpoint(header, arrays)


def model_from_checkpoint(ckpt):
    arch = ckpt.header["arch"]
    model = Model.build(arch["d_in"], arch["num_classes"], hidden=tuple(arch["hidden"]),
                        d_f=arch["d_f"], rng=np.random.default_rng(0))
    bn = model.generator.bn
    bn.eps = ckpt.header["bn"]["eps"]
    bn.momentum = ckpt.header["bn"]["momentum"]
    for name, p in model.named_params():
        try:
            p.value[...] = ckpt.arrays["param/" + name]
            p.momentum[...] = ckpt.arrays["momentum/" + name]
        except KeyError:
            raise CheckpointCorruptError("checkpoint lacks parameter %r" % name) from None
        p.zero_grad()
    bn.running_mean = ckpt.arrays["bn/running_mean"].copy()
    bn.running_var = ckpt.arrays["bn/running_var"].copy()
    return model


def run_checkpoint(run):
    """Everything needed to continue a ContinualRun bit-exactly."""
    header, arrays = _model_parts(run.model)
    flat = run.buffer.flat_entries()
    header.update({
        "kind": "run",
        "seed": run.seed,
        "batch_index": run.batch_index,
        "rng_state": run.rng.bit_generator.state,
        "buffer": {
            "capacity": run.buffer.capacity,
            "num_classes": run.buffer.num_classes,
            "state_index": run.buffer.state_index,
            "entries": [[k, e.inserted_at, e.uid]
                        for k, per_class in enumerate(run.buffer.entries) for e in per_class],
        },
        "records": [r.as_dict() for r in run.records],
    })
    d_in = run.model.d_in
    arrays["buffer/samples"] = np.stack([e.sample for e in flat]) if flat else np.empty((0, d_in))
    arrays["buffer/confidence"] = np.array([e.confidence for e in flat], dtype=np.float64)
    return Checkpoint(header, arrays)


def restore_run(ckpt, target, config):
    """Rebuild a ContinualRun from a run checkpoint."""
    from .adaptation import ContinualRun

    if ckpt.header.get("kind") != "run":
        raise CheckpointFormatError("checkpoint holds a %r, not a run" % ckpt.header.get("kind"))
    model = model_from_checkpoint(ckpt)
    run = ContinualRun(model, target, config, seed=ckpt.header["seed"])
    run.model = model
    meta = ckpt.header["buffer"]
    buf = Buffer(meta["capacity"], meta["num_classes"], state_index=meta["state_index"])
    samples = ckpt.arrays["buffer/samples"]
    conf = ckpt.arrays["buffer/confidence"]
    for i, (k, inserted_at, uid) in enumerate(meta["entries"]):
        buf.entries[k].append(BufferEntry(samples[i].copy(), k, float(conf[i]), inserted_at, uid))
    run.buffer = buf
    run.rng.bit_generator.state = ckpt.header["rng_state"]
    run.batch_index = ckpt.header["batch_index"]
    run.records = [MetricsRecord(**r) for r in ckpt.header["records"]]
    return run
