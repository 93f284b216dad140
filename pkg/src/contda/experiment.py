"""Experiment driver: seeds x variants, per-seed CSVs, grids and summaries.

Every CSV written here is a pure function of (config, seeds). Wall-clock
timings go to a separate ``timings.csv`` so they never disturb that.
"""
import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adaptation import ContinualConfig, SourceConfig, fit_source, run_continual
from .config import ExperimentConfig, from_dict, save_config
from .data import make_domain_pair, preset
from .errors import DivergenceError
from .losses import HyperParams
from .metrics import MetricsRecord, evaluate

METRIC_COLUMNS = ["method", "seed", "batch_index", "accuracy",
                  "l_ent", "l_eqdiv", "l_mixup", "total", "status"]
SUMMARY_COLUMNS = ["method", "n_seeds", "mean_final_accuracy", "std_final_accuracy",
                   "mean_source_accuracy", "n_failed"]


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row[c]) for c in columns])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    if a.size == 0:
        return float("nan"), float("nan")
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return float(a.mean()), std


def domain_pair(cfg, seed):
    return make_domain_pair(preset(cfg.data.preset, seed=seed, **cfg.data.overrides))


_source_cache = {}


def clear_source_cache():
    _source_cache.clear()


def source_model(cfg, seed, source):
    """Source-trained model for (config, seed); memoized per process."""
    key = json.dumps([cfg.to_dict()[k] for k in ("data", "model", "source")]
                     + [cfg.loss.smoothing, seed], sort_keys=True)
    if key not in _source_cache:
        sc = SourceConfig(smoothing=cfg.loss.smoothing, **vars(cfg.source))
        arch = dict(hidden=tuple(cfg.model.hidden), d_f=cfg.model.d_f)
        _source_cache[key] = fit_source(source, sc, arch, seed)
    return _source_cache[key].copy()


def continual_config(cfg, method, n_target, num_classes, seed, batch_size=None, slots=None):
    """Map a method variant onto loss terms, buffer and streaming."""
    a = cfg.adapt
    hp = HyperParams(gamma1=cfg.loss.gamma1, gamma2=cfg.loss.gamma2,
                     rho=cfg.loss.rho, smoothing=cfg.loss.smoothing)
    batch_size = a.batch_size if batch_size is None else batch_size
    slots = a.buffer_slots_per_class if slots is None else slots
    use_mixup = True
    if method == "full-target":
        batch_size, slots, use_mixup = n_target, 0, False
    elif method == "continual-no-buffer":
        slots, use_mixup = 0, False
    elif method == "conda-no-eqdiv":
        hp.gamma1 = 0.0
    return ContinualConfig(
        batch_size=batch_size,
        epochs_per_batch=a.epochs_per_batch,
        minibatch_size=a.minibatch_size,
        buffer_capacity=slots * num_classes,
        eta0=a.eta0,
        momentum=a.momentum,
        head_lr_multiplier=a.head_lr_multiplier,
        use_mixup=use_mixup,
        reset_momentum=a.reset_momentum,
        schedule_scope=a.schedule_scope,
        hp=hp,
        seed=seed,
    )


@dataclass
class VariantResult:
    method: str
    seed: int
    batch_size: int
    slots: int
    source_accuracy: float
    records: list = field(default_factory=list)  # batch_index >= 1 only
    failed: bool = False

    @property
    def final_accuracy(self):
        return self.records[-1].accuracy if self.records else self.source_accuracy


def run_variant(cfg, method, seed, batch_size=None, slots=None):
    source, target = domain_pair(cfg, seed)
    model = source_model(cfg, seed, source)
    cc = continual_config(cfg, method, len(target), target.num_classes, seed, batch_size, slots)
    src_acc = evaluate(model, target)
    try:
        records = run_continual(model, target, cc, seed=seed)[1:]
        failed = any(r.failed for r in records)
    except DivergenceError:
        nan = float("nan")
        records = [MetricsRecord(-1, nan, nan, nan, nan, nan, 0.0, seed)]
        failed = True
    return VariantResult(method, seed, cc.batch_size, cc.buffer_capacity // target.num_classes,
                         src_acc, records, failed)


def _task(args):
    cfg_dict, method, seed, batch_size, slots = args
    return run_variant(from_dict(cfg_dict), method, seed, batch_size, slots)


def run_tasks(cfg, tasks):
    """Run (method, seed, batch_size, slots) cells, optionally in worker processes."""
    payload = [(cfg.to_dict(),) + tuple(t) for t in tasks]
    if cfg.experiment.jobs > 1 and len(payload) > 1:
        with ProcessPoolExecutor(max_workers=cfg.experiment.jobs) as pool:
            return list(pool.map(_task, payload))
    return [_task(p) for p in payload]


def _metric_rows(result):
    for r in result.records:
        yield dict(method=result.method, seed=result.seed, batch_index=r.batch_index,
                   accuracy=r.accuracy, l_ent=r.l_ent, l_eqdiv=r.l_eqdiv,
                   l_mixup=r.l_mixup, total=r.total,
                   status="failed" if result.failed else "ok")


@dataclass
class ExperimentResult:
    results: list
    summary: list

    @property
    def failed(self):
        return any(r.failed for r in self.results)

    def final_accuracies(self, method):
        return [r.final_accuracy for r in self.results if r.method == method]


def summarize(results, key=lambda r: (r.method,), key_names=("method",)):
    groups = {}
    for r in results:
        groups.setdefault(key(r), []).append(r)
    rows = []
    for k in sorted(groups):
        rs = groups[k]
        ok = [r for r in rs if not r.failed]
        m, s = mean_std([r.final_accuracy for r in ok])
        row = dict(zip(key_names, k))
        row.update(n_seeds=len(rs), mean_final_accuracy=m, std_final_accuracy=s,
                   mean_source_accuracy=mean_std([r.source_accuracy for r in rs])[0],
                   n_failed=len(rs) - len(ok))
        rows.append(row)
    return rows


def _prepare_out(out_dir, cfg):
    os.makedirs(out_dir, exist_ok=True)
    save_config(cfg, os.path.join(out_dir, "config.json"))


def _write_timings(path, results, extra=()):
    cols = ["method", "seed"] + list(extra) + ["batch_index", "seconds"]
    rows = []
    for res in results:
        for r in res.records:
            row = dict(method=res.method, seed=res.seed, batch_index=r.batch_index, seconds=r.seconds)
            for e in extra:
                row[e] = getattr(res, e)
            rows.append(row)
    write_csv(path, cols, rows)


def run_experiment(cfg, out_dir=None, methods=None):
    """Train source, run the variant(s) for every seed, write CSVs."""
    methods = [cfg.experiment.method] if methods is None else list(methods)
    seeds = list(cfg.experiment.seeds)
    results = run_tasks(cfg, [(m, s, None, None) for m in methods for s in seeds])
    summary = summarize(results)
    out_dir = cfg.experiment.out if out_dir is None else out_dir
    if out_dir:
        _prepare_out(out_dir, cfg)
        for res in results:
            name = "metrics_%s_seed%d.csv" % (res.method, res.seed)
            write_csv(os.path.join(out_dir, name), METRIC_COLUMNS, list(_metric_rows(res)))
        write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary)
        _write_timings(os.path.join(out_dir, "timings.csv"), results)
    return ExperimentResult(results, summary)


GRID_BATCH_VARIANTS = ("continual-no-buffer", "conda")


def grid_batchsize(cfg, batch_sizes=None, out_dir=None, variants=GRID_BATCH_VARIANTS):
    sizes = list(cfg.experiment.batch_sizes if batch_sizes is None else batch_sizes)
    if len(sizes) < 2:
        raise ValueError("a batch-size grid needs at least two sizes")
    seeds = list(cfg.experiment.seeds)
    tasks = [(v, s, b, None) for v in variants for b in sizes for s in seeds]
    results = run_tasks(cfg, tasks)
    rows = [dict(method=r.method, batch_size=r.batch_size, seed=r.seed,
                 final_accuracy=r.final_accuracy, status="failed" if r.failed else "ok")
            for r in results]
    summary = summarize(results, key=lambda r: (r.method, r.batch_size),
                        key_names=("method", "batch_size"))
    out_dir = cfg.experiment.out if out_dir is None else out_dir
    if out_dir:
        _prepare_out(out_dir, cfg)
        write_csv(os.path.join(out_dir, "grid_batchsize.csv"),
                  ["method", "batch_size", "seed", "final_accuracy", "status"], rows)
        write_csv(os.path.join(out_dir, "grid_batchsize_summary.csv"),
                  ["method", "batch_size"] + SUMMARY_COLUMNS[1:], summary)
        _write_timings(os.path.join(out_dir, "timings.csv"), results, extra=("batch_size",))
    return ExperimentResult(results, summary)


def grid_buffersize(cfg, slots_per_class=None, out_dir=None, variant="conda"):
    slots = list(cfg.experiment.slots_per_class if slots_per_class is None else slots_per_class)
    if len(slots) < 2:
        raise ValueError("a buffer-size grid needs at least two sizes")
    seeds = list(cfg.experiment.seeds)
    results = run_tasks(cfg, [(variant, s, None, k) for k in slots for s in seeds])
    rows = [dict(method=r.method, slots_per_class=r.slots, seed=r.seed,
                 final_accuracy=r.final_accuracy, status="failed" if r.failed else "ok")
            for r in results]
    summary = summarize(results, key=lambda r: (r.method, r.slots),
                        key_names=("method", "slots_per_class"))
    out_dir = cfg.experiment.out if out_dir is None else out_dir
    if out_dir:
        _prepare_out(out_dir, cfg)
        write_csv(os.path.join(out_dir, "grid_buffersize.csv"),
                  ["method", "slots_per_class", "seed", "final_accuracy", "status"], rows)
        write_csv(os.path.join(out_dir, "grid_buffersize_summary.csv"),
                  ["method", "slots_per_class"] + SUMMARY_COLUMNS[1:], summary)
        _write_timings(os.path.join(out_dir, "timings.csv"), results, extra=("slots",))
    return ExperimentResult(results, summary)


def default_config(**sections):
    cfg = ExperimentConfig()
    for name, values in sections.items():
        section = getattr(cfg, name)
        for k, v in values.items():
            setattr(section, k, v)
    return from_dict(cfg.to_dict())
