"""Command-line entry point: ``contda <subcommand> --config C --seed S --out DIR``."""
import argparse
import logging
import os
import sys

from . import experiment as ex
from ._kernels import BACKEND
from .adaptation import ContinualRun
from .checkpoint import (
    load_checkpoint,
    model_checkpoint,
    model_from_checkpoint,
    restore_run,
    run_checkpoint,
    save_checkpoint,
)
from .config import load_config
from .errors import ContdaError, DivergenceError
from .metrics import MetricsRecord, evaluate

log = logging.getLogger("contda")


def _int_list(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=_int_list, help="seed or comma-separated seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override, e.g. --set adapt.batch_size=50 (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="contda", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-source", help="train source models and save checkpoints")
    _common(p)

    p = sub.add_parser("adapt-full", help="adapt on the whole target domain at once")
    _common(p)

    p = sub.add_parser("adapt-continual", help="continual adaptation over a batch stream")
    _common(p)
    p.add_argument("--checkpoint-at", type=int, metavar="J",
                   help="also save a run checkpoint after batch J")
    p.add_argument("--resume", metavar="PATH", help="continue a run from a checkpoint")

    p = sub.add_parser("grid-batchsize", help="final accuracy across continual batch sizes")
    _common(p)
    p.add_argument("--sizes", type=_int_list, help="comma-separated batch sizes")

    p = sub.add_parser("grid-buffersize", help="final accuracy across buffer slots per class")
    _common(p)
    p.add_argument("--slots", type=_int_list, help="comma-separated slots per class")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the config's domains")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    return parser


def _config(args, method=None):
    overrides = list(args.set)
    cfg = load_config(args.config, overrides)
    if args.seed:
        cfg.experiment.seeds = args.seed
    if args.out:
        cfg.experiment.out = args.out
    if method:
        cfg.experiment.method = method
    return cfg


def _print_summary(rows, keys):
    for row in rows:
        head = " ".join("%s=%s" % (k, row[k]) for k in keys)
        print("%s mean=%.4f std=%.4f n=%d failed=%d" % (
            head, row["mean_final_accuracy"], row["std_final_accuracy"],
            row["n_seeds"], row["n_failed"]))


def cmd_train_source(cfg):
    out = cfg.experiment.out
    os.makedirs(out, exist_ok=True)
    rows = []
    for seed in cfg.experiment.seeds:
        source, target = ex.domain_pair(cfg, seed)
        model = ex.source_model(cfg, seed, source)
        path = os.path.join(out, "source_seed%d.ckpt" % seed)
        save_checkpoint(path, model_checkpoint(model, seed=seed))
        row = dict(seed=seed, source_accuracy=evaluate(model, source),
                   target_accuracy=evaluate(model, target))
        rows.append(row)
        print("seed=%d source=%.4f target=%.4f -> %s" % (
            seed, row["source_accuracy"], row["target_accuracy"], path))
    ex.write_csv(os.path.join(out, "source.csv"), ["seed", "source_accuracy", "target_accuracy"], rows)
    return 0


def cmd_experiment(cfg):
    result = ex.run_experiment(cfg)
    _print_summary(result.summary, ["method"])
    return 1 if result.failed else 0


def _finish_run(cfg, run, seed):
    failed = False
    try:
        run.run()
    except DivergenceError as exc:
        log.error("seed %d diverged: %s", seed, exc)
        nan = float("nan")
        run.records.append(MetricsRecord(-1, nan, nan, nan, nan, nan, 0.0, seed))
        failed = True
    res = ex.VariantResult(cfg.experiment.method, seed, run.config.batch_size,
                           run.config.buffer_capacity // run.model.num_classes,
                           run.records[0].accuracy, run.records[1:], failed)
    out = cfg.experiment.out
    ex.write_csv(os.path.join(out, "metrics_%s_seed%d.csv" % (res.method, seed)),
                 ex.METRIC_COLUMNS, list(ex._metric_rows(res)))
    return res


def cmd_adapt_continual(cfg, checkpoint_at=None, resume=None):
    if checkpoint_at is None and resume is None:
        return cmd_experiment(cfg)
    out = cfg.experiment.out
    os.makedirs(out, exist_ok=True)
    method = cfg.experiment.method
    results = []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        seed = ckpt.header["seed"]
        source, target = ex.domain_pair(cfg, seed)
        cc = ex.continual_config(cfg, method, len(target), target.num_classes, seed)
        results.append(_finish_run(cfg, restore_run(ckpt, target, cc), seed))
    else:
        for seed in cfg.experiment.seeds:
            source, target = ex.domain_pair(cfg, seed)
            model = ex.source_model(cfg, seed, source)
            cc = ex.continual_config(cfg, method, len(target), target.num_classes, seed)
            run = ContinualRun(model, target, cc, seed=seed)
            run.run(until=checkpoint_at)
            path = os.path.join(out, "run_%s_seed%d_b%d.ckpt" % (method, seed, run.batch_index))
            save_checkpoint(path, run_checkpoint(run))
            print("checkpoint -> %s" % path)
            results.append(_finish_run(cfg, run, seed))
    _print_summary(ex.summarize(results), ["method"])
    return 1 if any(r.failed for r in results) else 0


def cmd_grid_batchsize(cfg, sizes):
    result = ex.grid_batchsize(cfg, sizes)
    _print_summary(result.summary, ["method", "batch_size"])
    return 1 if result.failed else 0


def cmd_grid_buffersize(cfg, slots):
    result = ex.grid_buffersize(cfg, slots)
    _print_summary(result.summary, ["method", "slots_per_class"])
    return 1 if result.failed else 0


def cmd_eval(cfg, path):
    ckpt = load_checkpoint(path)
    model = model_from_checkpoint(ckpt)
    seeds = [ckpt.header["seed"]] if "seed" in ckpt.header else cfg.experiment.seeds
    for seed in seeds:
        source, target = ex.domain_pair(cfg, seed)
        print("seed=%d source=%.6f target=%.6f" % (seed, evaluate(model, source), evaluate(model, target)))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.info("kernel backend: %s", BACKEND)
    try:
        if args.command == "train-source":
            return cmd_train_source(_config(args))
        if args.command == "adapt-full":
            return cmd_experiment(_config(args, method="full-target"))
        if args.command == "adapt-continual":
            return cmd_adapt_continual(_config(args), args.checkpoint_at, args.resume)
        if args.command == "grid-batchsize":
            return cmd_grid_batchsize(_config(args), args.sizes)
        if args.command == "grid-buffersize":
            return cmd_grid_buffersize(_config(args), args.slots)
        if args.command == "eval":
            return cmd_eval(_config(args), args.checkpoint)
    except (ContdaError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
