"""Command-line front end: ``protogen {gen-data,train,eval,compare} CONFIG``."""

import argparse
import logging
import sys

from . import kernels
from .config import load_config
from .embeddings import (
    compute_global_prototypes,
    generate_synthetic,
    load_embeddings,
    save_embeddings,
    split_classes,
)
from .errors import ProtogenError
from .evaluation import (
    PrototypeStrategy,
    compare,
    evaluate,
    format_table,
    write_episode_csv,
    write_summary_csv,
)
from .generator import init_params, load_params, save_params
from .training import TrainLog, train

log = logging.getLogger("protogen")


def cmd_gen_data(cfg):
    spec = cfg.synthetic_spec()
    ds = generate_synthetic(spec)
    save_embeddings(ds, cfg.path("dataset"))
    print(
        f"generated C={spec.n_classes} d={spec.dim} M={spec.samples_per_class} "
        f"rho={spec.outlier_fraction:g} s={spec.outlier_shift:g} -> {len(ds)} rows"
    )
    counts = cfg.data.get("split")
    if counts:
        parts = split_classes(ds, counts)
        for key, part in zip(("train", "val", "test"), parts):
            if key in cfg.paths:
                save_embeddings(part, cfg.paths[key])
                print(f"  {key}: {len(part.classes)} classes, {len(part)} rows")
    return 0


def _load_generator(cfg, dim):
    return load_params(cfg.path("checkpoint"), expected_config=cfg.attention_config(dim))


def cmd_train(cfg):
    train_ds = load_embeddings(cfg.path("train"))
    val_ds = load_embeddings(cfg.path("val"))
    if val_ds.dim != train_ds.dim:
        raise ProtogenError(f"train dim {train_ds.dim} != val dim {val_ds.dim}")
    table = compute_global_prototypes(train_ds)
    tcfg = cfg.train_config(train_ds.dim)
    if tcfg.epochs == 0:
        params, trace = init_params(tcfg.attention, tcfg.seed), TrainLog()
    else:
        params, trace = train(train_ds, val_ds, table, tcfg)
    save_params(params, cfg.path("checkpoint"))
    if "train_log" in cfg.paths:
        trace.to_csv(cfg.paths["train_log"])
    if len(trace):
        best = trace.best_epoch
        print(
            f"trained {len(trace)} epochs x {tcfg.episodes_per_epoch} episodes; "
            f"best epoch {best} val acc {100 * trace.val_acc[best]:.2f}%"
        )
    else:
        print("0 epochs: wrote initial parameters")
    return 0


def _eval_dataset(cfg):
    return load_embeddings(cfg.path("test"))


def _write_reports(cfg, reports):
    if "report" in cfg.paths:
        write_episode_csv(reports, cfg.paths["report"])
    if "summary" in cfg.paths:
        write_summary_csv(reports, cfg.paths["summary"])
    print(format_table(reports))


def cmd_eval(cfg):
    ds = _eval_dataset(cfg)
    table = compute_global_prototypes(ds)
    kind = cfg.strategy
    if kind == "mean":
        strategy = PrototypeStrategy.mean()
    elif kind == "generator":
        strategy = PrototypeStrategy.generator(_load_generator(cfg, ds.dim))
    else:
        strategy = PrototypeStrategy.global_oracle(table)
    report = evaluate(ds, strategy, cfg.eval_spec(), cfg.eval_episodes, global_table=table)
    _write_reports(cfg, [report])
    return 0


def cmd_compare(cfg):
    ds = _eval_dataset(cfg)
    table = compute_global_prototypes(ds)
    params = _load_generator(cfg, ds.dim)
    reports = compare(ds, params, table, cfg.eval_spec(), cfg.eval_episodes)
    _write_reports(cfg, list(reports.values()))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
}

_PATH_FLAGS = ("dataset", "train", "val", "test", "checkpoint", "train_log", "report", "summary")


def build_parser():
    p = argparse.ArgumentParser(prog="protogen", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", help="INI config file")
    p.add_argument("--seed", type=int, help="override [run] seed")
    for key in _PATH_FLAGS:
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="PATH", help=f"override [paths] {key}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    log.info("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = load_config(args.config)
        cfg = cfg.with_overrides(seed=args.seed, paths={k: getattr(args, k) for k in _PATH_FLAGS})
        return COMMANDS[args.command](cfg)
    except (ProtogenError, OSError, ValueError) as exc:
        print(f"protogen {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
