"""Command-line entry point: ``joao {stats,pretrain,evaluate,export-dist}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .augment import matrix_to_csv
from .config import RunConfig, build_run_config, read_config_file
from .errors import ConfigError, DatasetError, NumericalAbort
from .evaluate import embed_dataset, export_selection_heatmap, linear_probe_cv
from .graph import dataset_stats, parse_tudataset
from .nn import CheckpointError, load_checkpoint, save_checkpoint
from .optim import RunLog, TrainHistory, agd_train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.ckpt"
LOG_NAME = "run.jsonl"
SELECTION_NAME = "selection.csv"
DISTRIBUTION_NAME = "distribution.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dataset_args(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--data", required=required, help="TUDataset directory")
    p.add_argument("--name", help="file prefix inside the directory (default: directory name)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="joao", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stats", help="print dataset statistics")
    _dataset_args(p)

    p = sub.add_parser("pretrain", help="contrastive pre-training with learned augmentation pairs")
    p.add_argument("--config", help="flat key = value config file")
    _dataset_args(p, required=False)
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=("joao", "joaov2"))
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float, help="model learning rate")
    p.add_argument("--lr-dist", type=float, help="learning rate of the pair distribution")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lower-every", type=int, help="minibatches between distribution updates (0 = per epoch)")
    p.add_argument("--same-batch-lower", action="store_const", const="false", dest="fresh_lower_batch",
                   help="estimate pair losses on the last training minibatch instead of a fresh one")
    p.add_argument("--pool", help="comma-separated augmentation kinds, e.g. NodeDrop,Subgraph")
    p.add_argument("--strength", type=float, help="augmentation ratio in [0, 1)")
    p.add_argument("--tau", type=float, help="NT-Xent temperature")
    p.add_argument("--symmetric", action="store_const", const="true")
    p.add_argument("--edge-pert-mode", choices=("rewire", "drop_only"))
    p.add_argument("--mask-value", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--proj-dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int, help="epochs between intermediate checkpoints (0 = final only)")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")

    p = sub.add_parser("evaluate", help="linear-probe a checkpoint with k-fold cross-validation")
    p.add_argument("--checkpoint", required=True)
    _dataset_args(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="report JSON path (default: next to the checkpoint)")

    p = sub.add_parser("export-dist", help="write a 5x5 CSV from a run log or checkpoint")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--log", help="run log (JSON lines)")
    src.add_argument("--checkpoint")
    p.add_argument("--what", choices=("selection", "distribution"), default="selection",
                   help="selection percentages or the final learned distribution")
    p.add_argument("--out", required=True)
    p.add_argument("--header", action="store_true", help="label rows and columns with kind names")
    return parser


_PRETRAIN_KEYS = ("data", "name", "out", "mode", "gamma", "lr", "lr_dist", "epochs", "batch_size", "lower_every",
                  "fresh_lower_batch", "pool", "strength", "tau", "symmetric", "edge_pert_mode", "mask_value",
                  "hidden", "layers", "proj_dim", "seed", "checkpoint_every", "threads")


def _threads(n):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _load(data: str, name: str | None):
    d = Path(data)
    return parse_tudataset(d, name or d.resolve().name)


def cmd_stats(args) -> int:
    print(dataset_stats(_load(args.data, args.name)).summary())
    return EXIT_OK


def run_pretrain(cfg: RunConfig) -> dict:
    cfg.validate()
    ds = parse_tudataset(cfg.data, cfg.dataset_name)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jc = cfg.joao

    def meta(epoch, dist):
        return dict(mode=jc.mode, seed=jc.seed, epoch=epoch, dataset=cfg.dataset_name,
                    arrays={"pair_distribution": dist.p})

    with RunLog(out / LOG_NAME) as run_log, _threads(cfg.threads):
        run_log.write("config", **cfg.to_record())

        def on_epoch_end(epoch, state, dist):
            if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch < jc.epochs:
                name = f"checkpoint-epoch{epoch:04d}.ckpt"
                save_checkpoint(out / name, state, **meta(epoch, dist))
                run_log.write("checkpoint", epoch=epoch, file=name)

        result = agd_train(jc, ds, run_log, on_epoch_end)
        save_checkpoint(out / CHECKPOINT_NAME, result.state, **meta(jc.epochs, result.distribution))
        run_log.write("checkpoint", epoch=jc.epochs, file=CHECKPOINT_NAME)
    export_selection_heatmap(result.history, out / SELECTION_NAME)
    matrix_to_csv(result.distribution.p, out / DISTRIBUTION_NAME)
    return {"result": result, "out": out}


def cmd_pretrain(args) -> int:
    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k, None) for k in _PRETRAIN_KEYS}
    cfg = build_run_config(file_values, overrides)
    done = run_pretrain(cfg)
    res, out = done["result"], done["out"]
    print(f"trained {cfg.joao.epochs} epochs ({cfg.joao.mode}); final loss {res.history.epoch_losses[-1]:.4f}")
    print(f"wrote {out / CHECKPOINT_NAME}, {out / LOG_NAME}, {out / SELECTION_NAME}, {out / DISTRIBUTION_NAME}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .rng import resolve_seed
    state, header, _ = load_checkpoint(args.checkpoint)
    ds = _load(args.data, args.name)
    if ds.feature_dim != state.encoder.in_dim:
        raise DatasetError(f"checkpoint expects feature width {state.encoder.in_dim}, dataset has {ds.feature_dim}")
    try:
        report = linear_probe_cv(embed_dataset(state, ds), args.folds, resolve_seed(args.seed))
    except ValueError as exc:
        raise DatasetError(str(exc)) from None
    path = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".probe.json")
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"accuracy {100 * report.mean:.2f} ± {100 * report.std:.2f} over {args.folds} folds ({path})")
    return EXIT_OK


def cmd_export_dist(args) -> int:
    if args.checkpoint:
        if args.what != "distribution":
            raise ConfigError("a checkpoint only holds the learned distribution; use --what distribution")
        _, _, extra = load_checkpoint(args.checkpoint)
        if "pair_distribution" not in extra:
            raise CheckpointError(f"{args.checkpoint} has no pair distribution")
        matrix = extra["pair_distribution"]
    else:
        try:
            records = RunLog.read(args.log)
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read run log {args.log}: {exc}") from None
        hist = TrainHistory.from_log(records)
        if args.what == "selection":
            try:
                matrix = hist.selection_percentages()
            except ValueError as exc:
                raise DatasetError(f"{args.log}: {exc}") from None
        else:
            if not hist.distributions:
                raise DatasetError(f"{args.log}: no distribution updates recorded")
            matrix = hist.distributions[-1].p
    matrix_to_csv(np.asarray(matrix), Path(args.out), header=args.header)
    print(f"wrote {args.out}")
    return EXIT_OK


COMMANDS = {"stats": cmd_stats, "pretrain": cmd_pretrain, "evaluate": cmd_evaluate, "export-dist": cmd_export_dist}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
