"""Command-line entry point: ``tspformer <command> ...``.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, oracle, posenc
from .model import DECODER_INPUT, DECODER_PE, ENCODER_PE, OUTPUT_HEAD, ModelConfig
from .numerics.functional import ConfigError
from .training import (
    TrainConfig,
    format_metrics,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .tsp import (
    DatasetRecord,
    atomic_write_bytes,
    atomic_write_text,
    format_tour_suffix,
    gen_instances,
    read_dataset,
    write_dataset,
)

log = logging.getLogger("tspformer")

LABEL_METHODS = {
    "held_karp": "held_karp",
    "brute_force": "brute_force",
    "nn": "nearest_neighbor",
    "nn+2opt": "two_opt",
}


class UsageError(Exception):
    pass


def _figure_path(path: Path) -> Path:
    return path.with_suffix(".png")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    if args.n < 3:
        raise UsageError(f"--n must be >= 3, got {args.n}")
    if args.count < 0:
        raise UsageError(f"--count must be >= 0, got {args.count}")
    instances = gen_instances(args.n, args.count, args.seed)
    write_dataset(args.out, [DatasetRecord(inst) for inst in instances])
    log.info("wrote %d instances to %s", args.count, args.out)
    return 0


def cmd_label(args) -> int:
    method = LABEL_METHODS[args.method]
    instances = [r.instance for r in read_dataset(args.input, require_tours=False)]
    records = oracle.label_dataset(instances, method)
    write_dataset(args.out, records)
    atomic_write_text(str(args.out) + ".meta", f"method={method}\ncount={len(records)}\n")
    log.info("labeled %d instances with %s", len(records), method)
    return 0


def _model_config(args) -> ModelConfig:
    return ModelConfig(
        d=args.d,
        layers=args.layers,
        heads=args.heads,
        ffn_dim=args.ffn_dim,
        dropout=args.dropout,
        encoder_pe=args.encoder_pe,
        decoder_pe=args.decoder_pe,
        decoder_input=args.decoder_input,
        output_head=args.output_head,
        pe_scale=args.pe_scale,
        max_nodes=args.max_nodes,
        logit_scale=args.logit_scale,
    )


def _train_config(args, val_frac: float) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        epochs=args.epochs,
        warmup=args.warmup,
        smoothing=args.smoothing,
        augment=not args.no_augment,
        seed=args.seed,
        lr_factor=args.lr_factor,
        weight_decay=args.weight_decay,
        val_frac=val_frac,
        grad_clip=args.grad_clip,
        use_visited_mask=not args.no_visited_mask,
        debug_checks=args.debug_checks,
    )


def cmd_train(args) -> int:
    records = read_dataset(args.data)
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        model_config = resume.model_config
    else:
        model_config = _model_config(args)
    result = train(records, model_config, _train_config(args, args.val_frac), resume=resume)
    save_checkpoint(args.out, result.checkpoint)
    metrics_path = Path(args.metrics) if args.metrics else Path(str(args.out) + ".metrics.csv")
    atomic_write_text(metrics_path, format_metrics(result.metrics))
    if not args.no_figures and result.metrics:
        from .plotting import plot_training_curve

        plot_training_curve(result.metrics, _figure_path(metrics_path))
    log.info("checkpoint %s (step %d), metrics %s", args.out, result.checkpoint.step, metrics_path)
    return 0


def _load_model(path):
    return load_checkpoint(path).to_model()


def cmd_solve(args) -> int:
    from .inference import greedy_decode_batch, multi_start_decode_batch

    model = _load_model(args.ckpt)
    records = read_dataset(args.input, require_tours=False)
    by_size: dict[int, list[int]] = {}
    for i, r in enumerate(records):
        by_size.setdefault(r.instance.n, []).append(i)
    tours: list = [None] * len(records)
    for n, idx in by_size.items():
        if model.config.decoder_input == "unshared_lut" and n > model.config.max_nodes:
            raise ConfigError(f"checkpoint supports at most {model.config.max_nodes} nodes, record has {n}")
        for lo in range(0, len(idx), 256):
            part = idx[lo : lo + 256]
            pts = np.stack([records[i].instance.points for i in part])
            if args.decode == "greedy":
                out = greedy_decode_batch(model, pts)
            else:
                out, _ = multi_start_decode_batch(model, pts)
            for i, t in zip(part, out):
                tours[i] = t
    from .tsp import Tour

    text = "".join(format_tour_suffix(Tour(t)) + "\n" for t in tours)
    atomic_write_text(args.out, text)
    return 0


def cmd_eval(args) -> int:
    records = read_dataset(args.test, require_tours=False)
    if not records or any(not r.labeled for r in records):
        raise ValueError(f"{args.test}: evaluation needs every record labeled with a reference tour")
    baselines = [b.strip() for b in args.baselines.split(",") if b.strip()]
    model = _load_model(args.ckpt) if args.ckpt else None
    rows = evaluation.evaluate(records, model, baselines)
    table = evaluation.format_table(rows)
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        atomic_write_text(out, evaluation.rows_to_csv(rows))
        atomic_write_text(out.with_suffix(".txt"), table)
        if not args.no_figures:
            from .plotting import plot_gap_bars

            plot_gap_bars([f"{r.method}\n{r.decode}" for r in rows], [r.mean_gap_percent for r in rows],
                          _figure_path(out))
    return 0


def cmd_ablate(args) -> int:
    records = read_dataset(args.data)
    if args.test:
        test = read_dataset(args.test)
        train_records = records
    else:
        n_test = max(1, int(round(args.test_frac * len(records))))
        perm = np.random.default_rng([args.seed, 2]).permutation(len(records))
        test_idx = set(perm[:n_test].tolist())
        test = [r for i, r in enumerate(records) if i in test_idx]
        train_records = [r for i, r in enumerate(records) if i not in test_idx]
    axes = evaluation.parse_axes(args.grid)
    out = Path(args.out)
    ckpt_dir = Path(args.ckpt_dir) if args.ckpt_dir else out.parent / (out.stem + "_ckpt")
    rows = evaluation.run_ablation(
        train_records, test, _model_config(args), _train_config(args, args.val_frac), axes, ckpt_dir
    )
    atomic_write_text(out, evaluation.ablation_csv(rows))
    for r in rows:
        print(f"{r.axis:14s} {r.cell:45s} {r.status:8s} greedy {r.greedy_gap:7.3f}%  multi {r.multistart_gap:7.3f}%")
    if not args.no_figures:
        from .plotting import plot_gap_bars

        plot_gap_bars([f"{r.axis}:{r.cell}" for r in rows], [r.greedy_gap for r in rows], _figure_path(out),
                      ylabel="greedy gap (%)")
    failed = [r for r in rows if r.status != "ok"]
    return 1 if failed else 0


def cmd_pe_dump(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be positive, got {args.n}")
    try:
        table = posenc.pe_table(args.kind, args.n, args.d, scale=args.scale)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    sim = posenc.pe_similarity_matrix(table)
    out = Path(args.out)
    atomic_write_text(out, posenc.similarity_csv(sim))
    atomic_write_bytes(out.with_suffix(".pgm"), posenc.to_pgm(sim))
    if not args.no_figures:
        from .plotting import plot_similarity

        plot_similarity(sim, _figure_path(out), title=f"{args.kind} PE, n={args.n}, d={args.d}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--d", type=int, default=128, help="embedding dimension")
    g.add_argument("--layers", type=int, default=6, help="layers per encoder/decoder stack")
    g.add_argument("--heads", type=int, default=8)
    g.add_argument("--ffn-dim", type=int, default=None, help="feed-forward width (default 4d)")
    g.add_argument("--dropout", type=float, default=0.1)
    g.add_argument("--encoder-pe", choices=ENCODER_PE, default="spatial")
    g.add_argument("--decoder-pe", choices=DECODER_PE, default="circular")
    g.add_argument("--decoder-input", choices=DECODER_INPUT, default="memory")
    g.add_argument("--output-head", choices=OUTPUT_HEAD, default="dynamic_embedding")
    g.add_argument("--pe-scale", type=float, default=posenc.DEFAULT_SPATIAL_SCALE)
    g.add_argument("--logit-scale", type=float, default=None, help="output logit multiplier (default 1/sqrt(d))")
    g.add_argument("--max-nodes", type=int, default=128, help="rows of the unshared decoder lookup table")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--batch-size", type=int, default=80)
    g.add_argument("--epochs", type=int, default=1)
    g.add_argument("--warmup", type=int, default=400)
    g.add_argument("--smoothing", type=float, default=0.1)
    g.add_argument("--no-augment", action="store_true", help="disable random rotation/flip of label tours")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lr-factor", type=float, default=1.0)
    g.add_argument("--weight-decay", type=float, default=0.01)
    g.add_argument("--grad-clip", type=float, default=None)
    g.add_argument("--no-visited-mask", action="store_true", help="train without the visited mask (ablation)")
    g.add_argument("--debug-checks", action="store_true")
    g.add_argument("--val-frac", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="tspformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("gen", help="generate random unit-square instances")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", help="solve instances and write a labeled dataset")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=sorted(LABEL_METHODS), default="held_karp")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model on a labeled dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="metrics CSV (default <out>.metrics.csv)")
    p.add_argument("--resume", default=None, help="continue from this checkpoint")
    p.add_argument("--no-figures", action="store_true")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="decode tours with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--decode", choices=("greedy", "multistart"), default="greedy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="compare the model with baselines on a labeled test set")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--test", required=True)
    p.add_argument("--baselines", default="nn,2opt,held_karp")
    p.add_argument("--out", default=None, help="CSV report path (a .txt table and .png figure go alongside)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--test", default=None, help="labeled test set (default: split off --test-frac of --data)")
    p.add_argument("--test-frac", type=float, default=0.1)
    p.add_argument("--grid", default="all", help="comma list of pe, decoder_input, output_head, or 'all'")
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt-dir", default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("pe-dump", help="write a positional-encoding similarity matrix")
    p.add_argument("--kind", choices=posenc.KINDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--scale", type=float, default=posenc.DEFAULT_SPATIAL_SCALE)
    p.add_argument("--out", required=True, help="CSV path (.pgm and .png written alongside)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_pe_dump)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tspformer {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"tspformer {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
