"""Evaluation tables and the ablation grid."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import oracle
from .inference import greedy_decode_batch, multi_start_decode_batch
from .model import ModelConfig, TSPTransformer
from .training import TrainConfig, save_checkpoint, train
from .tsp import DatasetRecord, optimality_gap, tour_length

log = logging.getLogger(__name__)

EVAL_HEADER = ("method", "decode", "mean_length", "mean_gap_percent", "wall_time_s")
BASELINES = {
    "nn": ("nearest_neighbor", "heuristic"),
    "2opt": ("nn+2opt", "heuristic"),
    "held_karp": ("held_karp", "oracle"),
}

ABLATION_AXES = {
    "pe": [
        {"encoder_pe": enc, "decoder_pe": dec}
        for enc in ("none", "spatial")
        for dec in ("sinusoidal", "circular")
    ],
    "decoder_input": [{"decoder_input": v} for v in ("memory", "shared_lut", "unshared_lut")],
    "output_head": [{"output_head": v} for v in ("dynamic_embedding", "encoder_lut")],
}
ABLATION_HEADER = (
    "axis",
    "cell",
    "encoder_pe",
    "decoder_pe",
    "decoder_input",
    "output_head",
    "seed",
    "status",
    "final_train_loss",
    "greedy_gap_percent",
    "multistart_gap_percent",
    "checkpoint",
)


@dataclass(frozen=True)
class EvalRow:
    method: str
    decode: str
    mean_length: float
    mean_gap_percent: float
    wall_time_s: float
    gap_of_means_percent: float = float("nan")


def _summarize(method, decode, records, lengths, elapsed) -> EvalRow:
    lengths = np.asarray(lengths, dtype=np.float64)
    gaps = [optimality_gap(l, r.optimal_length) for l, r in zip(lengths, records)]
    ref = float(np.mean([r.optimal_length for r in records]))
    mean_len = float(np.mean(lengths))
    return EvalRow(method, decode, mean_len, float(np.mean(gaps)), elapsed, optimality_gap(mean_len, ref))


def model_lengths(model: TSPTransformer, records: Sequence[DatasetRecord], decode: str, chunk: int = 256):
    """Tour lengths of the model on ``records`` with greedy (start 0) or
    multi-start decoding."""
    lengths = []
    for i in range(0, len(records), chunk):
        part = records[i : i + chunk]
        pts = np.stack([r.instance.points for r in part])
        if decode == "greedy":
            tours = greedy_decode_batch(model, pts)
        else:
            tours, _ = multi_start_decode_batch(model, pts)
        lengths.extend(tour_length(r.instance, t) for r, t in zip(part, tours))
    return lengths


def evaluate(
    records: Sequence[DatasetRecord],
    model: TSPTransformer | None = None,
    baselines: Sequence[str] = ("nn", "2opt", "held_karp"),
) -> list[EvalRow]:
    """Reference row, one row per baseline, then model greedy and multi-start."""
    if not records or any(not r.labeled for r in records):
        raise ValueError("evaluation needs a non-empty labeled test set")
    rows = [_summarize("reference", "oracle", records, [r.optimal_length for r in records], 0.0)]
    for name in baselines:
        if name not in BASELINES:
            raise ValueError(f"unknown baseline {name!r}; expected one of {sorted(BASELINES)}")
        method, decode = BASELINES[name]
        t0 = time.perf_counter()
        lengths = [oracle.solve(r.instance, method).length for r in records]
        rows.append(_summarize(method, decode, records, lengths, time.perf_counter() - t0))
    if model is not None:
        for decode in ("greedy", "multi-start"):
            t0 = time.perf_counter()
            lengths = model_lengths(model, records, decode)
            rows.append(_summarize("model", decode, records, lengths, time.perf_counter() - t0))
    return rows


def rows_to_csv(rows: Sequence[EvalRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(EVAL_HEADER)
    for r in rows:
        writer.writerow(
            [r.method, r.decode, f"{r.mean_length:.6f}", f"{r.mean_gap_percent:.4f}", f"{r.wall_time_s:.3f}"]
        )
    return buf.getvalue()


def format_table(rows: Sequence[EvalRow]) -> str:
    """Aligned text table; the last column is the gap of the mean lengths."""
    header = ("method", "decode", "length", "gap %", "time s", "gap of means %")
    body = [
        (
            r.method,
            r.decode,
            f"{r.mean_length:.4f}",
            f"{r.mean_gap_percent:.2f}",
            f"{r.wall_time_s:.2f}",
            f"{r.gap_of_means_percent:.2f}",
        )
        for r in rows
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = []
    for k, row in enumerate([header, *body]):
        cells = [c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablations


@dataclass
class AblationRow:
    axis: str
    cell: str
    config: ModelConfig
    seed: int
    status: str
    final_train_loss: float = float("nan")
    greedy_gap: float = float("nan")
    multistart_gap: float = float("nan")
    checkpoint: str = ""

    def as_csv_row(self) -> list:
        c = self.config
        return [
            self.axis,
            self.cell,
            c.encoder_pe,
            c.decoder_pe,
            c.decoder_input,
            c.output_head,
            self.seed,
            self.status,
            f"{self.final_train_loss:.6f}",
            f"{self.greedy_gap:.4f}",
            f"{self.multistart_gap:.4f}",
            self.checkpoint,
        ]


def parse_axes(grid: str) -> list[str]:
    names = list(ABLATION_AXES) if grid in ("all", "") else [s.strip() for s in grid.split(",") if s.strip()]
    unknown = [s for s in names if s not in ABLATION_AXES]
    if unknown:
        raise ValueError(f"unknown ablation axis {unknown}; expected some of {sorted(ABLATION_AXES)} or 'all'")
    return names


def _cell_name(changes: dict) -> str:
    return "+".join(f"{k}={v}" for k, v in changes.items())


def run_ablation(
    train_records: Sequence[DatasetRecord],
    test_records: Sequence[DatasetRecord],
    base_config: ModelConfig,
    train_config: TrainConfig,
    axes: Sequence[str],
    out_dir: str | Path | None = None,
) -> list[AblationRow]:
    """Train and evaluate every cell of the requested axes with one shared seed
    and data split. Cells whose configuration was already trained on an earlier
    axis reuse that result. A failing cell is reported and the grid continues."""
    out_dir = Path(out_dir) if out_dir is not None else None
    done: dict[ModelConfig, AblationRow] = {}
    rows = []
    for axis in axes:
        for changes in ABLATION_AXES[axis]:
            name = _cell_name(changes)
            try:
                cfg = base_config.replace(**changes)
            except Exception as exc:
                rows.append(AblationRow(axis, name, base_config, train_config.seed, f"failed: {exc}"))
                continue
            if cfg in done:
                prev = done[cfg]
                rows.append(
                    AblationRow(
                        axis, name, cfg, prev.seed, prev.status, prev.final_train_loss,
                        prev.greedy_gap, prev.multistart_gap, prev.checkpoint,
                    )
                )
                continue
            row = AblationRow(axis, name, cfg, train_config.seed, "ok")
            try:
                log.info("ablation cell %s / %s", axis, name)
                result = train(train_records, cfg, train_config)
                row.final_train_loss = result.metrics[-1][1] if result.metrics else float("nan")
                ev = evaluate(test_records, result.model, baselines=())
                row.greedy_gap = ev[1].mean_gap_percent
                row.multistart_gap = ev[2].mean_gap_percent
                if not (math.isfinite(row.greedy_gap) and math.isfinite(row.multistart_gap)):
                    row.status = "failed: non-finite gap"
                if out_dir is not None:
                    path = out_dir / f"cell{len(done):02d}.ckpt"
                    save_checkpoint(path, result.checkpoint)
                    row.checkpoint = str(path)
            except Exception as exc:
                log.exception("ablation cell %s failed", name)
                row.status = f"failed: {exc}"
            done[cfg] = row
            rows.append(row)
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ABLATION_HEADER)
    for r in rows:
        writer.writerow(r.as_csv_row())
    return buf.getvalue()
