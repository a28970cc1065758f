"""Supervised teacher-forced training and the binary checkpoint format."""

from __future__ import annotations

import contextlib
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .inference import greedy_decode_batch
from .model import ModelConfig, TSPTransformer
from .numerics import functional as F
from .numerics.optim import AdamW
from .numerics.tensor import NumericError, ShapeError, Tensor, precision
from .tsp import DatasetRecord, Tour, atomic_write_bytes, augment_tour, optimality_gap, tour_length

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"TSPXCKPT"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "epoch,train_loss,val_gap_percent"


class TrainingError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 80
    epochs: int = 1
    warmup: int = 400
    smoothing: float = 0.1
    augment: bool = True
    seed: int = 0
    lr_factor: float = 1.0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.98)
    val_frac: float = 0.05
    grad_clip: float | None = None
    use_visited_mask: bool = True
    debug_checks: bool = False
    reference_mode: bool = True

    def __post_init__(self):
        if self.warmup < 1:
            raise F.ConfigError(f"warmup must be >= 1, got {self.warmup}")
        if not 0.0 <= self.smoothing < 1.0:
            raise F.ConfigError(f"label smoothing must be in [0, 1), got {self.smoothing}")
        if self.batch_size < 1 or self.epochs < 0:
            raise F.ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.val_frac < 1.0:
            raise F.ConfigError(f"val_frac must be in [0, 1), got {self.val_frac}")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    seed: int = 0
    version: int = CHECKPOINT_VERSION

    def to_model(self, config: ModelConfig | None = None) -> TSPTransformer:
        """Rebuild the network, optionally against an expected config; any
        array whose name or shape disagrees raises :class:`ShapeError`."""
        model = TSPTransformer(config or self.model_config)
        load_state(model, self.params)
        return model.eval()


@dataclass
class TrainResult:
    model: TSPTransformer
    checkpoint: Checkpoint
    metrics: list[tuple[int, float, float]]

    def metrics_csv(self) -> str:
        return format_metrics(self.metrics)


# ---------------------------------------------------------------------------
# targets, loss, schedule


def make_targets(tour: Tour | Sequence[int]) -> np.ndarray:
    """One-hot (N-1, N): row i is hot at ``tour[i+1]``, the node that follows
    the prefix ``tour[:i+1]``."""
    order = Tour(tour).validate().order
    n = len(order)
    y = np.zeros((n - 1, n))
    y[np.arange(n - 1), order[1:]] = 1.0
    return y


def instance_loss(probs, y_gt: np.ndarray, smoothing: float = 0.0) -> float:
    """Cross entropy of row distributions ``probs`` (N-1, N) against one-hot
    ``y_gt``, summed over rows. Smoothing mass goes only to entries with
    nonzero predicted probability other than the target."""
    p = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    y_gt = np.asarray(y_gt)
    target = y_gt.argmax(axis=-1)
    if (np.take_along_axis(p, target[..., None], axis=-1) <= 0).any():
        raise NumericError("target node has probability 0 (mask and target disagree)")
    feasible = p > 0
    q = F.smoothed_targets(target, p.shape[-1], smoothing, feasible)
    with np.errstate(divide="ignore"):
        logp = np.where(feasible, np.log(np.where(feasible, p, 1.0)), 0.0)
    return float(-(q * logp).sum())


def lr_schedule(step: int, d: int, warmup: int, factor: float = 1.0) -> float:
    """``factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5)``."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    return factor * d**-0.5 * min(step**-0.5, step * warmup**-1.5)


def batch_loss(model: TSPTransformer, points, tours, smoothing: float, rng=None, use_visited_mask=True, check=False):
    """Mean per-instance loss of a batch, as a differentiable scalar."""
    tours = np.asarray(tours, dtype=np.int64)
    log_probs, visited = model.teacher_forced_log_probs(points, tours, rng, use_visited_mask)
    targets = tours[:, 1:]
    if check:
        hit = np.take_along_axis(visited, targets[..., None], axis=-1)
        if np.isneginf(hit).any():
            raise TrainingError("visited mask covers a target node")
    mask = visited if use_visited_mask else None
    total = F.cross_entropy_smoothed(log_probs, targets, smoothing, mask)
    return total * (1.0 / tours.shape[0])


# ---------------------------------------------------------------------------
# training loop


def split_validation(records: Sequence[DatasetRecord], val_frac: float, seed: int):
    if val_frac <= 0 or len(records) < 2:
        return list(records), []
    n_val = max(1, int(round(val_frac * len(records))))
    perm = np.random.default_rng([seed, 1]).permutation(len(records))
    val_idx = set(perm[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


def greedy_gap(model: TSPTransformer, records: Sequence[DatasetRecord], chunk: int = 1024) -> float:
    """Mean per-instance greedy (start 0) optimality gap in percent."""
    if not records:
        return float("nan")
    gaps = []
    for i in range(0, len(records), chunk):
        part = records[i : i + chunk]
        pts = np.stack([r.instance.points for r in part])
        tours = greedy_decode_batch(model, pts)
        for r, t in zip(part, tours):
            gaps.append(optimality_gap(tour_length(r.instance, t), r.optimal_length))
    return float(np.mean(gaps))


def _thread_limit(reference_mode: bool):
    if not reference_mode:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(1)


def train(
    records: Sequence[DatasetRecord],
    model_config: ModelConfig,
    train_config: TrainConfig,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Teacher-forced supervised training with AdamW and warmup schedule.

    Every epoch reshuffles the training split, optionally re-expresses each
    ground-truth tour with a random rotation and direction, and logs the mean
    training loss plus the greedy gap on the held-out split.
    """
    if not records:
        raise TrainingError("dataset is empty")
    sizes = {r.instance.n for r in records}
    if len(sizes) != 1:
        raise TrainingError(f"all records must share one instance size, got sizes {sorted(sizes)}")
    if any(not r.labeled for r in records):
        raise TrainingError("training needs labeled records")
    tc = train_config
    train_set, val_set = split_validation(records, tc.val_frac, tc.seed)

    with _thread_limit(tc.reference_mode), precision(np.float32):
        model = TSPTransformer(model_config, seed=tc.seed)
        optimizer = AdamW(model.parameters(), betas=tc.betas, weight_decay=tc.weight_decay)
        start_epoch = 0
        if resume is not None:
            load_state(model, resume.params)
            load_moments(model, resume.moments)
            optimizer.t = resume.step
            start_epoch = resume.epoch

        points = np.stack([r.instance.points for r in train_set])
        tours = np.stack([np.asarray(r.optimal_tour.order) for r in train_set])
        n = points.shape[1]
        metrics = []
        for epoch in range(start_epoch + 1, start_epoch + tc.epochs + 1):
            rng = np.random.default_rng([tc.seed, epoch])
            model.train()
            order = rng.permutation(len(train_set))
            losses = []
            for lo in range(0, len(order), tc.batch_size):
                idx = order[lo : lo + tc.batch_size]
                batch_tours = tours[idx]
                if tc.augment:
                    rot = rng.integers(0, n, size=len(idx))
                    flip = rng.random(len(idx)) < 0.5
                    batch_tours = np.stack(
                        [augment_tour(t, int(r), bool(f)).order for t, r, f in zip(batch_tours, rot, flip)]
                    )
                try:
                    loss = batch_loss(
                        model, points[idx], batch_tours, tc.smoothing, rng, tc.use_visited_mask, tc.debug_checks
                    )
                except NumericError as exc:
                    raise TrainingError(f"non-finite loss at step {optimizer.t + 1}: {exc}") from exc
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(f"non-finite loss at step {optimizer.t + 1}")
                loss.backward()
                if tc.grad_clip:
                    _clip_gradients(model, tc.grad_clip)
                optimizer.step(lr_schedule(optimizer.t + 1, model_config.d, tc.warmup, tc.lr_factor))
                losses.append(value)
            model.eval()
            gap = greedy_gap(model, val_set)
            train_loss = float(np.mean(losses))
            metrics.append((epoch, train_loss, gap))
            log.info("epoch %d  step %d  loss %.4f  val gap %.3f%%", epoch, optimizer.t, train_loss, gap)

        model.eval()
        ckpt = make_checkpoint(model, step=optimizer.t, epoch=start_epoch + tc.epochs, seed=tc.seed)
    return TrainResult(model, ckpt, metrics)


def _clip_gradients(model: TSPTransformer, max_norm: float) -> None:
    params = model.parameters()
    norm = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= scale


def format_metrics(metrics) -> str:
    lines = [METRICS_HEADER]
    for epoch, loss, gap in metrics:
        lines.append(f"{epoch},{loss:.8f},{gap:.8f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints


def make_checkpoint(model: TSPTransformer, step: int = 0, epoch: int = 0, seed: int = 0) -> Checkpoint:
    params = {name: p.data.astype(np.float32).copy() for name, p in model.named_parameters()}
    moments = {}
    for name, p in model.named_parameters():
        moments[f"m/{name}"] = p.m.astype(np.float32).copy()
        moments[f"v/{name}"] = p.v.astype(np.float32).copy()
    return Checkpoint(model.config, params, moments, step, epoch, seed)


def load_state(model: TSPTransformer, params: dict[str, np.ndarray]) -> None:
    expected = dict(model.named_parameters())
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ShapeError(f"checkpoint arrays do not match the model: missing {missing}, unexpected {extra}")
    bad = [
        f"{name}: checkpoint {params[name].shape} vs model {p.shape}"
        for name, p in expected.items()
        if params[name].shape != p.shape
    ]
    if bad:
        raise ShapeError("checkpoint shape mismatch: " + "; ".join(bad))
    for name, p in expected.items():
        p.data = params[name].astype(p.data.dtype).copy()


def load_moments(model: TSPTransformer, moments: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        if f"m/{name}" in moments:
            p.m = moments[f"m/{name}"].astype(p.data.dtype).copy()
            p.v = moments[f"v/{name}"].astype(p.data.dtype).copy()


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    header = json.dumps(
        {"model_config": ckpt.model_config.to_dict(), "step": ckpt.step, "epoch": ckpt.epoch, "seed": ckpt.seed},
        sort_keys=True,
    ).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", ckpt.version, len(header)))
    buf.write(header)
    arrays = [(f"param/{k}", v) for k, v in ckpt.params.items()]
    arrays += [(f"adam/{k}", v) for k, v in ckpt.moments.items()]
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def parse_checkpoint(data: bytes) -> Checkpoint:
    view = memoryview(data)
    pos = 0

    def take(count: int) -> memoryview:
        nonlocal pos
        if pos + count > len(view):
            raise CheckpointFormatError("checkpoint file is truncated")
        out = view[pos : pos + count]
        pos += count
        return out

    if bytes(take(len(CHECKPOINT_MAGIC))) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    version, header_len = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})")
    try:
        header = json.loads(bytes(take(header_len)).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from None
    (count,) = struct.unpack("<I", take(4))
    params, moments = {}, {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(bytes(take(4 * size)), dtype="<f4").reshape(dims).astype(np.float32)
        kind, _, key = name.partition("/")
        (params if kind == "param" else moments)[key] = arr
    if pos != len(view):
        raise CheckpointFormatError("trailing bytes after checkpoint arrays")
    return Checkpoint(
        ModelConfig.from_dict(header["model_config"]),
        params,
        moments,
        step=int(header["step"]),
        epoch=int(header["epoch"]),
        seed=int(header["seed"]),
        version=version,
    )


def load_checkpoint(path, config: ModelConfig | None = None) -> Checkpoint:
    """Read a checkpoint; with ``config``, also verify every array against a
    model built from it."""
    with open(path, "rb") as fh:
        ckpt = parse_checkpoint(fh.read())
    if config is not None:
        ckpt.to_model(config)
        ckpt.model_config = config
    return ckpt

