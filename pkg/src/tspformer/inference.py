"""Autoregressive greedy decoding and multi-start decoding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import EncoderMemory, TSPTransformer, build_visited_mask
from .numerics import functional as F
from .numerics.tensor import Tensor, no_grad
from .tsp import Instance, Tour, tour_length


@dataclass
class DecodeState:
    """Partial tours for a batch of decodes sharing one encoder memory."""

    memory: EncoderMemory
    prefix: np.ndarray
    visited: np.ndarray = field(init=False)

    def __post_init__(self):
        self.prefix = np.asarray(self.prefix, dtype=np.int64)
        self.visited = build_visited_mask(self.prefix, self.memory.n)

    @property
    def V(self) -> int:
        return self.prefix.shape[-1]

    def extend(self, nodes: np.ndarray) -> None:
        nodes = np.asarray(nodes, dtype=np.int64)
        last = self.visited[:, -1:, :].copy()
        last[np.arange(len(nodes)), 0, nodes] = -np.inf
        self.prefix = np.concatenate([self.prefix, nodes[:, None]], axis=1)
        self.visited = np.concatenate([self.visited, last], axis=1)


def _tile_memory(memory: EncoderMemory, repeats: int) -> EncoderMemory:
    return EncoderMemory(
        Tensor(np.repeat(memory.z.data, repeats, axis=0)),
        Tensor(np.repeat(memory.embedding.data, repeats, axis=0)),
        np.repeat(memory.points, repeats, axis=0),
    )


def next_node_probs(model: TSPTransformer, state: DecodeState) -> np.ndarray:
    """Distribution over the next node for every decode in ``state`` (B, N)."""
    out = model.decode(state.memory, state.prefix)
    last = Tensor(out.data[:, -1:, :])
    probs = model.output_head(last, state.memory, state.visited[:, -1:, :].astype(model.dtype))
    return probs.data[:, 0, :]


def run_greedy(model: TSPTransformer, state: DecodeState) -> np.ndarray:
    """Extend every partial tour in ``state`` to a full tour by argmax decoding
    (lowest index on ties). Returns (B, N) tours."""
    n = state.memory.n
    while state.V < n:
        probs = next_node_probs(model, state)
        if not np.all(np.isfinite(probs)):
            raise F.NumericError(f"non-finite next-node probabilities at step {state.V}")
        state.extend(np.argmax(probs, axis=-1))
    return state.prefix


def greedy_decode_batch(model: TSPTransformer, points: np.ndarray, starts=None) -> np.ndarray:
    """Greedy decode B instances of equal size at once; ``starts`` defaults to 0."""
    points = np.asarray(points)
    batch, n = points.shape[:2]
    starts = np.zeros(batch, dtype=np.int64) if starts is None else np.asarray(starts, dtype=np.int64)
    if starts.shape != (batch,) or starts.min() < 0 or starts.max() >= n:
        raise ValueError(f"starts must be {batch} indices in [0, {n})")
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            memory = model.encode(points)
            return run_greedy(model, DecodeState(memory, starts[:, None]))
    finally:
        model.train(was_training)


def greedy_decode(model: TSPTransformer, instance: Instance, start: int = 0) -> Tour:
    if not 0 <= start < instance.n:
        raise ValueError(f"start must be in [0, {instance.n}), got {start}")
    tours = greedy_decode_batch(model, instance.points[None], np.array([start]))
    return Tour(tours[0])


def multi_start_decode_batch(model: TSPTransformer, points: np.ndarray, batched: bool = True):
    """Decode every instance from every start node.

    Returns ``(best_tours (B, N), lengths (B, N))`` where ``lengths[b, s]`` is
    the tour length from start ``s``. The best tour is the shortest, lowest
    start on ties. With ``batched=False`` the starts run one at a time; the
    result is the same.
    """
    points = np.asarray(points)
    batch, n = points.shape[:2]
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            memory = model.encode(points)
            if batched:
                tiled = _tile_memory(memory, n)
                starts = np.tile(np.arange(n), batch)
                tours = run_greedy(model, DecodeState(tiled, starts[:, None])).reshape(batch, n, n)
            else:
                tours = np.empty((batch, n, n), dtype=np.int64)
                for s in range(n):
                    state = DecodeState(memory, np.full((batch, 1), s))
                    tours[:, s] = run_greedy(model, state)
    finally:
        model.train(was_training)
    lengths = batch_tour_lengths(points, tours)
    best = np.argmin(lengths, axis=1)
    return tours[np.arange(batch), best], lengths


def multi_start_decode(model: TSPTransformer, instance: Instance) -> tuple[Tour, list[float]]:
    best, lengths = multi_start_decode_batch(model, instance.points[None])
    return Tour(best[0]), lengths[0].tolist()


def batch_tour_lengths(points: np.ndarray, tours: np.ndarray) -> np.ndarray:
    """Lengths of tours (B, ..., N) over points (B, N, 2), computed with
    :func:`tour_length` so that results compare exactly."""
    points = np.asarray(points, dtype=np.float64)
    tours = np.asarray(tours, dtype=np.int64)
    out = np.empty(tours.shape[:-1])
    for b in range(points.shape[0]):
        inst = Instance(points[b])
        for idx in np.ndindex(tours.shape[1:-1]):
            out[(b,) + idx] = tour_length(inst, tours[(b,) + idx])
    return out
