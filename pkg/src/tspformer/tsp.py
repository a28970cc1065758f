"""Euclidean TSP instances, tours, metrics and the line-oriented dataset format.

Node indices are 0-based everywhere in memory; the text format is 1-based and
the conversion happens only in :func:`format_record` / :func:`parse_line`.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class TSPError(ValueError):
    """Base class for invalid TSP data."""


class InvalidSizeError(TSPError):
    pass


class InvalidTourError(TSPError):
    pass


class DatasetParseError(TSPError):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


@dataclass(frozen=True)
class Instance:
    """``n`` points in the unit square, stored as an (n, 2) float64 array."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidSizeError(f"points must have shape (n, 2), got {pts.shape}")
        if pts.shape[0] < 3:
            raise InvalidSizeError(f"an instance needs at least 3 nodes, got {pts.shape[0]}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def distance_matrix(self) -> np.ndarray:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())


@dataclass(frozen=True)
class Tour:
    order: tuple[int, ...]

    def __init__(self, order: Iterable[int]):
        object.__setattr__(self, "order", tuple(int(i) for i in order))

    def __len__(self):
        return len(self.order)

    def __iter__(self):
        return iter(self.order)

    def __getitem__(self, item):
        return self.order[item]

    def validate(self, n: int | None = None) -> "Tour":
        n = len(self.order) if n is None else n
        if len(self.order) != n or sorted(self.order) != list(range(n)):
            raise InvalidTourError(f"tour {list(self.order)} is not a permutation of 0..{n - 1}")
        return self


@dataclass(frozen=True)
class DatasetRecord:
    instance: Instance
    optimal_tour: Tour | None = None
    optimal_length: float | None = None

    def __post_init__(self):
        if self.optimal_tour is None:
            return
        self.optimal_tour.validate(self.instance.n)
        length = tour_length(self.instance, self.optimal_tour)
        if self.optimal_length is None:
            object.__setattr__(self, "optimal_length", length)
        elif abs(self.optimal_length - length) > 1e-9:
            raise InvalidTourError(
                f"recorded length {self.optimal_length} disagrees with tour length {length}"
            )

    @property
    def labeled(self) -> bool:
        return self.optimal_tour is not None


def gen_instance(n: int, seed: int) -> Instance:
    """Uniform random instance on [0, 1)^2.

    Coordinates come from ``numpy.random.default_rng(seed).random((n, 2))``
    (PCG64), read row-major as x0, y0, x1, y1, ...
    """
    if n < 3:
        raise InvalidSizeError(f"an instance needs at least 3 nodes, got {n}")
    rng = np.random.default_rng(seed)
    return Instance(rng.random((n, 2)))


def gen_instances(n: int, count: int, seed: int) -> list[Instance]:
    """Instance ``i`` uses seed ``seed + i``."""
    return [gen_instance(n, seed + i) for i in range(count)]


def tour_length(instance: Instance, tour: Tour | Sequence[int]) -> float:
    order = _as_order(tour, instance.n)
    pts = instance.points[order]
    diff = pts - np.roll(pts, -1, axis=0)
    return float(np.hypot(diff[:, 0], diff[:, 1]).sum())


def optimality_gap(length: float, optimal_length: float) -> float:
    """Percent excess of ``length`` over ``optimal_length``."""
    if not optimal_length > 0:
        raise ValueError(f"reference length must be positive, got {optimal_length}")
    return 100.0 * (length - optimal_length) / optimal_length


def canonicalize_tour(tour: Tour | Sequence[int]) -> Tour:
    order = _as_order(tour)
    n = len(order)
    k = order.index(0)
    rotated = order[k:] + order[:k]
    if rotated[1] > rotated[n - 1]:
        rotated = [rotated[0]] + rotated[:0:-1]
    return Tour(rotated)


def augment_tour(tour: Tour | Sequence[int], rotation: int, flip: bool) -> Tour:
    """Rotate the cycle to start ``rotation`` steps along, then optionally reverse
    direction while keeping the new first node in place."""
    order = _as_order(tour)
    n = len(order)
    if not 0 <= rotation < n:
        raise ValueError(f"rotation must be in [0, {n}), got {rotation}")
    out = order[rotation:] + order[:rotation]
    if flip:
        out = [out[0]] + out[:0:-1]
    return Tour(out)


def _as_order(tour, n: int | None = None) -> list[int]:
    t = tour if isinstance(tour, Tour) else Tour(tour)
    t.validate(n)
    return list(t.order)


# ---------------------------------------------------------------------------
# dataset text format


def format_record(record: DatasetRecord) -> str:
    coords = " ".join(repr(float(c)) for c in record.instance.points.reshape(-1))
    if record.optimal_tour is None:
        return coords
    idx = [i + 1 for i in record.optimal_tour.order]
    idx.append(idx[0])
    return f"{coords} output {' '.join(map(str, idx))}"


def format_tour_suffix(tour: Tour) -> str:
    idx = [i + 1 for i in tour.order]
    idx.append(idx[0])
    return "output " + " ".join(map(str, idx))


def parse_line(line: str, line_no: int | None = None, strict: bool = False) -> DatasetRecord:
    """Parse one dataset line. With ``strict``, coordinates outside [0, 1] are rejected."""
    tokens = line.split()
    if "output" in tokens:
        cut = tokens.index("output")
        coord_tok, tour_tok = tokens[:cut], tokens[cut + 1 :]
    else:
        coord_tok, tour_tok = tokens, None
    if len(coord_tok) % 2 or len(coord_tok) < 6:
        raise DatasetParseError(f"expected an even number (>= 6) of coordinates, got {len(coord_tok)}", line_no)
    try:
        coords = np.array([float(c) for c in coord_tok], dtype=np.float64)
    except ValueError as exc:
        raise DatasetParseError(f"bad coordinate: {exc}", line_no) from None
    if strict and (coords.min() < 0.0 or coords.max() > 1.0):
        raise DatasetParseError("coordinate outside the unit square", line_no)
    instance = Instance(coords.reshape(-1, 2))
    if tour_tok is None:
        return DatasetRecord(instance)
    try:
        idx = [int(t) for t in tour_tok]
    except ValueError as exc:
        raise DatasetParseError(f"bad tour index: {exc}", line_no) from None
    n = instance.n
    if len(idx) != n + 1 or idx[0] != idx[-1]:
        raise DatasetParseError(
            f"tour must list {n} nodes followed by the start node again, got {len(idx)} indices", line_no
        )
    tour = Tour(i - 1 for i in idx[:-1])
    try:
        tour.validate(n)
    except InvalidTourError as exc:
        raise InvalidTourError(f"line {line_no}: {exc}") from None
    return DatasetRecord(instance, tour)


def write_dataset(path: str | os.PathLike, records: Iterable[DatasetRecord]) -> None:
    text = "".join(format_record(r) + "\n" for r in records)
    atomic_write_text(path, text)


def read_dataset(
    path: str | os.PathLike, require_tours: bool = True, strict: bool = False
) -> list[DatasetRecord]:
    records = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = parse_line(line, line_no, strict=strict)
            if require_tours and not rec.labeled:
                raise DatasetParseError("record has no tour (expected an 'output' section)", line_no)
            records.append(rec)
    return records


def read_instances(path: str | os.PathLike) -> list[Instance]:
    return [r.instance for r in read_dataset(path, require_tours=False)]


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("ascii"))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise

