"""Sinusoidal, circular and 2-D spatial positional encodings.

All tables are computed in float64; callers cast to the model dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics.functional import ConfigError

DEFAULT_SPATIAL_SCALE = 2.0 * np.pi
KINDS = ("sinusoidal", "circular", "spatial")


def _frequencies(d: int) -> np.ndarray:
    if d <= 0 or d % 2:
        raise ConfigError(f"positional encoding needs an even positive dim, got {d}")
    return 1.0 / 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)


def _interleave(angles: np.ndarray) -> np.ndarray:
    out = np.empty(angles.shape[:-1] + (2 * angles.shape[-1],))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def sinusoidal_pe(pos, d: int) -> np.ndarray:
    """Slot 2i holds sin(pos / 10000^(2i/d)), slot 2i+1 the matching cosine.

    ``pos`` may be a scalar or an array of positions (real-valued allowed).
    """
    pos = np.asarray(pos, dtype=np.float64)
    return _interleave(pos[..., None] * _frequencies(d))


def circular_pe(pos, n: int, d: int) -> np.ndarray:
    """Sinusoidal encoding with an extra ring phase 2*pi*pos/n added to every
    angle, so positions on a closed tour of length ``n`` wrap around."""
    pos = np.asarray(pos, dtype=np.float64)
    if n <= 0:
        raise ConfigError(f"ring length must be positive, got {n}")
    angles = pos[..., None] * _frequencies(d) + (2.0 * np.pi / n) * pos[..., None]
    return _interleave(angles)


def spatial_pe(point, d: int, scale: float = DEFAULT_SPATIAL_SCALE) -> np.ndarray:
    """First d/2 slots encode scale*x, last d/2 encode scale*y.

    ``point`` is (2,) or (..., 2).
    """
    if d % 4:
        raise ConfigError(f"spatial positional encoding needs d divisible by 4, got {d}")
    point = np.asarray(point, dtype=np.float64)
    half = d // 2
    return np.concatenate(
        [sinusoidal_pe(scale * point[..., 0], half), sinusoidal_pe(scale * point[..., 1], half)],
        axis=-1,
    )


@dataclass(frozen=True)
class PETable:
    values: np.ndarray
    kind: str
    n: int
    d: int


def pe_table(kind: str, n: int, d: int, scale: float = DEFAULT_SPATIAL_SCALE, points=None) -> PETable:
    """Rows 0..n-1 of the chosen encoding.

    For ``spatial`` the rows encode ``points`` (n, 2); when no points are given
    they are placed evenly on the unit circle around (0.5, 0.5) in order, which
    mimics nodes listed along a tour.
    """
    pos = np.arange(n)
    if kind == "sinusoidal":
        values = sinusoidal_pe(pos, d)
    elif kind == "circular":
        values = circular_pe(pos, n, d)
    elif kind == "spatial":
        if points is None:
            theta = 2.0 * np.pi * pos / n
            points = 0.5 + 0.5 * np.stack([np.cos(theta), np.sin(theta)], axis=1)
        values = spatial_pe(points, d, scale)
    else:
        raise ConfigError(f"unknown positional encoding {kind!r}; expected one of {KINDS}")
    return PETable(values, kind, n, d)


def pe_similarity_matrix(table: PETable | np.ndarray) -> np.ndarray:
    """Pairwise inner products of table rows."""
    values = table.values if isinstance(table, PETable) else np.asarray(table)
    return values @ values.T


def similarity_csv(matrix: np.ndarray) -> str:
    """Row-major CSV with 9 significant digits, no header."""
    return "".join(",".join(f"{v:.9g}" for v in row) + "\n" for row in np.asarray(matrix))


def to_pgm(matrix: np.ndarray) -> bytes:
    """Binary 8-bit grayscale PGM; min maps to 0 and max to 255."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    rows, cols = pixels.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes()
