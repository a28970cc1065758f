"""Exact and heuristic TSP solvers used for labels and baselines."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .tsp import DatasetRecord, Instance, Tour, canonicalize_tour, tour_length

HELD_KARP_MAX_N = 16
BRUTE_FORCE_MAX_N = 10
IMPROVEMENT_EPS = 1e-12

METHODS = ("held_karp", "brute_force", "nearest_neighbor", "two_opt")


class SizeLimitError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveResult:
    tour: Tour
    length: float
    method: str


def _result(instance: Instance, order: Sequence[int], method: str) -> SolveResult:
    tour = Tour(order)
    return SolveResult(tour, tour_length(instance, tour), method)


def held_karp(instance: Instance) -> SolveResult:
    """Bitmask DP anchored at node 0.

    ``cost[mask, j]`` is the shortest path that leaves node 0, visits exactly the
    nodes in ``mask`` (bit ``j`` stands for node ``j + 1``) and ends at ``j + 1``.
    Predecessor ties resolve to the lowest node index; the returned tour is
    canonicalized.
    """
    n = instance.n
    if n > HELD_KARP_MAX_N:
        raise SizeLimitError(f"held_karp supports n <= {HELD_KARP_MAX_N}, got {n}")
    dist = instance.distance_matrix()
    m = n - 1
    size = 1 << m
    cost = np.full((size, m), np.inf)
    parent = np.full((size, m), -1, dtype=np.int64)
    for j in range(m):
        cost[1 << j, j] = dist[0, j + 1]

    masks = np.arange(size, dtype=np.int64)
    popcount = np.zeros(size, dtype=np.int64)
    for j in range(m):
        popcount += (masks >> j) & 1
    inner = dist[1:, 1:]
    for layer in range(2, m + 1):
        layer_masks = masks[popcount == layer]
        for j in range(m):
            sel = layer_masks[(layer_masks >> j) & 1 == 1]
            prev = sel ^ (1 << j)
            cand = cost[prev] + inner[:, j][None, :]
            best = np.argmin(cand, axis=1)
            cost[sel, j] = cand[np.arange(len(sel)), best]
            parent[sel, j] = best

    full = size - 1
    closing = cost[full] + dist[1:, 0]
    last = int(np.argmin(closing))
    order = []
    mask = full
    while last >= 0:
        order.append(last + 1)
        prev = int(parent[mask, last])
        mask ^= 1 << last
        last = prev
    order.append(0)
    order.reverse()
    return _result(instance, canonicalize_tour(order), "held_karp")


@lru_cache(maxsize=None)
def distinct_cycles(n: int) -> np.ndarray:
    """All (n-1)!/2 Hamiltonian cycles on ``n`` nodes in canonical form, as rows
    of node indices in lexicographic order (node 0 first, second < last)."""
    perms = np.array(list(itertools.permutations(range(1, n))), dtype=np.int64)
    keep = perms[:, 0] < perms[:, -1]
    zeros = np.zeros((int(keep.sum()), 1), dtype=np.int64)
    cycles = np.concatenate([zeros, perms[keep]], axis=1)
    cycles.flags.writeable = False
    return cycles


def brute_force(instance: Instance) -> SolveResult:
    n = instance.n
    if n > BRUTE_FORCE_MAX_N:
        raise SizeLimitError(f"brute_force supports n <= {BRUTE_FORCE_MAX_N}, got {n}")
    dist = instance.distance_matrix()
    cycles = distinct_cycles(n)
    lengths = dist[cycles, np.roll(cycles, -1, axis=1)].sum(axis=1)
    best = int(np.argmin(lengths))
    return _result(instance, cycles[best], "brute_force")


def nearest_neighbor(instance: Instance, start: int = 0) -> SolveResult:
    n = instance.n
    if not 0 <= start < n:
        raise ValueError(f"start must be in [0, {n}), got {start}")
    dist = instance.distance_matrix()
    visited = np.zeros(n, dtype=bool)
    order = [start]
    visited[start] = True
    current = start
    for _ in range(n - 1):
        row = np.where(visited, np.inf, dist[current])
        current = int(np.argmin(row))
        visited[current] = True
        order.append(current)
    return _result(instance, order, "nearest_neighbor")


def two_opt(instance: Instance, tour: Tour | Sequence[int]) -> SolveResult:
    """First-improvement 2-opt.

    Pairs (i, j) are scanned in lexicographic order; the first exchange that
    shortens the tour by more than ``IMPROVEMENT_EPS`` is applied and the scan
    restarts. Stops after a full pass with no such exchange.
    """
    order = list(Tour(tour).validate(instance.n).order)
    n = len(order)
    d = instance.distance_matrix().tolist()
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a, b = order[i], order[i + 1]
            for j in range(i + 2, n if i > 0 else n - 1):
                c, e = order[j], order[(j + 1) % n]
                delta = d[a][c] + d[b][e] - d[a][b] - d[c][e]
                if delta < -IMPROVEMENT_EPS:
                    order[i + 1 : j + 1] = order[i + 1 : j + 1][::-1]
                    improved = True
                    break
            if improved:
                break
    return _result(instance, order, "two_opt")


def nn_two_opt(instance: Instance, start: int = 0) -> SolveResult:
    return two_opt(instance, nearest_neighbor(instance, start).tour)


def solve(instance: Instance, method: str) -> SolveResult:
    if method == "held_karp":
        return held_karp(instance)
    if method == "brute_force":
        return brute_force(instance)
    if method in ("nearest_neighbor", "nn"):
        return nearest_neighbor(instance)
    if method in ("two_opt", "nn+2opt", "2opt"):
        return nn_two_opt(instance)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def label_dataset(instances: Sequence[Instance], method: str) -> list[DatasetRecord]:
    records = []
    for i, inst in enumerate(instances):
        try:
            res = solve(inst, method)
        except Exception as exc:
            raise OracleError(f"instance {i} (n={inst.n}): {exc}") from exc
        tour = canonicalize_tour(res.tour)
        records.append(DatasetRecord(inst, tour, tour_length(inst, tour)))
    return records
