"""Synthetic trajectories from floor-field runs, for exercising the pipeline."""

from __future__ import annotations

import numpy as np

from .environment import hop_distribution, resolve_conflicts
from .lattice import GridPos, Lattice, build_static_field
from .trajectory import PathRecord


def corridor_records(length: int = 20, steps: int = 200, cell_size: float = 0.6,
                     inflow: float = 0.7, seed: int = 0, prefix: str = "p") -> tuple[list[PathRecord], tuple[float, float]]:
    """Single-file corridor run with the exit at the left end.

    Particles enter at the right end with probability ``inflow`` per step
    when the entrance cell is free. Each step lasts 1 s and particle
    positions are cell centres, ``cell_size`` meters apart. Returns the
    records of particles seen at least twice and the exit point in meters.
    """
    lattice = Lattice(length, 1, GridPos(0, 0), metric="euclidean")
    field = build_static_field(lattice)
    rng = np.random.default_rng(seed)
    entrance = length  # cell index of the rightmost cell
    where: dict[int, int] = {}  # particle id -> cell
    paths: dict[int, list[tuple[float, float, float]]] = {}
    next_id = 0

    def record(pid: int, t: int) -> None:
        col = where[pid] - 1
        paths[pid].append((float(t), (col + 0.5) * cell_size, 0.0))

    for t in range(steps + 1):
        if entrance not in where.values() and rng.random() < inflow:
            where[next_id] = entrance
            paths[next_id] = []
            next_id += 1
        for pid in where:
            record(pid, t)
        if t == steps:
            break
        by_cell = {c: pid for pid, c in where.items()}
        choices = {}
        for c in sorted(by_cell):
            dist = hop_distribution(c, None, field, lattice)
            cells = list(dist)
            choices[c] = cells[int(rng.choice(len(cells), p=list(dist.values())))]
        realised = resolve_conflicts(choices, rng)
        for c, dst in realised.items():
            pid = by_cell[c]
            if dst == lattice.exit_index:
                where[pid] = dst
                record(pid, t + 1)
                del where[pid]
            else:
                where[pid] = dst
    records = [
        PathRecord(f"{prefix}{pid}", np.array(samples))
        for pid, samples in sorted(paths.items())
        if len(samples) >= 2
    ]
    return records, (0.0, 0.0)
