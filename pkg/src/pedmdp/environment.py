"""Floor-field particle dynamics.

Particles hop to a cell within distance 1 with probability proportional to
``exp(-S)``. All particles choose simultaneously; when several pick the same
cell one of them, chosen uniformly, gets it and the rest stay. A move into a
cell whose occupant leaves in the same step succeeds. Particles that land on
the exit leave the lattice.

For planning, the crowd is summarised by ``crowd_transition``: every crowd
configuration reachable by one simultaneous step gets weight
``exp(-U)``, where ``U`` is the summed distance of the particles to the exit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .lattice import Lattice, StaticField

CrowdState = tuple[int, ...]  # sorted cell indices


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class OccupancyGrid:
    """Occupied cell indices of a lattice."""

    cells: frozenset[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", frozenset(int(c) for c in self.cells))

    def tau(self, cell: int) -> int:
        return int(cell in self.cells)

    def __len__(self) -> int:
        return len(self.cells)

    def as_crowd(self) -> CrowdState:
        return tuple(sorted(self.cells))

    def to_array(self, lattice: Lattice) -> np.ndarray:
        arr = np.zeros(lattice.n_cells, dtype=int)
        for c in self.cells:
            arr[c - 1] = 1
        return arr


@dataclass(frozen=True)
class TransitionDistribution:
    entries: tuple[tuple[CrowdState, float], ...]

    def as_dict(self) -> dict[CrowdState, float]:
        return dict(self.entries)

    def total(self) -> float:
        return math.fsum(p for _, p in self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def validate_crowd(cells: Iterable[int], lattice: Lattice) -> CrowdState:
    cells = list(cells)
    if len(set(cells)) != len(cells):
        raise InvalidStateError(f"particles overlap: {cells}")
    free = lattice.free_set
    for c in cells:
        if c not in free:
            raise InvalidStateError(f"particle cell {c} is blocked or out of bounds")
    return tuple(sorted(cells))


def hop_distribution(x: int, tau: OccupancyGrid | None, field: StaticField,
                     lattice: Lattice) -> dict[int, float]:
    """Target-cell probabilities of the particle at ``x``.

    Occupancy does not enter the choice itself; occupied targets are dealt
    with by ``resolve_conflicts``.
    """
    if tau is not None and x not in tau.cells:
        raise InvalidStateError(f"cell {x} is not occupied")
    cand = lattice.neighbor_table[x]
    s = np.array([field.by_index[y] for y in cand])
    w = np.exp(-(s - s.min()))
    w /= w.sum()
    return dict(zip(cand, w.tolist()))


def resolve_conflicts(choices: Mapping[int, int], rng: np.random.Generator,
                      lattice: Lattice | None = None) -> dict[int, int]:
    """Realised cells of particles keyed by current cell.

    ``choices`` maps each particle's current cell to its target. Contested
    targets are won by one contender drawn uniformly; losers stay. A winner
    whose target is held by a particle that does not leave stays as well.
    """
    if lattice is not None:
        for src, dst in choices.items():
            if dst not in lattice.neighbor_table.get(src, ()):
                raise InvalidStateError(f"target {dst} is not a neighbour of {src}")
    contenders: dict[int, list[int]] = {}
    for src in sorted(choices):
        dst = choices[src]
        if dst != src:
            contenders.setdefault(dst, []).append(src)
    moving = {}
    for dst in sorted(contenders):
        group = contenders[dst]
        winner = group[int(rng.integers(len(group)))] if len(group) > 1 else group[0]
        moving[winner] = dst
    # cancel moves into cells whose occupant stays, until nothing changes
    changed = True
    while changed:
        changed = False
        for src, dst in list(moving.items()):
            if dst in choices and dst not in moving:
                del moving[src]
                changed = True
    return {src: moving.get(src, src) for src in choices}


def simulate_step(tau: OccupancyGrid, field: StaticField, lattice: Lattice,
                  rng: np.random.Generator) -> OccupancyGrid:
    choices = {}
    for x in sorted(tau.cells):
        dist = hop_distribution(x, tau, field, lattice)
        cells = list(dist)
        choices[x] = cells[int(rng.choice(len(cells), p=list(dist.values())))]
    realised = resolve_conflicts(choices, rng)
    return OccupancyGrid(frozenset(c for c in realised.values() if c != lattice.exit_index))


def simulate(tau: OccupancyGrid, field: StaticField, lattice: Lattice, steps: int,
             rng: np.random.Generator) -> list[OccupancyGrid]:
    trace = [tau]
    for _ in range(steps):
        tau = simulate_step(tau, field, lattice, rng)
        trace.append(tau)
    return trace


def write_trace(path: str | Path, trace: list[OccupancyGrid], lattice: Lattice,
                header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["t", "cell_index", "occupied"])
        for t, grid in enumerate(trace):
            for c in range(1, lattice.n_cells + 1):
                w.writerow([t, c, grid.tau(c)])


def reachable_crowds(x: int, z: CrowdState, lattice: Lattice) -> set[CrowdState]:
    """Crowd configurations one simultaneous step away from ``z``.

    Each particle stays or moves within distance 1 onto a free cell other
    than the agent's cell ``x``; final cells must be pairwise distinct, and a
    particle on the exit is removed.
    """
    table = lattice.neighbor_table
    exit_cell = lattice.exit_index
    options = [tuple(c for c in table[p] if c != x) for p in z]
    out: set[CrowdState] = set()
    taken: set[int] = set()
    chosen: list[int] = []

    def assign(k: int) -> None:
        if k == len(options):
            out.add(tuple(sorted(c for c in chosen if c != exit_cell)))
            return
        for c in options[k]:
            if c in taken:
                continue
            taken.add(c)
            chosen.append(c)
            assign(k + 1)
            chosen.pop()
            taken.discard(c)

    assign(0)
    return out


def crowd_potential(z: CrowdState, field: StaticField) -> float:
    return math.fsum(field.by_index[c] for c in z)


def crowd_transition(x: int, z: CrowdState, lattice: Lattice, field: StaticField) -> TransitionDistribution:
    """Distribution of the next crowd configuration, weighted by ``exp(-U)``."""
    if x in z:
        raise InvalidStateError(f"agent cell {x} is occupied by a particle")
    if x not in lattice.free_set or not lattice.free_set.issuperset(z):
        raise InvalidStateError(f"state (x={x}, z={list(z)}) uses blocked or out-of-bounds cells")
    states = sorted(reachable_crowds(x, tuple(z), lattice))
    u = np.array([crowd_potential(zz, field) for zz in states])
    w = np.exp(-(u - u.min()))
    w /= w.sum()
    return TransitionDistribution(tuple(zip(states, w.tolist())))
