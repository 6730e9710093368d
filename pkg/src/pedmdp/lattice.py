"""Rectangular lattice, cell numbering and the static floor field.

Cells are numbered row-major from 1 at the top-left cell, so on a lattice
five columns wide the cell at column 2, row 3 (0-based) is number 18 and its
left neighbour is 17.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

METRICS = ("chebyshev", "euclidean", "manhattan")


class LatticeError(ValueError):
    """Invalid lattice configuration or out-of-bounds cell."""


class GridPos(NamedTuple):
    col: int
    row: int


def distance(a: GridPos, b: GridPos, metric: str = "chebyshev") -> float:
    dc = abs(a[0] - b[0])
    dr = abs(a[1] - b[1])
    if metric == "chebyshev":
        return float(max(dc, dr))
    if metric == "manhattan":
        return float(dc + dr)
    if metric == "euclidean":
        return math.hypot(dc, dr)
    raise LatticeError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class Lattice:
    width: int
    height: int
    exit: GridPos
    blocked: frozenset[GridPos] = field(default_factory=frozenset)
    metric: str = "chebyshev"

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise LatticeError("lattice needs width >= 1 and height >= 1")
        if self.metric not in METRICS:
            raise LatticeError(f"metric must be one of {METRICS}, got {self.metric!r}")
        object.__setattr__(self, "exit", GridPos(*self.exit))
        object.__setattr__(self, "blocked", frozenset(GridPos(*b) for b in self.blocked))
        if not self.in_bounds(self.exit):
            raise LatticeError(f"exit {tuple(self.exit)} is out of bounds")
        if self.exit in self.blocked:
            raise LatticeError("exit cell is blocked")
        for b in self.blocked:
            if not self.in_bounds(b):
                raise LatticeError(f"blocked cell {tuple(b)} is out of bounds")
        object.__setattr__(
            self, "_hash", hash((self.width, self.height, self.exit, self.blocked, self.metric))
        )

    def __hash__(self) -> int:
        # used as a cache key in hot loops
        return self._hash

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def in_bounds(self, pos: GridPos) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height

    def is_free(self, pos: GridPos) -> bool:
        return self.in_bounds(pos) and pos not in self.blocked

    def dist(self, a: GridPos, b: GridPos) -> float:
        return distance(a, b, self.metric)

    @cached_property
    def exit_index(self) -> int:
        return cell_index(self.exit, self)

    @cached_property
    def free_cells(self) -> tuple[int, ...]:
        """Indices of all unblocked cells, ascending."""
        return tuple(
            i for i in range(1, self.n_cells + 1) if index_to_pos(i, self) not in self.blocked
        )

    @cached_property
    def free_set(self) -> frozenset[int]:
        return frozenset(self.free_cells)

    @cached_property
    def neighbor_table(self) -> dict[int, tuple[int, ...]]:
        """Cell index -> indices within distance 1, self included."""
        return {
            i: tuple(cell_index(p, self) for p in neighbors(index_to_pos(i, self), self, True))
            for i in self.free_cells
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Lattice":
        try:
            return cls(
                width=int(data["width"]),
                height=int(data["height"]),
                exit=GridPos(*data["exit"]),
                blocked=frozenset(GridPos(*b) for b in data.get("blocked", [])),
                metric=data.get("metric", "chebyshev"),
            )
        except (KeyError, TypeError) as exc:
            raise LatticeError(f"malformed lattice config: {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Lattice":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "exit": list(self.exit),
            "blocked": sorted([list(b) for b in self.blocked]),
            "metric": self.metric,
        }


def cell_index(pos: GridPos, lattice: Lattice) -> int:
    if not lattice.in_bounds(pos):
        raise LatticeError(f"position {tuple(pos)} outside {lattice.width}x{lattice.height} lattice")
    return pos[1] * lattice.width + pos[0] + 1


def index_to_pos(index: int, lattice: Lattice) -> GridPos:
    if not 1 <= index <= lattice.n_cells:
        raise LatticeError(f"cell index {index} outside 1..{lattice.n_cells}")
    row, col = divmod(index - 1, lattice.width)
    return GridPos(col, row)


@dataclass(frozen=True)
class StaticField:
    """Distance-to-exit value of every unblocked cell."""

    values: dict[GridPos, float]
    by_index: dict[int, float]

    def __getitem__(self, key: GridPos | int) -> float:
        if isinstance(key, tuple):
            return self.values[GridPos(*key)]
        return self.by_index[key]


def build_static_field(lattice: Lattice) -> StaticField:
    values = {}
    by_index = {}
    for i in lattice.free_cells:
        pos = index_to_pos(i, lattice)
        values[pos] = by_index[i] = lattice.dist(pos, lattice.exit)
    return StaticField(values, by_index)


def neighbors(pos: GridPos, lattice: Lattice, include_self: bool = True) -> list[GridPos]:
    """Unblocked in-bounds cells within distance 1 of ``pos``."""
    if not lattice.in_bounds(pos):
        raise LatticeError(f"position {tuple(pos)} is out of bounds")
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0 and not include_self:
                continue
            y = GridPos(pos[0] + dc, pos[1] + dr)
            if lattice.is_free(y) and lattice.dist(pos, y) <= 1:
                out.append(y)
    return out
