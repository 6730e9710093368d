"""Oriented six-sector neighbourhood occupancy and observation building."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
import shapely
from shapely.geometry import Polygon
from shapely.ops import unary_union

from .trajectory import (
    DEFAULT_DT,
    DEFAULT_SPEED_THRESHOLD,
    MOVING,
    ActionLabel,
    PathRecord,
    angle_bin,
    classify_action,
    direction_angle,
    discretize,
)

log = logging.getLogger(__name__)

DEFAULT_RADIUS = 0.75
DEFAULT_WALL_FRAC = 0.40
SECTOR_SAMPLES = 1024

SECTOR_NAMES = ("fwd", "fwdr", "fwdl", "right", "left", "back")

_P8 = math.pi / 8
# (start, width) of each sector in exit-relative angle, same order as MOVING
_SECTOR_SPANS = (
    (-_P8, 2 * _P8),
    (-3 * _P8, 2 * _P8),
    (_P8, 2 * _P8),
    (-5 * _P8, 2 * _P8),
    (3 * _P8, 2 * _P8),
    (5 * _P8, 6 * _P8),
)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class WallGeometry:
    polygons: tuple[tuple[tuple[float, float], ...], ...] = ()

    def __post_init__(self) -> None:
        polys = tuple(tuple((float(x), float(y)) for x, y in p) for p in self.polygons)
        for p in polys:
            if len(p) < 3 or not Polygon(p).is_valid:
                raise GeometryError(f"wall polygon is not a simple polygon: {p}")
        object.__setattr__(self, "polygons", polys)

    @property
    def shape(self):
        return _union(self.polygons)

    @classmethod
    def load(cls, path: str | Path) -> "WallGeometry":
        with open(path) as fh:
            data = json.load(fh)
        try:
            return cls(tuple(tuple(tuple(v) for v in p) for p in data["polygons"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise GeometryError(f"{path}: malformed wall geometry: {exc}") from exc


@lru_cache(maxsize=32)
def _union(polygons):
    if not polygons:
        return None
    shape = unary_union([Polygon(p) for p in polygons])
    shapely.prepare(shape)
    return shape


@dataclass(frozen=True)
class SectorState:
    occ: tuple[int, int, int, int, int, int]

    def __post_init__(self) -> None:
        occ = tuple(int(b) for b in self.occ)
        if len(occ) != 6 or any(b not in (0, 1) for b in occ):
            raise ValueError(f"sector state must be 6 bits, got {self.occ}")
        object.__setattr__(self, "occ", occ)

    def __getitem__(self, sector: int) -> int:
        return self.occ[sector]

    def __iter__(self):
        return iter(self.occ)

    @classmethod
    def empty(cls) -> "SectorState":
        return cls((0,) * 6)


@dataclass(frozen=True)
class Observation:
    state: SectorState
    action: ActionLabel
    ped_id: str = ""
    t: float = 0.0


@lru_cache(maxsize=16)
def _sector_offsets(samples: int) -> tuple[np.ndarray, ...]:
    """Stratified polar sample points of each sector in the unit circle.

    Returned as exit-relative (angle, radius) pairs, equal-area strata.
    """
    n_ang = max(1, int(round(math.sqrt(samples))))
    n_rad = max(1, samples // n_ang)
    radii = np.sqrt((np.arange(n_rad) + 0.5) / n_rad)
    out = []
    for start, width in _SECTOR_SPANS:
        angles = start + width * (np.arange(n_ang) + 0.5) / n_ang
        a, r = np.meshgrid(angles, radii)
        out.append(np.stack([a.ravel(), r.ravel()]))
    return tuple(out)


def wall_fractions(self_pos, exit, walls: WallGeometry, radius: float = DEFAULT_RADIUS,
                   samples: int = SECTOR_SAMPLES) -> np.ndarray:
    """Fraction of each sector's area covered by walls, estimated by sampling."""
    shape = walls.shape if walls is not None else None
    if shape is None:
        return np.zeros(6)
    heading = math.atan2(exit[1] - self_pos[1], exit[0] - self_pos[0])
    fracs = np.empty(6)
    for k, (rel, r) in enumerate(_sector_offsets(samples)):
        # relative angle theta maps back to global heading - theta
        glob = heading - rel
        px = self_pos[0] + radius * r * np.cos(glob)
        py = self_pos[1] + radius * r * np.sin(glob)
        fracs[k] = shapely.contains_xy(shape, px, py).mean()
    return fracs


def extract_state(self_pos, others, exit, walls: WallGeometry | None = None,
                  radius: float = DEFAULT_RADIUS, wall_frac: float = DEFAULT_WALL_FRAC,
                  samples: int = SECTOR_SAMPLES) -> SectorState:
    """Occupancy bits of the six exit-oriented sectors around ``self_pos``."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if not 0 < wall_frac <= 1:
        raise ValueError("wall_frac must lie in (0, 1]")
    bits = [0] * 6
    for ox, oy in others:
        dx, dy = ox - self_pos[0], oy - self_pos[1]
        d = math.hypot(dx, dy)
        if d > radius:
            continue
        if d == 0:
            log.warning("pedestrian located exactly at %s; counted as forward", self_pos)
            bits[0] = 1
            continue
        bits[MOVING.index(angle_bin(direction_angle(self_pos, (dx, dy), exit)))] = 1
    if walls is not None and walls.polygons:
        fr = wall_fractions(self_pos, exit, walls, radius, samples)
        for k in range(6):
            if fr[k] >= wall_frac:
                bits[k] = 1
    return SectorState(tuple(bits))


def _past_exit(pos, observer, exit) -> bool:
    # beyond the line through the exit perpendicular to the observer's heading
    hx, hy = exit[0] - observer[0], exit[1] - observer[1]
    return (pos[0] - exit[0]) * hx + (pos[1] - exit[1]) * hy > 0


def build_observations(records: Sequence[PathRecord], exit, walls: WallGeometry | None = None,
                       dt: float = DEFAULT_DT, radius: float = DEFAULT_RADIUS,
                       speed_threshold: float = DEFAULT_SPEED_THRESHOLD,
                       wall_frac: float = DEFAULT_WALL_FRAC,
                       include_exited: bool = False) -> list[Observation]:
    """Pair each discretized step with the neighbourhood state at its start.

    Observations of all pedestrians are pooled and sorted by time, then id.
    Others that are already past the exit (as seen by the observer) are
    ignored unless ``include_exited``.
    """
    obs = []
    for rec in records:
        for step in discretize(rec, dt, exit):
            pos = step.position
            if (pos[0], pos[1]) == (exit[0], exit[1]):
                continue
            others = []
            for other in records:
                if other is rec or not other.covers(step.t):
                    continue
                p = other.position(step.t)
                if include_exited or not _past_exit(p, pos, exit):
                    others.append(p)
            state = extract_state(pos, others, exit, walls, radius, wall_frac)
            obs.append(Observation(state, classify_action(step, speed_threshold), rec.ped_id, step.t))
    obs.sort(key=lambda o: (o.t, o.ped_id))
    return obs


def write_observations(path: str | Path | TextIO, observations: Sequence[Observation]) -> None:
    """Write observations as CSV to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_observation_rows(path, observations)
        return
    with open(path, "w", newline="") as fh:
        _write_observation_rows(fh, observations)


def _write_observation_rows(fh: TextIO, observations: Sequence[Observation]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["ped_id", "t"] + [f"s_{n}" for n in SECTOR_NAMES] + ["action"])
    for o in observations:
        w.writerow([o.ped_id, repr(o.t), *o.state.occ, o.action.name])


def read_observations(path: str | Path) -> list[Observation]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            state = SectorState(tuple(int(row[f"s_{n}"]) for n in SECTOR_NAMES))
            out.append(Observation(state, ActionLabel[row["action"]], row["ped_id"], float(row["t"])))
    return out
