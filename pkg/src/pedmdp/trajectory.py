"""Trajectory records, time discretization and relative action labels.

Angles are measured against the direction towards the exit, with 0 meaning
straight at the exit. Positions are taken in screen coordinates (y axis
pointing down), so a step that veers clockwise of the exit ray, i.e. to the
walker's right, has a negative angle.
"""

from __future__ import annotations

import csv
import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_DT = 1.0
DEFAULT_SPEED_THRESHOLD = 0.5

_EPS = 1e-9


class TrajectoryError(ValueError):
    pass


class UndefinedAngleError(ValueError):
    """Raised when the direction of a step cannot be defined."""


class ActionLabel(enum.IntEnum):
    STAND = 0
    FWD = 1
    FWD_R = 2
    FWD_L = 3
    RIGHT = 4
    LEFT = 5
    BACK = 6

    @property
    def symbol(self) -> str:
        return _SYMBOLS[self]


_SYMBOLS = {
    ActionLabel.STAND: "⊗",
    ActionLabel.FWD: "←",
    ActionLabel.FWD_R: "↖",
    ActionLabel.FWD_L: "↙",
    ActionLabel.RIGHT: "↑",
    ActionLabel.LEFT: "↓",
    ActionLabel.BACK: "→",
}

#: The six moving labels; these double as the neighbourhood sectors.
MOVING = tuple(ActionLabel)[1:]

_P8 = math.pi / 8
# (low, high] bins in ascending order; BACK is whatever is left.
_ANGLE_BINS = (
    (-_P8, _P8, ActionLabel.FWD),
    (-3 * _P8, -_P8, ActionLabel.FWD_R),
    (_P8, 3 * _P8, ActionLabel.FWD_L),
    (-5 * _P8, -3 * _P8, ActionLabel.RIGHT),
    (3 * _P8, 5 * _P8, ActionLabel.LEFT),
)


@dataclass(frozen=True)
class PathRecord:
    ped_id: str
    samples: np.ndarray  # shape (n, 3): t, x, y

    def __post_init__(self) -> None:
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3:
            raise TrajectoryError(f"pedestrian {self.ped_id}: samples must be rows of (t, x, y)")
        if len(s) < 2:
            raise TrajectoryError(f"pedestrian {self.ped_id}: need ≥ 2 samples, got {len(s)}")
        if np.any(np.diff(s[:, 0]) <= 0):
            raise TrajectoryError(f"pedestrian {self.ped_id}: sample times must be strictly increasing")
        object.__setattr__(self, "samples", s)

    @property
    def t_in(self) -> float:
        return float(self.samples[0, 0])

    @property
    def t_out(self) -> float:
        return float(self.samples[-1, 0])

    def covers(self, t: float) -> bool:
        return self.t_in - _EPS <= t <= self.t_out + _EPS

    def position(self, t: float) -> tuple[float, float]:
        """Linearly interpolated position at time ``t``."""
        s = self.samples
        return float(np.interp(t, s[:, 0], s[:, 1])), float(np.interp(t, s[:, 0], s[:, 2]))


@dataclass(frozen=True)
class MotionStep:
    t: float
    position: tuple[float, float]
    displacement: tuple[float, float]
    speed: float
    angle: float | None  # None when the step has no direction


def direction_angle(position, displacement, exit) -> float:
    """Signed angle in (-pi, pi] between the step and the ray to the exit."""
    ex, ey = exit[0] - position[0], exit[1] - position[1]
    dx, dy = displacement
    if dx == 0 and dy == 0:
        raise UndefinedAngleError("zero displacement has no direction")
    if ex == 0 and ey == 0:
        raise UndefinedAngleError("position coincides with the exit")
    dot = ex * dx + ey * dy
    cross = ex * dy - ey * dx
    angle = math.atan2(-cross, dot)
    # atan2(-0.0, negative) gives -pi
    return math.pi if angle == -math.pi else angle


def discretize(record: PathRecord, dt: float = DEFAULT_DT, exit=None) -> list[MotionStep]:
    """Resample a record on a ``dt`` grid starting at its first sample.

    When ``exit`` is given, every step also carries its direction angle.
    """
    if dt <= 0:
        raise TrajectoryError("dt must be positive")
    n = int(math.floor((record.t_out - record.t_in) / dt + _EPS))
    if n <= 0:
        return []
    times = record.t_in + dt * np.arange(n + 1)
    s = record.samples
    xs = np.interp(times, s[:, 0], s[:, 1])
    ys = np.interp(times, s[:, 0], s[:, 2])
    steps = []
    for k in range(n):
        pos = (float(xs[k]), float(ys[k]))
        disp = (float(xs[k + 1] - xs[k]), float(ys[k + 1] - ys[k]))
        speed = math.hypot(*disp) / dt
        angle = None
        if exit is not None and speed > 0 and (pos[0], pos[1]) != (exit[0], exit[1]):
            angle = direction_angle(pos, disp, exit)
        steps.append(MotionStep(float(times[k]), pos, disp, speed, angle))
    return steps


def angle_bin(angle: float) -> ActionLabel:
    """Moving label whose angular bin contains ``angle``."""
    for lo, hi, label in _ANGLE_BINS:
        if lo < angle <= hi:
            return label
    return ActionLabel.BACK


def classify_action(step: MotionStep, speed_threshold: float = DEFAULT_SPEED_THRESHOLD) -> ActionLabel:
    # A step without a direction (zero length, or starting at the exit
    # point) is treated as standing.
    if step.speed < speed_threshold or step.angle is None:
        return ActionLabel.STAND
    return angle_bin(step.angle)


def motion_histogram(steps: Sequence[MotionStep], angle_bins: int = 16, length_bins: int = 10,
                     max_length: float | None = None):
    """Counts of steps per (direction angle, movement length) cell.

    Lengths are in meters per step. Zero-length steps have no angle and are
    put in the angle-0 column. Returns ``(counts, angle_edges, length_edges)``
    with ``counts`` shaped ``(angle_bins, length_bins)``.
    """
    angles = np.array([0.0 if s.angle is None else s.angle for s in steps])
    lengths = np.array([math.hypot(*s.displacement) for s in steps])
    if max_length is None:
        max_length = float(lengths.max()) if len(lengths) and lengths.max() > 0 else 1.0
    angle_edges = np.linspace(-math.pi, math.pi, angle_bins + 1)
    length_edges = np.linspace(0.0, max_length, length_bins + 1)
    # clip so the top length edge and angle pi fall inside
    lengths = np.minimum(lengths, max_length)
    counts, _, _ = np.histogram2d(angles, lengths, bins=(angle_edges, length_edges))
    return counts.astype(int), angle_edges, length_edges


def silverman_bandwidth(angles: np.ndarray) -> float:
    """Silverman's rule with the circular standard deviation as spread."""
    n = len(angles)
    r = abs(np.mean(np.exp(1j * angles)))
    sigma = math.sqrt(-2.0 * math.log(r)) if r > 0 else math.pi
    sigma = min(sigma, math.pi)
    return 1.06 * sigma * n ** (-0.2)


def direction_kde(steps: Sequence[MotionStep], bandwidth: float | None = None, grid_points: int = 360):
    """Wrapped-Gaussian density of step directions on (-pi, pi].

    Steps without an angle are ignored. Returns ``(grid, density)``.
    """
    angles = np.array([s.angle for s in steps if s.angle is not None])
    if len(angles) == 0:
        raise TrajectoryError("direction_kde needs at least one step with a direction")
    grid = np.linspace(-math.pi, math.pi, grid_points + 1)[1:]
    spacing = 2 * math.pi / grid_points
    h = silverman_bandwidth(angles) if bandwidth is None else float(bandwidth)
    # below ~2 grid spacings the sampled density no longer sums to 1
    h = max(h, 2 * spacing)
    n_wrap = int(math.ceil(6 * h / (2 * math.pi))) + 1
    diff = grid[:, None] - angles[None, :]
    dens = np.zeros_like(grid)
    for k in range(-n_wrap, n_wrap + 1):
        dens += np.exp(-0.5 * ((diff + 2 * math.pi * k) / h) ** 2).sum(axis=1)
    dens /= len(angles) * h * math.sqrt(2 * math.pi)
    return grid, dens


def read_trajectories(path: str | Path) -> list[PathRecord]:
    """Read a ``ped_id,t,x,y`` CSV, or every ``*.csv`` file in a directory."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.csv"))
        if not files:
            raise TrajectoryError(f"no trajectory CSV files in {path}")
        records = []
        for f in files:
            records.extend(_read_csv(f, prefix=f"{f.stem}:"))
        return records
    return _read_csv(path)


def _read_csv(path: Path, prefix: str = "") -> list[PathRecord]:
    rows: dict[str, list[tuple[float, float, float]]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TrajectoryError(f"{path}: empty file")
        if [h.strip() for h in header] != ["ped_id", "t", "x", "y"]:
            raise TrajectoryError(f"{path}: header must be ped_id,t,x,y")
        for lineno, row in enumerate(reader, start=2):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 4:
                raise TrajectoryError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                t, x, y = (float(v) for v in row[1:])
            except ValueError as exc:
                raise TrajectoryError(f"{path}:{lineno}: {exc}") from exc
            rows[prefix + row[0].strip()].append((t, x, y))
    if not rows:
        raise TrajectoryError(f"{path}: no trajectory rows")
    records = []
    for pid, samples in rows.items():
        samples.sort()
        records.append(PathRecord(pid, np.array(samples)))
    return records


def write_trajectories(path: str | Path, records: Iterable[PathRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ped_id", "t", "x", "y"])
        for rec in records:
            for t, x, y in rec.samples:
                w.writerow([rec.ped_id, repr(float(t)), repr(float(x)), repr(float(y))])
