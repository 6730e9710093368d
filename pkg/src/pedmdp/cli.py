"""Command-line entry point: ``analyze``, ``estimate``, ``simulate``, ``optimize``.

Every command takes ``--config file.json``; keys are the long option names
with dashes replaced by underscores. Explicit flags override the config.

Exit codes: 0 success, 2 input error, 3 capacity error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .environment import InvalidStateError, OccupancyGrid, simulate, validate_crowd
from .lattice import Lattice, LatticeError, build_static_field
from .mdp import (
    DEFAULT_STATE_CAP,
    CapacityError,
    FullState,
    RewardModel,
    backward_induction,
    brute_force_value,
    dump_policy,
    evaluate_policy,
)
from .mixture import DEFAULT_LAMBDA, DEFAULT_PRIOR_STRENGTH, EstimationError, dump_model, fit, render_report
from .neighborhood import (
    DEFAULT_RADIUS,
    DEFAULT_WALL_FRAC,
    GeometryError,
    WallGeometry,
    build_observations,
    write_observations,
)
from .trajectory import (
    DEFAULT_DT,
    DEFAULT_SPEED_THRESHOLD,
    TrajectoryError,
    classify_action,
    direction_kde,
    discretize,
    motion_histogram,
    read_trajectories,
)

log = logging.getLogger("pedmdp")

EXIT_OK, EXIT_INPUT, EXIT_CAPACITY, EXIT_INTERNAL = 0, 2, 3, 4

INPUT_ERRORS = (TrajectoryError, LatticeError, GeometryError, InvalidStateError, EstimationError,
                OSError, json.JSONDecodeError, ValueError)


class InvariantViolation(RuntimeError):
    pass


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _stamp(params: dict) -> str:
    return "# pedmdp " + __version__ + " params=" + json.dumps(params, sort_keys=True) + "\n"


def _params(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config", "verbose")}


def _csv_text(stamp: str, header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(stamp)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v: float) -> str:
    return repr(float(v))


# --- analyze -------------------------------------------------------------

def cmd_analyze(args: argparse.Namespace) -> int:
    records = read_trajectories(args.trajectories)
    exit_pt = tuple(args.exit)
    steps, owners = [], []
    for rec in records:
        for st in discretize(rec, args.dt, exit_pt):
            steps.append(st)
            owners.append(rec.ped_id)
    if not steps:
        raise TrajectoryError("no motion steps: every record is shorter than dt")
    keep = [i for i, st in enumerate(steps) if st.speed >= args.speed_threshold]
    filtered = [steps[i] for i in keep]
    stamp = _stamp(_params(args))
    out = Path(args.out_dir)

    def step_rows(idx):
        for i in idx:
            st = steps[i]
            yield [owners[i], _fmt(st.t), _fmt(st.position[0]), _fmt(st.position[1]),
                   _fmt(st.displacement[0]), _fmt(st.displacement[1]), _fmt(st.speed),
                   "" if st.angle is None else _fmt(st.angle),
                   classify_action(st, args.speed_threshold).name]

    step_header = ["ped_id", "t", "x", "y", "dx", "dy", "speed", "angle", "action"]
    atomic_write(out / "steps.csv", _csv_text(stamp, step_header, step_rows(range(len(steps)))))
    atomic_write(out / "steps_filtered.csv", _csv_text(stamp, step_header, step_rows(keep)))

    # shared length axis so both tables line up
    max_len = max(math.hypot(*st.displacement) for st in steps) or 1.0
    for name, subset in (("histogram.csv", steps), ("histogram_filtered.csv", filtered)):
        counts, a_edges, l_edges = motion_histogram(subset, args.angle_bins, args.length_bins, max_len)
        rows = [
            [_fmt(a_edges[i]), _fmt(a_edges[i + 1]), _fmt(l_edges[j]), _fmt(l_edges[j + 1]), int(counts[i, j])]
            for i in range(counts.shape[0])
            for j in range(counts.shape[1])
        ]
        atomic_write(out / name, _csv_text(stamp, ["angle_lo", "angle_hi", "length_lo_m", "length_hi_m", "count"], rows))

    for name, subset in (("kde.csv", steps), ("kde_filtered.csv", filtered)):
        rows = []
        if any(st.angle is not None for st in subset):
            grid, dens = direction_kde(subset, args.bandwidth, args.kde_points)
            rows = [[_fmt(g), _fmt(d)] for g, d in zip(grid, dens)]
        atomic_write(out / name, _csv_text(stamp, ["angle", "density"], rows))

    print(f"{len(steps)} steps, {len(filtered)} at speed >= {args.speed_threshold} m/s; wrote {out}")
    return EXIT_OK


# --- estimate ------------------------------------------------------------

def cmd_estimate(args: argparse.Namespace) -> int:
    records = read_trajectories(args.trajectories)
    walls = WallGeometry.load(args.walls) if args.walls else None
    obs = build_observations(records, tuple(args.exit), walls, args.dt, args.radius,
                             args.speed_threshold, args.wall_frac, args.include_exited)
    if not obs:
        raise EstimationError("no observations could be extracted from the trajectories")
    model = fit(obs, args.prior_strength, args.lambda_)
    if abs(model.alpha.sum() - 1) > 1e-9 or np.any(np.abs(model.theta.sum(axis=1) - 1) > 1e-9):
        raise InvariantViolation("fitted model is not normalised")
    params = _params(args)
    out = Path(args.out_dir)
    atomic_write(out / "model.json", dump_model(model, {"params": params, "n_observations": len(obs)}))
    atomic_write(out / "report.csv", _stamp(params) + render_report(model))
    buf = io.StringIO()
    write_observations(buf, obs)
    atomic_write(out / "observations.csv", _stamp(params) + buf.getvalue())
    top = int(np.argmax(model.alpha))
    print(f"{len(obs)} observations; largest weight {model.alpha[top]:.4f} on sector {top}; wrote {out}")
    return EXIT_OK


# --- simulate ------------------------------------------------------------

def _cells(text: str) -> list[int]:
    text = text.strip()
    return [int(c) for c in text.split(",") if c.strip()] if text else []


def cmd_simulate(args: argparse.Namespace) -> int:
    lattice = Lattice.load(args.lattice)
    field = build_static_field(lattice)
    initial = _cells(args.initial) if isinstance(args.initial, str) else list(args.initial)
    crowd = validate_crowd(initial, lattice)
    if args.steps < 0:
        raise ValueError("steps must be >= 0")
    trace = simulate(OccupancyGrid(frozenset(crowd)), field, lattice, args.steps, np.random.default_rng(args.seed))
    rows = ([t, c, g.tau(c)] for t, g in enumerate(trace) for c in range(1, lattice.n_cells + 1))
    atomic_write(args.out, _csv_text(_stamp(_params(args)), ["t", "cell_index", "occupied"], rows))
    print(f"{len(trace) - 1} steps; {len(trace[-1])} particles left; wrote {args.out}")
    return EXIT_OK


# --- optimize ------------------------------------------------------------

def parse_state(text: str) -> FullState:
    """``"18:8,14,17,22"`` -> agent in 18, particles in 8, 14, 17, 22."""
    x, _, rest = text.partition(":")
    return FullState.of(int(x), _cells(rest))


def cmd_optimize(args: argparse.Namespace) -> int:
    lattice = Lattice.load(args.lattice)
    field = build_static_field(lattice)
    s0 = parse_state(args.initial_state).validate(lattice)
    model = RewardModel(args.reward, args.terminal_factor)
    sol = backward_induction(lattice, field, model, args.horizon, s0=s0, n_particles=args.particles,
                             state_space=args.state_space, cap=args.max_states)
    ev = evaluate_policy(sol.policy, lattice, field, model, args.horizon, s0)
    value = sol.values(1, s0)
    if abs(ev.expected_total_reward - value) > 1e-9:
        raise InvariantViolation(f"policy evaluation {ev.expected_total_reward} != solver value {value}")
    summary = {
        "value": value,
        "expected_total_reward": ev.expected_total_reward,
        "expected_steps_to_exit": ev.expected_steps_to_exit,
        "expected_lost_conflicts": ev.expected_lost_conflicts,
        "decisions": len(sol.policy),
        "first_action": sol.policy.decisions.get((1, s0)),
    }
    if args.oracle_check:
        oracle = brute_force_value(lattice, field, model, args.horizon, s0)
        summary["oracle_value"] = oracle
        if abs(oracle - value) > 1e-9:
            raise InvariantViolation(f"oracle value {oracle} != solver value {value}")
    params = _params(args)
    atomic_write(args.out, dump_policy(sol, {"params": params}))
    if args.summary:
        atomic_write(args.summary, json.dumps({"params": params, **summary}, indent=2, sort_keys=True) + "\n")
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pedmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of option defaults")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("analyze", help="direction/length histograms and direction KDE of trajectories")
    common(p)
    p.add_argument("trajectories", nargs="?", help="ped_id,t,x,y CSV file or directory of them")
    p.add_argument("--exit", type=float, nargs=2, metavar=("X", "Y"))
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--speed-threshold", type=float, default=DEFAULT_SPEED_THRESHOLD)
    p.add_argument("--angle-bins", type=int, default=16)
    p.add_argument("--length-bins", type=int, default=10)
    p.add_argument("--bandwidth", type=float, default=None, help="KDE bandwidth in radians (default: Silverman)")
    p.add_argument("--kde-points", type=int, default=360)
    p.add_argument("--out-dir", default="analysis")
    p.set_defaults(func=cmd_analyze, required=("trajectories", "exit"))

    p = sub.add_parser("estimate", help="fit the sector mixture model to trajectories")
    common(p)
    p.add_argument("trajectories", nargs="?", help="ped_id,t,x,y CSV file or directory of them")
    p.add_argument("--exit", type=float, nargs=2, metavar=("X", "Y"))
    p.add_argument("--walls", help="wall polygons JSON")
    p.add_argument("--dt", type=float, default=DEFAULT_DT)
    p.add_argument("--radius", type=float, default=DEFAULT_RADIUS)
    p.add_argument("--wall-frac", type=float, default=DEFAULT_WALL_FRAC)
    p.add_argument("--speed-threshold", type=float, default=DEFAULT_SPEED_THRESHOLD)
    p.add_argument("--prior-strength", type=float, default=DEFAULT_PRIOR_STRENGTH)
    p.add_argument("--lambda", dest="lambda_", type=float, default=DEFAULT_LAMBDA, help="forgetting factor")
    p.add_argument("--include-exited", action="store_true", help="count pedestrians already past the exit")
    p.add_argument("--out-dir", default="estimate")
    p.set_defaults(func=cmd_estimate, required=("trajectories", "exit"))

    p = sub.add_parser("simulate", help="run the floor-field model")
    common(p)
    p.add_argument("lattice", nargs="?", help="lattice JSON")
    p.add_argument("--initial", default="", help="comma-separated particle cells")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trace.csv")
    p.set_defaults(func=cmd_simulate, required=("lattice",))

    p = sub.add_parser("optimize", help="optimal strategy of the clever agent")
    common(p)
    p.add_argument("lattice", nargs="?", help="lattice JSON")
    p.add_argument("--initial-state", help='agent and particle cells, e.g. "18:8,14,17,22"')
    p.add_argument("--horizon", type=int, default=6)
    p.add_argument("--reward", choices=("time", "co"), default="time")
    p.add_argument("--particles", type=int, default=None, help="particle count of the dense state space")
    p.add_argument("--terminal-factor", type=float, default=2.0)
    p.add_argument("--state-space", choices=("auto", "dense", "reachable"), default="auto")
    p.add_argument("--max-states", type=int, default=DEFAULT_STATE_CAP)
    p.add_argument("--oracle-check", action="store_true", help="compare with brute-force expectimax")
    p.add_argument("--out", default="policy.json")
    p.add_argument("--summary", default=None, help="also write the summary as JSON")
    p.set_defaults(func=cmd_optimize, required=("lattice", "initial_state"))
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            config = json.load(fh)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(config) - known
        if unknown:
            parser.error(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    missing = [k for k in args.required if getattr(args, k) in (None, "")]
    if missing:
        parser.error("missing required option(s): " + ", ".join(m.replace("_", "-") for m in missing))
    del args.required
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CapacityError as exc:
        print(f"error: capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except InvariantViolation as exc:
        print(f"error: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
