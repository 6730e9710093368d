"""Finite-horizon planning for one clever agent among floor-field particles.

The state is ``(x, z)``: the agent's cell and the sorted particle cells.
Actions 1..9 are "stay" plus the eight Moore moves, numbered clockwise from
"one column left"::

    3 4 5
    2 1 6
    9 8 7

Each step the particles move first (``crowd_transition``), then the agent
takes its chosen cell if it is free, otherwise it stays put. Once the agent
stands on the exit it stays there and collects no further reward.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Iterable, Mapping, NamedTuple

from .environment import CrowdState, InvalidStateError, TransitionDistribution, crowd_transition
from .lattice import GridPos, Lattice, StaticField, cell_index, index_to_pos

ACTIONS = tuple(range(1, 10))
STAY = 1
ACTION_OFFSETS = {
    1: (0, 0),
    2: (-1, 0),
    3: (-1, -1),
    4: (0, -1),
    5: (1, -1),
    6: (1, 0),
    7: (1, 1),
    8: (0, 1),
    9: (-1, 1),
}

DEFAULT_STATE_CAP = 5_000_000
TIE_TOL = 1e-12


class CapacityError(RuntimeError):
    def __init__(self, required: int, allowed: int, what: str = "states"):
        super().__init__(f"{what}: need {required}, allowed {allowed}")
        self.required = required
        self.allowed = allowed


class PolicyError(KeyError):
    pass


class FullState(NamedTuple):
    """Agent cell ``x`` and sorted particle cells ``z``."""

    x: int
    z: CrowdState = ()

    @classmethod
    def of(cls, x: int, z: Iterable[int] = ()) -> "FullState":
        return cls(int(x), tuple(sorted(int(c) for c in z)))

    def validate(self, lattice: Lattice) -> "FullState":
        free = lattice.free_set
        if list(self.z) != sorted(self.z):
            raise InvalidStateError(f"particle cells must be sorted: {self.z}")
        if self.x not in free:
            raise InvalidStateError(f"agent cell {self.x} is blocked or out of bounds")
        if self.x in self.z:
            raise InvalidStateError(f"agent cell {self.x} is occupied by a particle")
        if len(set(self.z)) != len(self.z) or not set(self.z) <= free:
            raise InvalidStateError(f"invalid particle cells {self.z}")
        return self


@lru_cache(maxsize=64)
def _target_table(lattice: Lattice) -> dict[tuple[int, int], int | None]:
    table = {}
    for x in range(1, lattice.n_cells + 1):
        col, row = index_to_pos(x, lattice)
        for a, (dc, dr) in ACTION_OFFSETS.items():
            pos = GridPos(col + dc, row + dr)
            table[(x, a)] = cell_index(pos, lattice) if lattice.in_bounds(pos) else None
    return table


def action_target(x: int, a: int, lattice: Lattice) -> int | None:
    """Cell the action aims at, or None when it points off the lattice."""
    return _target_table(lattice)[(x, a)]


def clever_move(x: int, a: int, z_next: Iterable[int], lattice: Lattice) -> int:
    if x == lattice.exit_index:
        return x
    target = _target_table(lattice)[(x, a)]
    if target is None or target in z_next or target not in lattice.free_set:
        return x
    return target


def full_transition(s: FullState, a: int, lattice: Lattice, field: StaticField,
                    crowd: TransitionDistribution | None = None) -> dict[FullState, float]:
    """Outcome distribution of ``a`` in ``s``; pass ``crowd`` to reuse it."""
    if crowd is None:
        crowd = crowd_transition(s.x, s.z, lattice, field)
    out: dict[FullState, float] = {}
    for z2, p in crowd:
        s2 = FullState(clever_move(s.x, a, z2, lattice), z2)
        out[s2] = out.get(s2, 0.0) + p
    return out


@dataclass(frozen=True)
class RewardModel:
    kind: str = "time"
    terminal_factor: float = 2.0

    def __post_init__(self) -> None:
        if self.kind not in ("time", "co"):
            raise ValueError(f"reward kind must be 'time' or 'co', got {self.kind!r}")

    def local(self, s: FullState, a: int, s_next: FullState, lattice: Lattice, t: int | None = None) -> float:
        return local_reward(self, s, a, s_next, lattice)

    def terminal(self, s: FullState, lattice: Lattice, field: StaticField) -> float:
        return terminal_reward(s, lattice, field, self.terminal_factor)


def lost_conflict(s: FullState, a: int, s_next: FullState, lattice: Lattice) -> bool:
    """The agent aimed at a cell that a particle holds after the crowd moved."""
    if s.x == lattice.exit_index or a == STAY:
        return False
    return action_target(s.x, a, lattice) in s_next.z


def local_reward(model: RewardModel, s: FullState, a: int, s_next: FullState, lattice: Lattice) -> float:
    if s.x == lattice.exit_index:
        return 0.0
    if model.kind == "time":
        return -1.0
    if a == STAY:
        return -0.5
    return -2.0 if lost_conflict(s, a, s_next, lattice) else -1.0


def expected_reward(model: RewardModel, s: FullState, a: int, transition: Mapping[FullState, float],
                    lattice: Lattice) -> float:
    return math.fsum(p * model.local(s, a, s2, lattice) for s2, p in transition.items())


def terminal_reward(s: FullState, lattice: Lattice, field: StaticField, factor: float = 2.0) -> float:
    return -factor * field.by_index[s.x]


@dataclass
class Policy:
    decisions: dict[tuple[int, FullState], int] = field(default_factory=dict)

    def __call__(self, t: int, s: FullState) -> int:
        try:
            return self.decisions[(t, s)]
        except KeyError:
            raise PolicyError(f"no decision for state x={s.x} z={list(s.z)} at epoch {t}") from None

    def __len__(self) -> int:
        return len(self.decisions)


@dataclass
class ValueFunction:
    v: dict[tuple[int, FullState], float] = field(default_factory=dict)

    def __call__(self, t: int, s: FullState) -> float:
        return self.v[(t, s)]


@dataclass
class Solution:
    horizon: int
    model: RewardModel
    policy: Policy
    values: ValueFunction
    layers: dict[int, list[FullState]]
    cache: TransitionCache | None = None


def dense_state_count(lattice: Lattice, n_particles: int) -> int:
    n = len(lattice.free_cells)
    return sum(n * math.comb(n - 1, k) for k in range(n_particles + 1))


def dense_states(lattice: Lattice, n_particles: int) -> list[FullState]:
    """Every (x, z) with at most ``n_particles`` particles.

    Smaller crowds are included because particles leave through the exit.
    """
    free = lattice.free_cells
    out = []
    for k in range(n_particles + 1):
        for x in free:
            rest = [c for c in free if c != x]
            out.extend(FullState(x, z) for z in combinations(rest, k))
    return out


class TransitionCache:
    """Memoised crowd and full transitions of one lattice and field."""

    def __init__(self, lattice: Lattice, field: StaticField):
        self.lattice = lattice
        self.field = field
        self._crowd: dict[tuple[int, CrowdState], TransitionDistribution] = {}
        self._full: dict[tuple[FullState, int], list[tuple[FullState, float]]] = {}

    def crowd(self, s: FullState) -> TransitionDistribution:
        key = (s.x, s.z)
        if key not in self._crowd:
            self._crowd[key] = crowd_transition(s.x, s.z, self.lattice, self.field)
        return self._crowd[key]

    def full(self, s: FullState, a: int) -> list[tuple[FullState, float]]:
        key = (s, a)
        if key not in self._full:
            trans = full_transition(s, a, self.lattice, self.field, self.crowd(s))
            self._full[key] = sorted(trans.items())
        return self._full[key]


def _reachable_layers(s0: FullState, horizon: int, cache: TransitionCache, cap: int) -> dict[int, list[FullState]]:
    layers = {1: [s0]}
    total = 1
    for t in range(1, horizon):
        nxt: set[FullState] = set()
        for s in layers[t]:
            for a in ACTIONS:
                nxt.update(s2 for s2, _ in cache.full(s, a))
        total += len(nxt)
        if len(nxt) > cap:
            raise CapacityError(len(nxt), cap, f"reachable states at epoch {t + 1}")
        layers[t + 1] = sorted(nxt)
    return layers


def backward_induction(lattice: Lattice, field: StaticField, model: RewardModel, horizon: int,
                       s0: FullState | None = None, n_particles: int | None = None,
                       state_space: str = "auto", cap: int = DEFAULT_STATE_CAP) -> Solution:
    """Optimal deterministic policy and values for epochs 1..horizon.

    ``state_space`` is ``"dense"`` (all states with up to ``n_particles``
    particles, the same set at every epoch), ``"reachable"`` (states
    reachable from ``s0``) or ``"auto"`` (dense when it fits under ``cap``).
    Ties go to the smallest action number.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if state_space not in ("auto", "dense", "reachable"):
        raise ValueError(f"unknown state_space {state_space!r}")
    if s0 is not None:
        s0.validate(lattice)
        if n_particles is None:
            n_particles = len(s0.z)
    if state_space == "reachable" and s0 is None:
        raise ValueError("reachable state space needs an initial state")
    cache = TransitionCache(lattice, field)

    if state_space == "auto":
        fits = n_particles is not None and dense_state_count(lattice, n_particles) <= cap
        state_space = "dense" if fits or s0 is None else "reachable"
    if state_space == "dense":
        if n_particles is None:
            raise ValueError("dense state space needs n_particles or an initial state")
        need = dense_state_count(lattice, n_particles)
        if need > cap:
            raise CapacityError(need, cap, "dense states per epoch")
        states = dense_states(lattice, n_particles)
        layers = {t: states for t in range(1, horizon + 1)}
    else:
        layers = _reachable_layers(s0, horizon, cache, cap)

    values = ValueFunction()
    policy = Policy()
    v = values.v
    for s in layers[horizon]:
        v[(horizon, s)] = model.terminal(s, lattice, field)
    for t in range(horizon - 1, 0, -1):
        for s in layers[t]:
            q = q_values(t, s, model, lattice, cache, values)
            best = max(q)
            a_idx = next(i for i, qa in enumerate(q) if qa >= best - TIE_TOL)
            policy.decisions[(t, s)] = ACTIONS[a_idx]
            v[(t, s)] = q[a_idx]
    return Solution(horizon, model, policy, values, layers, cache)


def q_values(t: int, s: FullState, model: RewardModel, lattice: Lattice, cache: TransitionCache,
             values: ValueFunction) -> list[float]:
    v = values.v
    out = []
    for a in ACTIONS:
        acc = []
        for s2, p in cache.full(s, a):
            acc.append(p * (model.local(s, a, s2, lattice, t=t) + v[(t + 1, s2)]))
        out.append(math.fsum(acc))
    return out


def brute_force_value(lattice: Lattice, field: StaticField, model: RewardModel, horizon: int,
                      s0: FullState, max_nodes: int = 10**7) -> float:
    """Optimal expected reward from ``s0`` by plain expectimax over the tree.

    Shares no values with ``backward_induction``; only the crowd model is
    common. Outcomes are not merged, so every branch is walked separately.
    """
    s0.validate(lattice)
    crowd_memo: dict[tuple[int, CrowdState], list[tuple[CrowdState, float]]] = {}
    count = 0

    def crowd(x, z):
        key = (x, z)
        if key not in crowd_memo:
            crowd_memo[key] = list(crowd_transition(x, z, lattice, field))
        return crowd_memo[key]

    def value(t: int, s: FullState) -> float:
        nonlocal count
        count += 1
        if count > max_nodes:
            raise CapacityError(count, max_nodes, "expectimax nodes")
        if t == horizon:
            return model.terminal(s, lattice, field)
        best = -math.inf
        outcomes = crowd(s.x, s.z)
        leaf = t + 1 == horizon
        if leaf:
            count += len(ACTIONS) * len(outcomes)
        for a in ACTIONS:
            total = 0.0
            for z2, p in outcomes:
                s2 = FullState(clever_move(s.x, a, z2, lattice), z2)
                future = model.terminal(s2, lattice, field) if leaf else value(t + 1, s2)
                total += p * (model.local(s, a, s2, lattice, t=t) + future)
            best = max(best, total)
        return best

    return value(1, s0)


@dataclass(frozen=True)
class Evaluation:
    expected_total_reward: float
    expected_steps_to_exit: float
    expected_lost_conflicts: float


def evaluate_policy(policy: Policy, lattice: Lattice, field: StaticField, model: RewardModel,
                    horizon: int, s0: FullState, cache: TransitionCache | None = None) -> Evaluation:
    """Exact expected reward of ``policy`` by propagating the state distribution.

    Also accumulates the expected number of epochs spent off the exit and
    the expected number of lost conflicts.
    """
    s0.validate(lattice)
    if cache is None:
        cache = TransitionCache(lattice, field)
    dist = {s0: 1.0}
    reward = []
    steps = []
    conflicts = []
    exit_cell = lattice.exit_index
    for t in range(1, horizon):
        nxt: dict[FullState, float] = {}
        for s, ps in dist.items():
            a = policy(t, s)
            if s.x != exit_cell:
                steps.append(ps)
            for s2, p in cache.full(s, a):
                pp = ps * p
                reward.append(pp * model.local(s, a, s2, lattice, t=t))
                if lost_conflict(s, a, s2, lattice):
                    conflicts.append(pp)
                nxt[s2] = nxt.get(s2, 0.0) + pp
        dist = nxt
    for s, ps in dist.items():
        reward.append(ps * model.terminal(s, lattice, field))
    return Evaluation(math.fsum(reward), math.fsum(steps), math.fsum(conflicts))


def policy_to_dict(solution: Solution) -> dict:
    decisions = [
        {"t": t, "x": s.x, "z": list(s.z), "a": a, "v": solution.values.v[(t, s)]}
        for (t, s), a in sorted(solution.policy.decisions.items())
    ]
    return {"T": solution.horizon, "reward": solution.model.kind, "decisions": decisions}


def policy_from_dict(data: dict) -> Policy:
    return Policy({(d["t"], FullState.of(d["x"], d["z"])): d["a"] for d in data["decisions"]})


def dump_policy(solution: Solution, extra: dict | None = None) -> str:
    data = policy_to_dict(solution)
    if extra:
        data.update(extra)
    return json.dumps(data, sort_keys=True) + "\n"
