import json
import math
from dataclasses import dataclass

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import full_distribution
from pedmdp.environment import InvalidStateError
from pedmdp.lattice import GridPos, Lattice, build_static_field
from pedmdp.mdp import (
    ACTION_OFFSETS,
    ACTIONS,
    CapacityError,
    FullState,
    Policy,
    PolicyError,
    RewardModel,
    TransitionCache,
    backward_induction,
    brute_force_value,
    clever_move,
    dense_state_count,
    dense_states,
    dump_policy,
    evaluate_policy,
    expected_reward,
    full_transition,
    local_reward,
    policy_from_dict,
    q_values,
    terminal_reward,
)

from conftest import P_NEAR

TIME = RewardModel("time")
CO = RewardModel("co")


def test_action_numbering():
    lat = Lattice(5, 5, GridPos(0, 0))
    # cell 18 is column 2 of row 3; action 2 goes one column left
    assert clever_move(18, 2, (), lat) == 17
    assert clever_move(18, 2, (17,), lat) == 18
    assert clever_move(18, 4, (), lat) == 13
    assert clever_move(18, 6, (), lat) == 19
    assert clever_move(18, 8, (), lat) == 23
    assert clever_move(18, 3, (), lat) == 12
    assert clever_move(18, 7, (), lat) == 24


def test_blocked_and_off_lattice_moves_stay():
    lat = Lattice(3, 3, GridPos(0, 0), frozenset({GridPos(1, 1)}))
    assert clever_move(2, 4, (), lat) == 2
    assert clever_move(2, 8, (), lat) == 2
    assert clever_move(2, 2, (), lat) == 1


def test_exit_absorbs_agent():
    lat = Lattice(3, 3, GridPos(0, 0))
    assert all(clever_move(1, a, (), lat) == 1 for a in ACTIONS)


def test_local_rewards():
    lat = Lattice(3, 3, GridPos(0, 0))
    s = FullState(5)
    assert local_reward(TIME, s, 1, FullState(5), lat) == -1
    assert local_reward(CO, s, 1, FullState(5), lat) == -0.5
    assert local_reward(CO, s, 2, FullState(4), lat) == -1
    assert local_reward(CO, s, 2, FullState(5, (4,)), lat) == -2
    assert local_reward(TIME, FullState(1), 6, FullState(1), lat) == 0
    assert local_reward(CO, FullState(1), 6, FullState(1, (2,)), lat) == 0


def test_terminal_reward():
    lat = Lattice(3, 3, GridPos(0, 0))
    field = build_static_field(lat)
    assert terminal_reward(FullState(9), lat, field) == -4
    assert terminal_reward(FullState(1), lat, field) == 0
    assert RewardModel("time", 3.0).terminal(FullState(2), lat, field) == -3


def test_unknown_reward_kind():
    with pytest.raises(ValueError):
        RewardModel("speed")


def test_corridor_full_transition(corridor):
    lat, field = corridor
    s = FullState(6, (3,))
    # action 3 aims at cell 2, which the particle takes with probability P_NEAR
    trans = full_transition(s, 3, lat, field)
    assert trans[FullState(6, (2,))] == pytest.approx(P_NEAR, abs=1e-12)
    assert trans[FullState(2, (3,))] == pytest.approx(1 - P_NEAR, abs=1e-12)
    assert expected_reward(CO, s, 3, trans, lat) == pytest.approx(-(1 - P_NEAR) - 2 * P_NEAR, abs=1e-12)
    assert expected_reward(TIME, s, 3, trans, lat) == pytest.approx(-1, abs=1e-12)


def test_invalid_states():
    lat = Lattice(3, 3, GridPos(0, 0), frozenset({GridPos(1, 1)}))
    for s in (FullState(5), FullState(2, (2,)), FullState(2, (4, 3)), FullState(2, (5,))):
        with pytest.raises(InvalidStateError):
            s.validate(lat)


@st.composite
def small_states(draw):
    w, h = draw(st.integers(1, 4)), draw(st.integers(1, 4))
    cells = [GridPos(c, r) for r in range(h) for c in range(w)]
    ex = draw(st.sampled_from(cells))
    blocked = draw(st.sets(st.sampled_from(cells), max_size=3)) - {ex}
    lat = Lattice(w, h, ex, frozenset(blocked), draw(st.sampled_from(["chebyshev", "euclidean"])))
    free = list(lat.free_cells)
    picks = draw(st.permutations(free))[: draw(st.integers(1, min(4, len(free))))]
    return lat, FullState.of(picks[0], picks[1:]), draw(st.sampled_from(ACTIONS))


@given(small_states())
@settings(max_examples=150, deadline=None)
def test_full_transition_matches_brute_force(inst):
    lat, s, a = inst
    got = full_transition(s, a, lat, build_static_field(lat))
    ref = full_distribution(s, a, lat)
    assert abs(math.fsum(got.values()) - 1) <= 1e-12
    assert set(got) == set(ref)
    assert all(abs(got[k] - ref[k]) <= 1e-12 for k in ref)


def test_dense_state_count():
    lat = Lattice(3, 3, GridPos(0, 0))
    assert dense_state_count(lat, 1) == 9 + 9 * 8
    assert len(dense_states(lat, 2)) == dense_state_count(lat, 2)


def test_horizon_one_has_no_decisions(grid3):
    lat, field = grid3
    sol = backward_induction(lat, field, TIME, 1, FullState(9))
    assert len(sol.policy) == 0
    assert sol.values(1, FullState(9)) == -4


def empty_crowd_dp(lat, model, horizon):
    """Values of the particle-free problem computed on cells directly."""
    free = set(lat.free_cells)
    w = lat.width
    ex = lat.exit[1] * w + lat.exit[0] + 1

    def moves(c):
        col, row = (c - 1) % w, (c - 1) // w
        out = {1: c}
        for a, (dc, dr) in ACTION_OFFSETS.items():
            cc, rr = col + dc, row + dr
            n = rr * w + cc + 1
            if a != 1 and 0 <= cc < w and 0 <= rr < lat.height and n in free:
                out[a] = n
        return out

    def s_of(c):
        return lat.dist(GridPos((c - 1) % w, (c - 1) // w), lat.exit)

    v = {c: -model.terminal_factor * s_of(c) for c in free}
    for _ in range(horizon - 1):
        new = {}
        for c in free:
            if c == ex:
                new[c] = 0.0
                continue
            opts = moves(c)
            new[c] = max(
                (-0.5 if model.kind == "co" and a == 1 else -1.0) + v[opts.get(a, c)] for a in ACTIONS
            )
        v = new
    return v


@pytest.mark.parametrize("model", [TIME, CO])
def test_empty_crowd_matches_cell_dp(model):
    lat = Lattice(4, 4, GridPos(0, 0), frozenset({GridPos(1, 1), GridPos(2, 1)}))
    field = build_static_field(lat)
    sol = backward_induction(lat, field, model, 5, n_particles=0)
    ref = empty_crowd_dp(lat, model, 5)
    for c in lat.free_cells:
        assert sol.values(1, FullState(c)) == pytest.approx(ref[c], abs=1e-12)
    assert brute_force_value(lat, field, model, 5, FullState(16)) == pytest.approx(ref[16], abs=1e-12)


@pytest.mark.parametrize("horizon", [1, 2, 3, 4, 6])
def test_empty_crowd_shortest_path(grid4, horizon):
    lat, field = grid4
    sol = backward_induction(lat, field, TIME, horizon, n_particles=0)
    for c in lat.free_cells:
        d = field[c]
        expected = -min(horizon - 1, d) - 2 * max(0, d - (horizon - 1))
        assert sol.values(1, FullState(c)) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("model,per_step", [(TIME, -1.0), (CO, -0.5)])
def test_always_stay_closed_form(grid3, model, per_step):
    lat, field = grid3
    T = 4
    states = dense_states(lat, 0)
    stay = Policy({(t, s): 1 for t in range(1, T) for s in states})
    ev = evaluate_policy(stay, lat, field, model, T, FullState(9))
    assert ev.expected_total_reward == pytest.approx(per_step * (T - 1) - 4, abs=1e-12)
    assert ev.expected_steps_to_exit == pytest.approx(T - 1, abs=1e-12)
    assert ev.expected_lost_conflicts == 0


@pytest.mark.parametrize("model", [TIME, CO])
def test_evaluation_of_optimal_policy_equals_value(grid3, model):
    lat, field = grid3
    s0 = FullState(9, (5,))
    sol = backward_induction(lat, field, model, 5, s0, state_space="reachable")
    ev = evaluate_policy(sol.policy, lat, field, model, 5, s0, sol.cache)
    assert ev.expected_total_reward == pytest.approx(sol.values(1, s0), abs=1e-9)


def test_dense_and_reachable_agree(grid3):
    lat, field = grid3
    s0 = FullState(9, (4, 5))
    dense = backward_induction(lat, field, CO, 4, s0, state_space="dense")
    reach = backward_induction(lat, field, CO, 4, s0, state_space="reachable")
    for (t, s), a in reach.policy.decisions.items():
        assert dense.policy(t, s) == a
        assert dense.values(t, s) == pytest.approx(reach.values(t, s), abs=1e-12)


def test_bellman_residual_small(grid3):
    lat, field = grid3
    sol = backward_induction(lat, field, CO, 4, n_particles=2)
    for (t, s), a in sol.policy.decisions.items():
        q = q_values(t, s, CO, lat, sol.cache, sol.values)
        assert abs(sol.values(t, s) - max(q)) <= 1e-12
        assert q[a - 1] >= max(q) - 1e-12


def test_ties_go_to_smallest_action(grid3):
    lat, field = grid3
    # from cell 3 both "left" (2) and "down-left" (9) reach a cell with S = 1
    sol = backward_induction(lat, field, TIME, 2, n_particles=0)
    assert sol.policy(1, FullState(3)) == 2
    assert sol.policy(1, FullState(1)) == 1
    again = backward_induction(lat, field, TIME, 2, n_particles=0)
    assert again.policy.decisions == sol.policy.decisions


@dataclass(frozen=True)
class Shifted(RewardModel):
    shift: float = 0.0
    scale: float = 1.0
    at: int = 2

    def local(self, s, a, s_next, lattice, t=None):
        base = super().local(s, a, s_next, lattice, t)
        return self.scale * base + (self.shift if t == self.at else 0.0)

    def terminal(self, s, lattice, field):
        return self.scale * super().terminal(s, lattice, field)


@pytest.mark.parametrize("shift,scale", [(7.5, 1.0), (-3.0, 2.5)])
def test_affine_reward_changes_keep_policy(grid3, shift, scale):
    lat, field = grid3
    base = backward_induction(lat, field, CO, 5, n_particles=1)
    moved = backward_induction(lat, field, Shifted("co", shift=shift, scale=scale), 5, n_particles=1)
    assert moved.policy.decisions == base.policy.decisions
    s = FullState(9, (5,))
    assert moved.values(1, s) == pytest.approx(scale * base.values(1, s) + shift, abs=1e-9)


def test_capacity_error(grid4):
    lat, field = grid4
    with pytest.raises(CapacityError) as err:
        backward_induction(lat, field, TIME, 3, n_particles=2, state_space="dense", cap=100)
    assert err.value.required == dense_state_count(lat, 2)
    with pytest.raises(CapacityError):
        backward_induction(lat, field, TIME, 6, FullState(16, (6, 11)), state_space="reachable", cap=20)


def test_missing_decision():
    with pytest.raises(PolicyError, match="epoch 3"):
        Policy()(3, FullState(4, (2,)))


def test_brute_force_node_cap(grid3):
    lat, field = grid3
    with pytest.raises(CapacityError):
        brute_force_value(lat, field, TIME, 4, FullState(9, (5,)), max_nodes=100)


def test_policy_json_roundtrip(grid3):
    lat, field = grid3
    sol = backward_induction(lat, field, CO, 3, FullState(9, (5,)), state_space="reachable")
    data = json.loads(dump_policy(sol, {"note": 1}))
    assert data["T"] == 3 and data["reward"] == "co" and data["note"] == 1
    assert policy_from_dict(data).decisions == sol.policy.decisions


def test_transition_cache_is_sorted(grid3):
    lat, field = grid3
    cache = TransitionCache(lat, field)
    out = cache.full(FullState(9, (5,)), 3)
    assert [s for s, _ in out] == sorted(s for s, _ in out)
    assert cache.full(FullState(9, (5,)), 3) is out
