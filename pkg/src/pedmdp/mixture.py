"""Mixture approximation of the crowd decision rule.

The decision probability given the six-sector state is approximated by

    p(a | s) = sum_y alpha[y] * theta[y][a, s[y]]

with one 7x2 table per sector. Parameters are tracked by Dirichlet
pseudo-counts updated one observation at a time (quasi-Bayes), with
exponential forgetting that pulls the statistics back towards the prior.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .neighborhood import Observation, SectorState
from .trajectory import MOVING, ActionLabel

N_SECTORS = 6
N_ACTIONS = 7

DEFAULT_PRIOR_STRENGTH = 1.0
DEFAULT_LAMBDA = 0.99


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureModel:
    alpha: np.ndarray  # (6,)
    theta: np.ndarray  # (6, 7, 2): theta[y, a, v]

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if alpha.shape != (N_SECTORS,) or theta.shape != (N_SECTORS, N_ACTIONS, 2):
            raise EstimationError("alpha must be (6,) and theta (6, 7, 2)")
        if np.any(alpha < 0) or np.any(theta < 0):
            raise EstimationError("weights and tables must be non-negative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls) -> "MixtureModel":
        return cls(np.full(N_SECTORS, 1 / N_SECTORS), np.full((N_SECTORS, N_ACTIONS, 2), 1 / N_ACTIONS))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "theta": self.theta.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureModel":
        return cls(np.array(data["alpha"]), np.array(data["theta"]))


@dataclass(frozen=True)
class EstimatorState:
    """Dirichlet pseudo-counts of the tables and of the component weights."""

    dirichlet: np.ndarray  # (6, 7, 2)
    kappa: np.ndarray  # (6,)
    lam: float
    prior_dirichlet: np.ndarray
    prior_kappa: np.ndarray
    # components that take part in the mixture; the others get zero weight
    active: tuple[bool, ...] = (True,) * N_SECTORS
    n_updates: int = 0


def init_prior(prior_strength: float = DEFAULT_PRIOR_STRENGTH, lam: float = DEFAULT_LAMBDA,
               active: Sequence[bool] | None = None) -> EstimatorState:
    if prior_strength <= 0:
        raise EstimationError("prior_strength must be positive")
    if not 0 < lam <= 1:
        raise EstimationError("forgetting factor must lie in (0, 1]")
    active = tuple(bool(a) for a in (active if active is not None else (True,) * N_SECTORS))
    if len(active) != N_SECTORS or not any(active):
        raise EstimationError("active mask needs 6 entries, at least one True")
    v0 = np.full((N_SECTORS, N_ACTIONS, 2), prior_strength / N_ACTIONS)
    k0 = np.full(N_SECTORS, float(prior_strength))
    return EstimatorState(v0.copy(), k0.copy(), float(lam), v0, k0, active)


def _weights(state: EstimatorState) -> np.ndarray:
    mask = np.array(state.active, dtype=float)
    k = state.kappa * mask
    return k / k.sum()


def responsibilities(state: EstimatorState, obs: Observation) -> np.ndarray:
    a = int(obs.action)
    s = np.asarray(obs.state.occ)
    ys = np.arange(N_SECTORS)
    cell = state.dirichlet[ys, a, s]
    col = state.dirichlet[ys, :, s].sum(axis=1)
    w = _weights(state) * cell / col
    return w / w.sum()


def update(state: EstimatorState, obs: Observation) -> EstimatorState:
    """One quasi-Bayes step with forgetting towards the prior."""
    w = responsibilities(state, obs)
    lam = state.lam
    v = lam * state.dirichlet + (1 - lam) * state.prior_dirichlet
    k = lam * state.kappa + (1 - lam) * state.prior_kappa
    ys = np.arange(N_SECTORS)
    v[ys, int(obs.action), np.asarray(obs.state.occ)] += w
    k = k + w
    return replace(state, dirichlet=v, kappa=k, n_updates=state.n_updates + 1)


def point_estimate(state: EstimatorState) -> MixtureModel:
    theta = state.dirichlet / state.dirichlet.sum(axis=1, keepdims=True)
    return MixtureModel(_weights(state), theta)


def predict(model: MixtureModel, s: SectorState | Sequence[int]) -> np.ndarray:
    """Distribution over the seven actions for sector state ``s``."""
    occ = np.asarray(s.occ if isinstance(s, SectorState) else s, dtype=int)
    cols = model.theta[np.arange(N_SECTORS), :, occ]  # (6, 7)
    return model.alpha @ cols


def fit(observations: Iterable[Observation], prior_strength: float = DEFAULT_PRIOR_STRENGTH,
        lam: float = DEFAULT_LAMBDA, active: Sequence[bool] | None = None) -> MixtureModel:
    """Fold ``update`` over the observations in the given order."""
    state = init_prior(prior_strength, lam, active)
    for obs in observations:
        state = update(state, obs)
    if state.n_updates == 0:
        raise EstimationError("no observations to fit")
    return point_estimate(state)


def report_rows(model: MixtureModel) -> list[list[str]]:
    """Table of sector weights and per-sector decision tables.

    One column pair (empty, occupied) per sector, an alpha row, then one row
    per action.
    """
    header = ["y"]
    for label in MOVING:
        header += [f"{label.name}:empty", f"{label.name}:occupied"]
    rows = [header]
    alpha_row = ["alpha"]
    for y in range(N_SECTORS):
        alpha_row += [f"{model.alpha[y]:.4f}", ""]
    rows.append(alpha_row)
    for a in ActionLabel:
        row = [a.name]
        for y in range(N_SECTORS):
            row += [f"{model.theta[y, a, 0]:.4f}", f"{model.theta[y, a, 1]:.4f}"]
        rows.append(row)
    return rows


def render_report(model: MixtureModel) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(report_rows(model))
    return buf.getvalue()


def dump_model(model: MixtureModel, extra: dict | None = None) -> str:
    data = model.to_dict()
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
