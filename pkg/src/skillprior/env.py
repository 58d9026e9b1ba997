"""Desk-scale sparse-reward point-mass environments.

``point_maze``: reach a goal on the far side of a wall (reward 1 once, then done).
``chained_targets``: visit four targets in a fixed order (reward 1 per target).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from skillprior.core import ContractViolation, Rng

ARENA_SIZE = 5.0
DT = 0.1
MAX_SPEED = 1.0
START_NOISE_RADIUS = 0.1

MAZE_START = np.array([1.0, 1.0])
MAZE_GOAL = np.array([1.0, 4.0])
GOAL_RADIUS = 0.2
# (x0, y0, x1, y1); one wall leaves a gap on the right, giving a lower and an upper corridor
MAZE_WALLS = ((0.0, 2.4, 3.0, 2.6),)

CHAIN_START = np.array([1.0, 1.0])
CHAIN_TARGETS = np.array([[1.0, 4.0], [4.0, 4.0], [4.0, 1.0], [2.5, 2.5]])
TARGET_RADIUS = 0.3
N_SUBTASKS = len(CHAIN_TARGETS)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    max_episode_steps: int
    max_return: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EnvSpec":
        return cls(**d)


POINT_MAZE = EnvSpec("point_maze", state_dim=4, action_dim=2, max_episode_steps=300, max_return=1.0)
CHAINED_TARGETS = EnvSpec(
    "chained_targets", state_dim=4 + N_SUBTASKS + 1, action_dim=2, max_episode_steps=500, max_return=4.0
)
SPECS = {s.name: s for s in (POINT_MAZE, CHAINED_TARGETS)}


def make_spec(name: str) -> EnvSpec:
    try:
        return SPECS[name]
    except KeyError:
        raise ContractViolation(f"unknown environment {name!r}; choose from {sorted(SPECS)}") from None


@dataclass
class EnvState:
    agent_position: np.ndarray
    agent_velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    subtasks_done: int = 0
    steps_elapsed: int = 0
    done: bool = False


def nominal_start(spec: EnvSpec) -> np.ndarray:
    return (MAZE_START if spec.name == "point_maze" else CHAIN_START).copy()


def reset(spec: EnvSpec, rng: Rng) -> EnvState:
    """Start near the nominal start, uniformly inside a disc of radius 0.1."""
    r = START_NOISE_RADIUS * np.sqrt(rng.random())
    theta = 2 * np.pi * rng.random()
    pos = nominal_start(spec) + r * np.array([np.cos(theta), np.sin(theta)])
    return EnvState(agent_position=pos)


def observe(spec: EnvSpec, s: EnvState) -> np.ndarray:
    obs = [s.agent_position / ARENA_SIZE, s.agent_velocity]
    if spec.name == "chained_targets":
        onehot = np.zeros(N_SUBTASKS + 1)
        onehot[s.subtasks_done] = 1.0
        obs.append(onehot)
    return np.concatenate(obs)


def state_from_observation(spec: EnvSpec, obs: np.ndarray, steps_elapsed: int = 0) -> EnvState:
    obs = np.asarray(obs, dtype=np.float64)
    done = 0
    if spec.name == "chained_targets":
        done = int(np.argmax(obs[4:]))
    return EnvState(obs[:2] * ARENA_SIZE, obs[2:4].copy(), done, steps_elapsed)


def _blocked(p: np.ndarray, spec: EnvSpec) -> bool:
    if spec.name != "point_maze":
        return False
    return any(x0 < p[0] < x1 and y0 < p[1] < y1 for x0, y0, x1, y1 in MAZE_WALLS)


def _move(spec: EnvSpec, pos: np.ndarray, vel: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pos, vel = pos.copy(), vel.copy()
    for axis in (0, 1):
        cand = pos.copy()
        cand[axis] += DT * vel[axis]
        if not 0.0 <= cand[axis] <= ARENA_SIZE:
            cand[axis] = min(max(cand[axis], 0.0), ARENA_SIZE)
            vel[axis] = 0.0
        if _blocked(cand, spec):
            vel[axis] = 0.0
            continue
        pos = cand
    return pos, vel


def step(spec: EnvSpec, s: EnvState, a, rng: Optional[Rng] = None) -> Tuple[EnvState, float, bool]:
    """Advance one step. Deterministic; ``rng`` is accepted for interface symmetry only."""
    if s.done:
        raise ContractViolation("step() called on a finished episode; reset first")
    a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
    if a.shape != (spec.action_dim,):
        raise ContractViolation(f"action shape {a.shape} != ({spec.action_dim},)")
    vel = s.agent_velocity + DT * a
    speed = np.linalg.norm(vel)
    if speed > MAX_SPEED:
        vel = vel * (MAX_SPEED / speed)
    pos, vel = _move(spec, s.agent_position, vel)

    reward, done, subtasks = 0.0, False, s.subtasks_done
    if spec.name == "point_maze":
        if np.linalg.norm(pos - MAZE_GOAL) < GOAL_RADIUS:
            reward, done = 1.0, True
    else:
        if np.linalg.norm(pos - CHAIN_TARGETS[subtasks]) < TARGET_RADIUS:
            reward, subtasks = 1.0, subtasks + 1
            done = subtasks == N_SUBTASKS
    steps = s.steps_elapsed + 1
    done = done or steps >= spec.max_episode_steps
    return replace(s, agent_position=pos, agent_velocity=vel, subtasks_done=subtasks,
                   steps_elapsed=steps, done=done), reward, done


class Env:
    """Stateful wrapper emitting observations; single-owner."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.state: Optional[EnvState] = None

    def reset(self, rng: Rng) -> np.ndarray:
        self.state = reset(self.spec, rng)
        return observe(self.spec, self.state)

    def step(self, a) -> Tuple[np.ndarray, float, bool]:
        if self.state is None:
            raise ContractViolation("step() before reset()")
        self.state, r, done = step(self.spec, self.state, a)
        return observe(self.spec, self.state), r, done
