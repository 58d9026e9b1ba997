"""Offline demonstration data: scripted expert, near-random general data, file I/O."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from skillprior import env as E
from skillprior.core import ConfigurationError, ContractViolation, Rng, Trajectory

FORMAT_VERSION = 1
KINDS = ("expert", "general")
GENERAL_RATIO = 10

EXPERT_NOISE_STD = 0.05
STEER_GAIN = 4.0
SPEED_GAIN = 1.5
MOMENTUM = 0.8
RANDOM_SCALE = 0.6
SEGMENT_PROB = 0.1
SEGMENT_LEN = 5
# general rollouts are cut short; at full episode length the scripted segments alone
# drive the random walk to the goal almost every time
GENERAL_EPISODE_STEPS = 60


class DatasetError(Exception):
    """Base class for dataset file errors."""


class MalformedDatasetError(DatasetError):
    pass


class SpecMismatchError(DatasetError):
    pass


class VersionMismatchError(DatasetError):
    pass


@dataclass
class DemoDataset:
    spec: E.EnvSpec
    kind: str
    trajectories: List[Trajectory] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"dataset kind must be one of {KINDS}, got {self.kind!r}")

    def __len__(self) -> int:
        return len(self.trajectories)


def expert_waypoint(spec: E.EnvSpec, s: E.EnvState) -> np.ndarray:
    """Next point to steer toward, chosen from the agent's region only."""
    if spec.name == "chained_targets":
        return E.CHAIN_TARGETS[min(s.subtasks_done, E.N_SUBTASKS - 1)]
    x, y = s.agent_position
    wall_top = max(w[3] for w in E.MAZE_WALLS)
    gap_x = max(w[2] for w in E.MAZE_WALLS)
    if y > wall_top + 0.1:
        return E.MAZE_GOAL
    if x < gap_x + 0.4:
        return np.array([gap_x + 0.9, 1.7])
    return np.array([gap_x + 0.9, wall_top + 0.7])


def expert_action(spec: E.EnvSpec, s: E.EnvState) -> np.ndarray:
    """Noise-free steering: velocity error feedback toward a position-proportional target velocity."""
    delta = expert_waypoint(spec, s) - s.agent_position
    v_des = SPEED_GAIN * delta
    norm = np.linalg.norm(v_des)
    if norm > E.MAX_SPEED:
        v_des *= E.MAX_SPEED / norm
    return np.clip(STEER_GAIN * (v_des - s.agent_velocity), -1.0, 1.0)


def _rollout(spec: E.EnvSpec, policy, rng: Rng, max_steps: Optional[int] = None) -> Trajectory:
    s = E.reset(spec, rng.child("reset"))
    act_rng = rng.child("policy")
    states, actions, rewards = [E.observe(spec, s)], [], []
    limit = spec.max_episode_steps if max_steps is None else max_steps
    while not s.done and len(actions) < limit:
        a = policy(s, act_rng)
        s, r, _ = E.step(spec, s, a)
        states.append(E.observe(spec, s))
        actions.append(a)
        rewards.append(r)
    return Trajectory(np.array(states), np.array(actions), np.array(rewards))


def _expert_policy(spec: E.EnvSpec):
    def act(s, rng):
        a = expert_action(spec, s) + EXPERT_NOISE_STD * rng.generator.standard_normal(spec.action_dim)
        return np.clip(a, -1.0, 1.0)

    return act


def _general_policy(spec: E.EnvSpec):
    expert = _expert_policy(spec)
    mem = {"prev": np.zeros(spec.action_dim), "segment": 0}

    def act(s, rng):
        u = rng.uniform(-1.0, 1.0, spec.action_dim)
        start_segment = rng.random() < SEGMENT_PROB
        if mem["segment"] == 0 and start_segment:
            mem["segment"] = SEGMENT_LEN
        if mem["segment"] > 0:
            mem["segment"] -= 1
            a = expert(s, rng)
        else:
            a = np.clip(MOMENTUM * mem["prev"] + RANDOM_SCALE * u, -1.0, 1.0)
        mem["prev"] = a
        return a

    return act


def generate_expert(spec: E.EnvSpec, n: int, rng: Rng, keep_rewards: bool = False) -> DemoDataset:
    """``n`` scripted-expert trajectories, each achieving the maximum return."""
    if n < 1:
        raise ContractViolation(f"n must be >= 1, got {n}")
    trajs: List[Trajectory] = []
    attempt = 0
    while len(trajs) < n and attempt < 2 * n:
        traj = _rollout(spec, _expert_policy(spec), rng.child(f"expert-{attempt}"))
        attempt += 1
        if traj.rewards.sum() >= spec.max_return:
            trajs.append(traj if keep_rewards else traj.strip_rewards())
    if len(trajs) < n:
        raise ConfigurationError(
            f"scripted expert reached max return in only {len(trajs)}/{attempt} attempts on {spec.name}"
        )
    return DemoDataset(spec, "expert", trajs)


def generate_general(spec: E.EnvSpec, n_expert: int, rng: Rng, keep_rewards: bool = False) -> DemoDataset:
    """``10 * n_expert`` trajectories from a momentum random walk with short scripted segments."""
    if n_expert < 1:
        raise ContractViolation(f"n_expert must be >= 1, got {n_expert}")
    trajs = []
    for i in range(GENERAL_RATIO * n_expert):
        traj = _rollout(spec, _general_policy(spec), rng.child(f"general-{i}"), GENERAL_EPISODE_STEPS)
        trajs.append(traj if keep_rewards else traj.strip_rewards())
    return DemoDataset(spec, "general", trajs)


def replay(spec: E.EnvSpec, traj: Trajectory) -> Trajectory:
    """Re-execute recorded actions from the recorded start state."""
    s = E.state_from_observation(spec, traj.states[0])
    states, rewards = [E.observe(spec, s)], []
    for a in traj.actions:
        s, r, _ = E.step(spec, s, a)
        states.append(E.observe(spec, s))
        rewards.append(r)
    return Trajectory(np.array(states), traj.actions, np.array(rewards))


def save_dataset(ds: DemoDataset, path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "env": ds.spec.to_dict(),
        "kind": ds.kind,
        "count": len(ds.trajectories),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        f.write(json.dumps(header) + "\n")
        for t in ds.trajectories:
            f.write(json.dumps({"states": t.states.tolist(), "actions": t.actions.tolist()}) + "\n")
    os.replace(tmp, path)


def load_dataset(path, expected_spec: Optional[E.EnvSpec] = None) -> DemoDataset:
    with open(path) as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedDatasetError(f"{path}: empty file, no header")
    try:
        header = json.loads(lines[0])
        version = header["format_version"]
        env_d, kind, count = header["env"], header["kind"], int(header["count"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise MalformedDatasetError(f"{path}: bad header ({exc})") from None
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format_version {version}, expected {FORMAT_VERSION}")
    try:
        spec = E.EnvSpec.from_dict(env_d)
    except TypeError as exc:
        raise MalformedDatasetError(f"{path}: bad env header ({exc})") from None
    known = E.SPECS.get(spec.name)
    if known != spec:
        raise SpecMismatchError(f"{path}: header env {env_d} does not match a known environment spec")
    if expected_spec is not None and spec != expected_spec:
        raise SpecMismatchError(f"{path}: dataset is for {spec.name}, expected {expected_spec.name}")
    if kind not in KINDS:
        raise MalformedDatasetError(f"{path}: unknown kind {kind!r}")
    if len(lines) - 1 != count:
        raise MalformedDatasetError(f"{path}: header promises {count} trajectories, found {len(lines) - 1}")
    trajs = []
    for i, line in enumerate(lines[1:], start=1):
        try:
            rec = json.loads(line)
            states = np.array(rec["states"], dtype=np.float64)
            actions = np.array(rec["actions"], dtype=np.float64)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedDatasetError(f"{path}: record {i} unreadable ({exc})") from None
        if actions.size == 0:
            actions = actions.reshape(0, spec.action_dim)
        if states.ndim != 2 or states.shape[1] != spec.state_dim or actions.shape[1:] != (spec.action_dim,):
            raise SpecMismatchError(f"{path}: record {i} dimensions disagree with {spec.name}")
        try:
            trajs.append(Trajectory(states, actions))
        except ContractViolation as exc:
            raise MalformedDatasetError(f"{path}: record {i}: {exc}") from None
    return DemoDataset(spec, kind, trajs)
