"""Shared types, diagonal-Gaussian math, skill windowing and seeded RNG streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0

DTYPE = torch.float64


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shape, range, state)."""


class ConfigurationError(RuntimeError):
    """Constants or settings are mutually inconsistent."""


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over the last axis; leading axes are batch axes."""

    mean: torch.Tensor
    log_std: torch.Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.log_std = as_tensor(self.log_std)
        if self.mean.shape != self.log_std.shape:
            raise ContractViolation(
                f"mean shape {tuple(self.mean.shape)} != log_std shape {tuple(self.log_std.shape)}"
            )

    @classmethod
    def from_head(cls, out: torch.Tensor) -> "DiagGaussian":
        """Split a network output ``[..., 2*d]`` into mean and clamped log-std."""
        mean, log_std = out.chunk(2, dim=-1)
        return cls(mean, log_std.clamp(LOG_STD_MIN, LOG_STD_MAX))

    @classmethod
    def standard(cls, shape, dtype=DTYPE) -> "DiagGaussian":
        z = torch.zeros(shape, dtype=dtype)
        return cls(z, z.clone())

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    @property
    def std(self) -> torch.Tensor:
        return self.log_std.exp()

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(self.mean.detach(), self.log_std.detach())

    def log_prob(self, x: torch.Tensor) -> torch.Tensor:
        var = torch.exp(2 * self.log_std)
        return (
            -0.5 * (x - self.mean) ** 2 / var - self.log_std - 0.5 * np.log(2 * np.pi)
        ).sum(-1)


def kl_diag_gaussian(p: DiagGaussian, q: DiagGaussian) -> torch.Tensor:
    """Closed-form KL(p || q) summed over the last axis.

    Returns a 0-d tensor for unbatched inputs, else one value per batch row.
    """
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ContractViolation(f"KL dimension mismatch: {p.dim} vs {q.dim}")
    var_ratio = torch.exp(2 * (p.log_std - q.log_std))
    mahal = (p.mean - q.mean) ** 2 * torch.exp(-2 * q.log_std)
    return 0.5 * (var_ratio + mahal - 1.0).sum(-1) + (q.log_std - p.log_std).sum(-1)


def reparam_sample(g: DiagGaussian, noise) -> torch.Tensor:
    """``mean + exp(log_std) * noise``; differentiable in the Gaussian's fields."""
    noise = as_tensor(noise).to(g.mean.dtype)
    if noise.shape[-1] != g.mean.shape[-1]:
        raise ContractViolation(
            f"noise dimension {noise.shape[-1]} != distribution dimension {g.dim}"
        )
    return g.mean + g.std * noise


@dataclass
class Trajectory:
    states: np.ndarray  # (T+1, state_dim)
    actions: np.ndarray  # (T, action_dim)
    rewards: Optional[np.ndarray] = None  # (T,) or None for demonstrations

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ContractViolation("states and actions must be 2-d arrays")
        if len(self.states) != len(self.actions) + 1:
            raise ContractViolation(
                f"|states| = {len(self.states)} must equal |actions| + 1 = {len(self.actions) + 1}"
            )
        if self.rewards is not None:
            self.rewards = np.asarray(self.rewards, dtype=np.float64)
            if self.rewards.shape != (len(self.actions),):
                raise ContractViolation("rewards must have one entry per action")

    def __len__(self) -> int:
        return len(self.actions)

    def strip_rewards(self) -> "Trajectory":
        return Trajectory(self.states, self.actions, None)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        same_rewards = (self.rewards is None and other.rewards is None) or (
            self.rewards is not None
            and other.rewards is not None
            and np.array_equal(self.rewards, other.rewards)
        )
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and same_rewards
        )


@dataclass
class SkillWindow:
    start_state: np.ndarray  # (state_dim,)
    actions: np.ndarray  # (H, action_dim)


def extract_windows(traj: Trajectory, H: int) -> List[SkillWindow]:
    """Every length-``H`` action window with its start state; empty if too short."""
    if H < 1:
        raise ContractViolation(f"horizon must be >= 1, got {H}")
    n = len(traj.actions) - H + 1
    return [SkillWindow(traj.states[t], traj.actions[t : t + H]) for t in range(max(0, n))]


def window_arrays(trajs: Sequence[Trajectory], H: int):
    """Stack all windows of ``trajs`` into ``(starts (N, sd), windows (N, H, ad))``."""
    starts, windows = [], []
    for traj in trajs:
        n = len(traj.actions) - H + 1
        if n <= 0:
            continue
        idx = np.arange(n)[:, None] + np.arange(H)[None, :]
        windows.append(traj.actions[idx])
        starts.append(traj.states[:n])
    if not windows:
        return np.zeros((0, 0)), np.zeros((0, H, 0))
    return np.concatenate(starts), np.concatenate(windows)


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


class Rng:
    """Seeded sample stream that can be split into independent labeled children.

    A child's stream depends only on the root seed and the label path, never
    on how much the parent has already been consumed.
    """

    def __init__(self, seed: int, path: Sequence[str] = ()):
        self.seed = int(seed)
        self.path = tuple(str(p) for p in path)
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=tuple(_label_key(p) for p in self.path)
        )
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, label) -> "Rng":
        return Rng(self.seed, self.path + (str(label),))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    def normal(self, shape) -> torch.Tensor:
        return torch.from_numpy(self.generator.standard_normal(shape))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def random(self) -> float:
        return float(self.generator.random())

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def torch_generator(self) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(int(self.generator.integers(0, 2**63 - 1)))
        return g
