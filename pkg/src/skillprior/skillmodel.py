"""Skill latent-variable model: action-window encoder, decoder, and state-conditioned prior."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from skillprior.core import DTYPE, ContractViolation, DiagGaussian, Rng, as_tensor, kl_diag_gaussian, reparam_sample
from skillprior.nets import GaussianHead, load_arrays, mlp, state_arrays


class SkillModel(nn.Module):
    """Encoder q(z | a_{t:t+H-1}), tanh decoder a_hat(z), and prior q(z | s_t)."""

    def __init__(self, state_dim: int, action_dim: int, horizon: int = 10, skill_dim: int = 10,
                 hidden: Sequence[int] = (128, 128), rng: Optional[Rng] = None):
        super().__init__()
        rng = rng or Rng(0)
        self.state_dim, self.action_dim = state_dim, action_dim
        self.horizon, self.skill_dim = horizon, skill_dim
        self.hidden = tuple(hidden)
        self.encoder_net = GaussianHead(horizon * action_dim, skill_dim, hidden, rng.child("encoder"))
        self.decoder_net = mlp(skill_dim, horizon * action_dim, hidden, rng.child("decoder"))
        self.prior_net = GaussianHead(state_dim, skill_dim, hidden, rng.child("prior"))

    def meta(self) -> dict:
        return {"state_dim": self.state_dim, "action_dim": self.action_dim, "horizon": self.horizon,
                "skill_dim": self.skill_dim, "hidden": list(self.hidden)}

    def encode(self, windows) -> DiagGaussian:
        w = as_tensor(windows)
        if w.shape[-2:] != (self.horizon, self.action_dim):
            raise ContractViolation(
                f"window shape {tuple(w.shape[-2:])} != ({self.horizon}, {self.action_dim})")
        return self.encoder_net(w.flatten(-2))

    def decode(self, z) -> torch.Tensor:
        z = as_tensor(z)
        if z.shape[-1] != self.skill_dim:
            raise ContractViolation(f"skill dimension {z.shape[-1]} != {self.skill_dim}")
        out = torch.tanh(self.decoder_net(z))
        return out.unflatten(-1, (self.horizon, self.action_dim))

    def prior(self, states) -> DiagGaussian:
        s = as_tensor(states)
        if s.shape[-1] != self.state_dim:
            raise ContractViolation(f"state dimension {s.shape[-1]} != {self.state_dim}")
        return self.prior_net(s)

    def generator_parameters(self):
        return self.parameters()

    def arrays(self, prefix: str = "skill.") -> dict:
        return state_arrays(self, prefix)

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict, prefix: str = "skill.") -> "SkillModel":
        model = cls(meta["state_dim"], meta["action_dim"], meta["horizon"], meta["skill_dim"], meta["hidden"])
        load_arrays(model, arrays, prefix)
        return model


def reconstruction_error(model: SkillModel, windows: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Mean squared error over batch, steps and action components."""
    return ((model.decode(z) - windows) ** 2).mean()


def sde_perturb(z: torch.Tensor, eta: float, noise: torch.Tensor) -> torch.Tensor:
    """Skill-level augmentation: ``z + eta * noise``."""
    return z + eta * noise


def loss_rec(model: SkillModel, windows, rng: Rng) -> torch.Tensor:
    w = as_tensor(windows)
    post = model.encode(w)
    z = reparam_sample(post, rng.normal(post.mean.shape))
    return reconstruction_error(model, w, z)


def loss_rec_sde(model: SkillModel, windows, eta: float, rng: Rng) -> torch.Tensor:
    """Reconstruction from a perturbed posterior sample.

    Draws the posterior noise exactly as :func:`loss_rec` does, then the
    perturbation, so ``eta = 0`` reproduces ``loss_rec`` for the same stream.
    """
    w = as_tensor(windows)
    post = model.encode(w)
    z = reparam_sample(post, rng.normal(post.mean.shape))
    z_hat = sde_perturb(z, eta, rng.normal(post.mean.shape))
    return reconstruction_error(model, w, z_hat)


def loss_prior(model: SkillModel, states, windows, stop_grad: bool = True) -> torch.Tensor:
    post = model.encode(windows)
    if stop_grad:
        post = post.detach()
    return kl_diag_gaussian(post, model.prior(states)).mean()


def loss_reg(model: SkillModel, windows) -> torch.Tensor:
    post = model.encode(windows)
    return kl_diag_gaussian(post, DiagGaussian.standard(post.mean.shape, post.mean.dtype)).mean()


def to_batch(x: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64)).to(DTYPE)
