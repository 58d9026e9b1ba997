"""Skill-level adversarial positive-unlabeled learning and the offline prior-training loop.

Expert skills are positives, general-data skills are unlabeled. The
discriminator minimizes the non-negative PU risk; the encoder maximizes it
through the ``-rho * risk`` term of the generator objective.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from skillprior import env as E
from skillprior.checkpoint import CheckpointMismatchError, load_checkpoint, save_checkpoint
from skillprior.config import TrainConfig
from skillprior.core import ContractViolation, Rng, as_tensor, reparam_sample, window_arrays
from skillprior.demos import DemoDataset
from skillprior.nets import load_arrays, mlp, state_arrays
from skillprior.skillmodel import (
    SkillModel,
    kl_diag_gaussian,
    reconstruction_error,
    sde_perturb,
    to_batch,
)

log = logging.getLogger(__name__)

PROB_EPS = 1e-6
PRIOR_LOG_COLUMNS = ("step", "L_rec", "L_prior", "L_reg", "L_rec_sde", "L_pu", "D_pos_mean", "D_unl_mean")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PuConfig:
    prior: float = 0.5  # lambda
    slack: float = 0.0  # xi
    weight: float = 0.1  # rho

    def __post_init__(self):
        if not 0.0 < self.prior < 1.0:
            raise ContractViolation("PU class prior must lie in (0, 1)")
        if self.slack < 0 or self.weight < 0:
            raise ContractViolation("PU slack and weight must be >= 0")

    @classmethod
    def from_train_config(cls, cfg: TrainConfig) -> "PuConfig":
        return cls(cfg.pu_prior, cfg.pu_slack, cfg.pu_weight)


class Discriminator(nn.Module):
    """Probability that a skill vector is a positive (expert) skill.

    The sigmoid is squashed affinely into ``(eps, 1 - eps)`` so every log term
    stays finite and gradients never vanish at the bound.
    """

    def __init__(self, skill_dim: int, hidden=(256, 256), rng: Optional[Rng] = None, eps: float = PROB_EPS):
        super().__init__()
        self.skill_dim, self.hidden, self.eps = skill_dim, tuple(hidden), eps
        self.net = mlp(skill_dim, 1, hidden, rng or Rng(0), xavier_head=True)

    def logit(self, z) -> torch.Tensor:
        z = as_tensor(z)
        if z.shape[-1] != self.skill_dim:
            raise ContractViolation(f"skill dimension {z.shape[-1]} != {self.skill_dim}")
        return self.net(z).squeeze(-1)

    def prob_from_logit(self, f: torch.Tensor) -> torch.Tensor:
        return self.eps + (1 - 2 * self.eps) * torch.sigmoid(f)

    def forward(self, z) -> torch.Tensor:
        return self.prob_from_logit(self.logit(z))

    def log_probs(self, z) -> Tuple[torch.Tensor, torch.Tensor]:
        """``(log D(z), log(1 - D(z)))``."""
        f = self.logit(z)
        scale = 1 - 2 * self.eps
        return (torch.log(self.eps + scale * torch.sigmoid(f)),
                torch.log(self.eps + scale * torch.sigmoid(-f)))

    def meta(self) -> dict:
        return {"skill_dim": self.skill_dim, "hidden": list(self.hidden)}


def discriminate(disc: Discriminator, z) -> torch.Tensor:
    return disc(z)


def pu_terms(disc: Discriminator, z_pos, z_unl) -> Dict[str, torch.Tensor]:
    z_pos, z_unl = as_tensor(z_pos), as_tensor(z_unl)
    if z_pos.shape[0] == 0 or z_unl.shape[0] == 0:
        raise ContractViolation("pu_risk needs nonempty positive and unlabeled batches")
    log_d_pos, log_1md_pos = disc.log_probs(z_pos)
    log_d_unl, _ = disc.log_probs(z_unl)
    return {"L1_pos": log_1md_pos.mean(), "L0_unl": log_d_unl.mean(), "L0_pos": log_d_pos.mean()}


def pu_risk(disc: Discriminator, z_pos, z_unl, cfg: PuConfig) -> torch.Tensor:
    """``lambda * L1(pos) + max(-xi, L0(unl) - lambda * L0(pos))``.

    ``L1`` averages ``log(1 - D)`` over positives, ``L0`` averages ``log D``.
    """
    t = pu_terms(disc, z_pos, z_unl)
    inner = t["L0_unl"] - cfg.prior * t["L0_pos"]
    return cfg.prior * t["L1_pos"] + torch.clamp(inner, min=-cfg.slack)


def joint_prior_objective(model: SkillModel, disc: Optional[Discriminator], expert_states, expert_windows,
                          general_windows, cfg: TrainConfig, rng: Rng):
    """Return ``(generator objective, discriminator objective, detached terms)``.

    Generator: ``L_rec + L_prior + beta*L_reg + alpha*L_rec_sde - rho*risk``.
    Discriminator: the PU risk on detached skill samples. The SDE and PU terms
    are dropped when ``cfg.sde_skill`` / ``cfg.pu_enabled`` are off; noise is
    drawn in a fixed order either way, so disabling a term never shifts the
    others' samples.
    """
    s, w = as_tensor(expert_states), as_tensor(expert_windows)
    post = model.encode(w)
    noise_pos = rng.normal(post.mean.shape)
    noise_sde = rng.normal(post.mean.shape)
    z = reparam_sample(post, noise_pos)

    l_rec = reconstruction_error(model, w, z)
    l_sde = reconstruction_error(model, w, sde_perturb(z, cfg.sde_scale, noise_sde))
    prior_target = post.detach() if cfg.prior_stop_grad else post
    l_prior = kl_diag_gaussian(prior_target, model.prior(s)).mean()
    l_reg = kl_diag_gaussian(post, type(post).standard(post.mean.shape, post.mean.dtype)).mean()

    gen = l_rec + l_prior + cfg.reg_weight * l_reg
    if cfg.sde_skill:
        gen = gen + cfg.sde_weight * l_sde
    terms = {"L_rec": l_rec, "L_prior": l_prior, "L_reg": l_reg, "L_rec_sde": l_sde}

    disc_obj = None
    if cfg.pu_enabled and disc is not None:
        pu_cfg = PuConfig.from_train_config(cfg)
        post_u = model.encode(as_tensor(general_windows))
        z_u = reparam_sample(post_u, rng.normal(post_u.mean.shape))
        risk = pu_risk(disc, z, z_u, pu_cfg)
        gen = gen - cfg.pu_weight * risk
        disc_obj = pu_risk(disc, z.detach(), z_u.detach(), pu_cfg)
        with torch.no_grad():
            terms["D_pos_mean"] = disc(z).mean()
            terms["D_unl_mean"] = disc(z_u).mean()
        terms["L_pu"] = risk
    return gen, disc_obj, {k: float(v.detach()) for k, v in terms.items()}


@dataclass
class PriorPools:
    expert_states: np.ndarray
    expert_windows: np.ndarray
    general_windows: np.ndarray

    @classmethod
    def from_datasets(cls, expert: DemoDataset, general: DemoDataset, horizon: int) -> "PriorPools":
        es, ew = window_arrays(expert.trajectories, horizon)
        _, gw = window_arrays(general.trajectories, horizon)
        if len(ew) == 0:
            raise ContractViolation("expert dataset yields no skill windows")
        return cls(es, ew, gw)


def build_models(spec_state_dim: int, spec_action_dim: int, cfg: TrainConfig, rng: Rng):
    model = SkillModel(spec_state_dim, spec_action_dim, cfg.horizon, cfg.skill_dim,
                       (cfg.hidden, cfg.hidden), rng.child("skill-model"))
    disc = Discriminator(cfg.skill_dim, (cfg.disc_hidden, cfg.disc_hidden), rng.child("discriminator"))
    return model, disc


def train_prior(expert: DemoDataset, general: DemoDataset, cfg: TrainConfig, rng: Rng,
                log_path=None, steps: Optional[int] = None):
    """Alternate one generator step and one discriminator step per iteration.

    Returns ``(skill model, discriminator, log rows)``; rows are also appended
    to ``log_path`` as CSV when given.
    """
    if len(expert) == 0 or (cfg.pu_enabled and len(general) == 0):
        raise ContractViolation("train_prior needs nonempty expert and general datasets")
    spec = expert.spec
    pools = PriorPools.from_datasets(expert, general, cfg.horizon)
    if cfg.pu_enabled and len(pools.general_windows) == 0:
        raise ContractViolation("general dataset yields no skill windows")
    model, disc = build_models(spec.state_dim, spec.action_dim, cfg, rng)
    opt_g = torch.optim.Adam(model.parameters(), lr=cfg.prior_lr)
    opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.prior_lr)
    n_steps = cfg.prior_steps if steps is None else steps

    expert_rng, general_rng, noise_rng = rng.child("expert-batches"), rng.child("general-batches"), rng.child("noise")
    rows: List[dict] = []
    writer, fh = None, None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=PRIOR_LOG_COLUMNS)
        writer.writeheader()
    try:
        for step in range(n_steps + 1):
            ie = expert_rng.integers(0, len(pools.expert_windows), cfg.prior_batch)
            gw = None
            if cfg.pu_enabled:
                ig = general_rng.integers(0, len(pools.general_windows), cfg.prior_batch)
                gw = to_batch(pools.general_windows[ig])
            gen, disc_obj, terms = joint_prior_objective(
                model, disc, to_batch(pools.expert_states[ie]), to_batch(pools.expert_windows[ie]), gw,
                cfg, noise_rng.child(step))
            for name, v in terms.items():
                if not math.isfinite(v):
                    raise TrainingDiverged(f"non-finite {name} = {v} at prior step {step}")
            if step % cfg.prior_log_every == 0 or step == n_steps:
                row = {"step": step, **{c: terms.get(c, float("nan")) for c in PRIOR_LOG_COLUMNS[1:]}}
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                    fh.flush()
                log.debug("prior step %d: %s", step, row)
            if step == n_steps:
                break  # final row logs the trained model; no update after it
            opt_g.zero_grad()
            gen.backward()
            opt_g.step()
            if disc_obj is not None:
                opt_d.zero_grad()
                disc_obj.backward()
                opt_d.step()
    finally:
        if fh is not None:
            fh.close()
    return model, disc, rows


@torch.no_grad()
def discriminator_scores(model: SkillModel, disc: Discriminator, windows: np.ndarray, rng: Rng) -> np.ndarray:
    """D on one reparameterized posterior sample per window."""
    post = model.encode(to_batch(windows))
    z = reparam_sample(post, rng.normal(post.mean.shape))
    return disc(z).numpy()


def save_prior(path, model: SkillModel, disc: Optional[Discriminator], cfg: TrainConfig, spec: E.EnvSpec) -> str:
    """Write a ``prior`` checkpoint; returns its file hash."""
    arrays = model.arrays("skill.")
    meta = {"env": spec.to_dict(), "model": model.meta(), "config": cfg.to_dict()}
    if disc is not None:
        arrays.update(state_arrays(disc, "disc."))
        meta["disc"] = disc.meta()
    return save_checkpoint(path, arrays, "prior", cfg.hash(), meta)


def load_prior(path, expected_spec: Optional[E.EnvSpec] = None):
    """Return ``(model, discriminator or None, header)``."""
    header, arrays = load_checkpoint(path, kind="prior")
    meta = header["meta"]
    if expected_spec is not None and meta["env"] != expected_spec.to_dict():
        raise CheckpointMismatchError(
            f"{path}: prior was trained for {meta['env']['name']!r}, not {expected_spec.name!r}")
    model = SkillModel.from_arrays(meta["model"], arrays, "skill.")
    disc = None
    if "disc" in meta:
        disc = Discriminator(meta["disc"]["skill_dim"], meta["disc"]["hidden"])
        load_arrays(disc, arrays, "disc.")
    return model, disc, header
