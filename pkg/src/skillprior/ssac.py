"""Skill-based soft actor-critic regularized toward a frozen skill prior.

The policy picks a skill every H environment steps; the frozen decoder turns
it into actions. The KL to the prior replaces SAC's entropy bonus, with its
weight kappa adapted as a dual variable toward a target divergence.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn
from torch.func import functional_call

from skillprior import env as E
from skillprior.checkpoint import CheckpointMismatchError, load_checkpoint, save_checkpoint
from skillprior.config import TrainConfig
from skillprior.core import ContractViolation, DiagGaussian, Rng, as_tensor, kl_diag_gaussian, reparam_sample
from skillprior.nets import GaussianHead, ema_update, load_arrays, mlp, state_arrays
from skillprior.skillmodel import SkillModel, sde_perturb

log = logging.getLogger(__name__)

RL_LOG_COLUMNS = ("env_step", "mean_return", "normalized_return", "policy_loss", "critic_loss", "mean_KL", "kappa")

PriorFn = Callable[[torch.Tensor], DiagGaussian]


class TrainingDiverged(RuntimeError):
    pass


class Critic(nn.Module):
    def __init__(self, state_dim: int, skill_dim: int, hidden=(128, 128), rng: Optional[Rng] = None):
        super().__init__()
        self.net = mlp(state_dim + skill_dim, 1, hidden, rng or Rng(0))

    def forward(self, s, z) -> torch.Tensor:
        return self.net(torch.cat([as_tensor(s), as_tensor(z)], dim=-1)).squeeze(-1)


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer of skill-level transitions."""

    def __init__(self, capacity: int, state_dim: int, skill_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.z = np.zeros((capacity, skill_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s, z, r_tilde: float, s_next, done: bool) -> None:
        z = np.asarray(z, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise ContractViolation("skill vector must be finite")
        i = self._next
        self.s[i], self.z[i], self.r[i], self.s2[i], self.done[i] = s, z, r_tilde, s_next, float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: Rng) -> Dict[str, torch.Tensor]:
        """Uniform sample, without replacement within the batch."""
        idx = rng.choice(self._size, min(batch_size, self._size), replace=False)
        return {k: torch.from_numpy(getattr(self, k)[idx]) for k in ("s", "z", "r", "s2", "done")}


def make_prior_fn(model: Optional[SkillModel], kind: str = "learned") -> PriorFn:
    """Frozen behavior prior: the learned state-conditioned prior, or N(0, I)."""
    if kind == "learned":
        if model is None:
            raise ContractViolation("learned behavior prior requires a skill model")

        def prior(s):
            with torch.no_grad():
                return model.prior(s)

        return prior
    if kind == "standard_normal":
        def standard(s):
            s = as_tensor(s)
            return DiagGaussian.standard((*s.shape[:-1], model.skill_dim), s.dtype)

        return standard
    raise ContractViolation(f"unknown behavior prior {kind!r}")


def value_target(policy: GaussianHead, target_critic: Critic, prior_fn: PriorFn, kappa: float, s_next,
                 rng: Rng) -> torch.Tensor:
    """Single-sample soft value ``Q_target(s', z') - kappa * KL(pi(.|s') || prior(.|s'))``; no gradients."""
    with torch.no_grad():
        s_next = as_tensor(s_next)
        pi = policy(s_next)
        z = reparam_sample(pi, rng.normal(pi.mean.shape))
        kl = kl_diag_gaussian(pi, prior_fn(s_next))
        return target_critic(s_next, z) - kappa * kl


def critic_loss(critic: Critic, batch: Dict[str, torch.Tensor], targets, gamma: float) -> torch.Tensor:
    """Half squared soft Bellman residual; terminal transitions bootstrap nothing."""
    q = critic(batch["s"], batch["z"])
    y = batch["r"] + gamma * (1.0 - batch["done"]) * as_tensor(targets).detach()
    return 0.5 * ((q - y) ** 2).mean()


def policy_objective(policy: GaussianHead, critic: Critic, prior_fn: PriorFn, kappa: float, states,
                     rng: Rng) -> Tuple[torch.Tensor, torch.Tensor]:
    """Return ``(mean Q(s, z~pi) - kappa * KL, mean KL)``, to be maximized over the policy.

    The critic is evaluated with detached parameters so no gradient reaches it.
    """
    s = as_tensor(states)
    pi = policy(s)
    z = reparam_sample(pi, rng.normal(pi.mean.shape))
    frozen = {k: v.detach() for k, v in critic.named_parameters()}
    q = functional_call(critic, frozen, (s, z))
    kl = kl_diag_gaussian(pi, prior_fn(s))
    return (q - kappa * kl).mean(), kl.mean()


def kappa_update(kappa: float, measured_kl: float, kappa_target: float, lr: float) -> float:
    """Dual ascent in log space: grows when the KL exceeds its target."""
    if not kappa > 0:
        raise ContractViolation(f"kappa must be > 0, got {kappa}")
    return math.exp(math.log(kappa) + lr * (measured_kl - kappa_target))


class SkillRunner:
    """Owns one environment instance and executes skills in it."""

    def __init__(self, spec: E.EnvSpec, model: SkillModel):
        self.env = E.Env(spec)
        self.model = model
        self.obs: Optional[np.ndarray] = None
        self.episode_return = 0.0
        self.completed_returns: List[float] = []

    @property
    def needs_reset(self) -> bool:
        return self.env.state is None or self.env.state.done

    def reset(self, rng: Rng) -> np.ndarray:
        self.obs = self.env.reset(rng)
        self.episode_return = 0.0
        return self.obs

    def execute(self, z: torch.Tensor) -> Tuple[float, np.ndarray, bool, int]:
        """Decode ``z`` and run up to H actions, stopping at episode end."""
        with torch.no_grad():
            actions = self.model.decode(z).numpy()
        r_tilde, done, n = 0.0, False, 0
        for a in actions:
            self.obs, r, done = self.env.step(a)
            r_tilde += r
            n += 1
            if done:
                break
        self.episode_return += r_tilde
        if done:
            self.completed_returns.append(self.episode_return)
        return r_tilde, self.obs, done, n


def collect_skill_step(runner: SkillRunner, policy: GaussianHead, buffer: ReplayBuffer, eta: float, rng: Rng,
                       augment: bool = True) -> int:
    """Sample a skill, execute it, store the transition and (optionally) its SDE copy.

    Returns the number of environment steps consumed.
    """
    if runner.needs_reset:
        runner.reset(rng.child("reset"))
    s = runner.obs.copy()
    with torch.no_grad():
        pi = policy(as_tensor(s))
        z = reparam_sample(pi, rng.normal(pi.mean.shape))
    r_tilde, s_next, done, n = runner.execute(z)
    buffer.push(s, z.numpy(), r_tilde, s_next, done)
    if augment:
        eps = rng.normal(z.shape)
        buffer.push(s, sde_perturb(z, eta, eps).numpy(), r_tilde, s_next, done)
    return n


def evaluate(spec: E.EnvSpec, model: SkillModel, policy: GaussianHead, episodes: int, rng: Rng) -> List[float]:
    """Greedy returns: policy mean skill, decoder mean actions."""
    runner = SkillRunner(spec, model)
    returns = []
    for ep in range(episodes):
        runner.reset(rng.child(ep))
        done = False
        while not done:
            with torch.no_grad():
                z = policy(as_tensor(runner.obs)).mean
            _, _, done, _ = runner.execute(z)
        returns.append(runner.episode_return)
    return returns


@dataclass
class SsacState:
    policy: GaussianHead
    critic: Critic
    target_critic: Critic
    kappa: float

    def arrays(self) -> dict:
        out = {}
        out.update(state_arrays(self.policy, "policy."))
        out.update(state_arrays(self.critic, "critic."))
        out.update(state_arrays(self.target_critic, "target_critic."))
        out["log_kappa"] = np.array([math.log(self.kappa)])
        return out

    @classmethod
    def build(cls, state_dim: int, skill_dim: int, hidden: int, rng: Rng, kappa: float,
              policy_hidden=None) -> "SsacState":
        h = (hidden, hidden)
        policy = GaussianHead(state_dim, skill_dim, tuple(policy_hidden or h), rng.child("policy"))
        critic = Critic(state_dim, skill_dim, h, rng.child("critic"))
        target = Critic(state_dim, skill_dim, h, rng.child("critic"))
        target.load_state_dict(critic.state_dict())
        for p in target.parameters():
            p.requires_grad_(False)
        return cls(policy, critic, target, kappa)

    @classmethod
    def from_arrays(cls, meta: dict, arrays: dict) -> "SsacState":
        st = cls.build(meta["state_dim"], meta["skill_dim"], meta["hidden"], Rng(0), 1.0, meta.get("policy_hidden"))
        load_arrays(st.policy, arrays, "policy.")
        load_arrays(st.critic, arrays, "critic.")
        load_arrays(st.target_critic, arrays, "target_critic.")
        st.kappa = float(np.exp(arrays["log_kappa"][0]))
        return st


def save_ssac(path, st: SsacState, cfg: TrainConfig, spec: E.EnvSpec, prior_hash: str) -> str:
    """Write an ``ssac`` checkpoint tied to the prior checkpoint it was trained against."""
    policy_hidden = [m.out_features for m in st.policy.net if isinstance(m, nn.Linear)][:-1]
    meta = {"env": spec.to_dict(), "state_dim": spec.state_dim, "skill_dim": cfg.skill_dim,
            "hidden": cfg.hidden, "policy_hidden": policy_hidden, "prior_hash": prior_hash,
            "config": cfg.to_dict()}
    return save_checkpoint(path, st.arrays(), "ssac", cfg.hash(), meta)


def load_ssac(path, expected_prior_hash: Optional[str] = None) -> Tuple[SsacState, dict]:
    header, arrays = load_checkpoint(path, kind="ssac")
    meta = header["meta"]
    if expected_prior_hash is not None and meta["prior_hash"] != expected_prior_hash:
        raise CheckpointMismatchError(f"{path}: policy was trained against a different prior checkpoint")
    return SsacState.from_arrays(meta, arrays), header


def _fmt_row(row: dict) -> dict:
    return {k: (repr(float(v)) if k != "env_step" else int(v)) for k, v in row.items()}


def train_downstream(spec: E.EnvSpec, model: SkillModel, cfg: TrainConfig, rng: Rng, log_path=None,
                     env_steps: Optional[int] = None):
    """Online skill-level SAC against a frozen skill model.

    Returns ``(SsacState, evaluation rows)``. Evaluation happens at env step 0
    and whenever another ``cfg.eval_every`` environment steps have elapsed.
    """
    if model.state_dim != spec.state_dim or model.action_dim != spec.action_dim:
        raise ContractViolation("skill model dimensions do not match the environment")
    for p in model.parameters():
        p.requires_grad_(False)
    total = cfg.rl_env_steps if env_steps is None else env_steps
    prior_fn = make_prior_fn(model, cfg.bc_prior)
    # the policy mirrors the prior network so it can start as a copy of it
    st = SsacState.build(spec.state_dim, model.skill_dim, cfg.hidden, rng.child("init"), cfg.kappa_init,
                         model.hidden)
    if cfg.policy_init_from_prior and cfg.bc_prior == "learned":
        st.policy.load_state_dict(model.prior_net.state_dict())
    opt_pi = torch.optim.Adam(st.policy.parameters(), lr=cfg.policy_lr)
    opt_q = torch.optim.Adam(st.critic.parameters(), lr=cfg.critic_lr)
    buffer = ReplayBuffer(cfg.buffer_capacity, spec.state_dim, model.skill_dim)
    runner = SkillRunner(spec, model)

    collect_rng, update_rng, eval_rng = rng.child("collect"), rng.child("update"), rng.child("eval")
    rows: List[dict] = []
    stats = {"policy_loss": [], "critic_loss": [], "mean_KL": []}
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=RL_LOG_COLUMNS)
        writer.writeheader()

    def record(env_step: int):
        returns = evaluate(spec, model, st.policy, cfg.eval_episodes, eval_rng.child(env_step))
        mean_ret = float(np.mean(returns))
        row = {"env_step": env_step, "mean_return": mean_ret, "normalized_return": mean_ret / spec.max_return}
        for k, v in stats.items():
            row[k] = float(np.mean(v)) if v else float("nan")
            v.clear()
        row["kappa"] = st.kappa
        rows.append(row)
        if writer is not None:
            writer.writerow(_fmt_row(row))
            fh.flush()
        log.info("env step %d: return %.3f kappa %.4g", env_step, mean_ret, st.kappa)

    try:
        steps, skill_steps, next_eval = 0, 0, cfg.eval_every
        record(0)
        while steps < total:
            steps += collect_skill_step(runner, st.policy, buffer, cfg.sde_scale,
                                        collect_rng.child(skill_steps), augment=cfg.sde_downstream)
            skill_steps += 1
            if skill_steps >= cfg.warmup_skill_steps:
                for u in range(cfg.updates_per_skill_step):
                    _gradient_phase(st, opt_pi, opt_q, buffer, prior_fn, cfg,
                                    update_rng.child(f"{skill_steps}-{u}"), stats, skill_steps)
            while steps >= next_eval and next_eval <= total:
                record(next_eval)
                next_eval += cfg.eval_every
    finally:
        if fh is not None:
            fh.close()
    return st, rows


def _gradient_phase(st: SsacState, opt_pi, opt_q, buffer: ReplayBuffer, prior_fn: PriorFn, cfg: TrainConfig,
                    rng: Rng, stats: dict, skill_step: int) -> None:
    batch = buffer.sample(cfg.rl_batch, rng.child("batch"))
    obj, kl = policy_objective(st.policy, st.critic, prior_fn, st.kappa, batch["s"], rng.child("policy"))
    opt_pi.zero_grad()
    (-obj).backward()
    opt_pi.step()

    targets = value_target(st.policy, st.target_critic, prior_fn, st.kappa, batch["s2"], rng.child("target"))
    lq = critic_loss(st.critic, batch, targets, cfg.gamma)
    opt_q.zero_grad()
    lq.backward()
    opt_q.step()

    for name, v in (("policy_objective", obj), ("critic_loss", lq), ("mean_KL", kl)):
        if not torch.isfinite(v):
            raise TrainingDiverged(f"non-finite {name} at skill step {skill_step}")
    obj, lq, kl = float(obj.detach()), float(lq.detach()), float(kl.detach())
    st.kappa = kappa_update(st.kappa, kl, cfg.kappa_target, cfg.kappa_lr)
    ema_update(st.target_critic, st.critic, cfg.tau)
    stats["policy_loss"].append(-obj)
    stats["critic_loss"].append(lq)
    stats["mean_KL"].append(kl)
