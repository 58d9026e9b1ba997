"""Training configuration: flat ``key = value`` files, strict keys, stable hash.

Schema (defaults in brackets)::

    env = point_maze | chained_targets      [point_maze]
    seed                                    [0]
    horizon          skill length H         [10]
    skill_dim        latent size m          [10]
    hidden           MLP width              [128]
    disc_hidden      discriminator width    [256]
    n_expert         expert trajectories    [50]
    pu_prior         lambda, in (0, 1)      [0.5]
    pu_slack         xi >= 0                [0.0]
    pu_weight        rho >= 0               [0.1]
    reg_weight       beta >= 0              [0.01]
    sde_weight       alpha >= 0             [0.1]
    sde_scale        eta in [0, 1)          [0.01]
    prior_lr / prior_batch / prior_steps / prior_log_every / prior_stop_grad
    tau / gamma / kappa_init / kappa_target / kappa_lr
    policy_lr / critic_lr / rl_batch / buffer_capacity / warmup_skill_steps
    updates_per_skill_step / rl_env_steps / eval_every / eval_episodes
    bc_prior = learned | standard_normal    [learned]
    policy_init_from_prior                  [true]
    sde_skill / sde_downstream / pu_enabled [true]
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict

from skillprior.core import ContractViolation
from skillprior.env import SPECS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    env: str = "point_maze"
    seed: int = 0
    horizon: int = 10
    skill_dim: int = 10
    hidden: int = 128
    disc_hidden: int = 256
    n_expert: int = 50

    pu_prior: float = 0.5
    pu_slack: float = 0.0
    pu_weight: float = 0.1
    reg_weight: float = 0.01
    sde_weight: float = 0.1
    sde_scale: float = 0.01

    prior_lr: float = 1e-3
    prior_batch: int = 64
    prior_steps: int = 20000
    prior_log_every: int = 100
    prior_stop_grad: bool = True

    tau: float = 0.005
    gamma: float = 0.99
    kappa_init: float = 1.0
    kappa_target: float = 1.0
    kappa_lr: float = 3e-4
    policy_lr: float = 3e-4
    critic_lr: float = 3e-4
    rl_batch: int = 128
    buffer_capacity: int = 100000
    warmup_skill_steps: int = 50
    updates_per_skill_step: int = 1
    rl_env_steps: int = 100000
    eval_every: int = 1000
    eval_episodes: int = 10
    bc_prior: str = "learned"
    policy_init_from_prior: bool = True

    sde_skill: bool = True
    sde_downstream: bool = True
    pu_enabled: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.env in SPECS, f"env must be one of {sorted(SPECS)}"),
            (self.horizon >= 1 and self.skill_dim >= 1, "horizon and skill_dim must be >= 1"),
            (0.0 < self.pu_prior < 1.0, "pu_prior (lambda) must lie in (0, 1)"),
            (self.pu_slack >= 0.0, "pu_slack (xi) must be >= 0"),
            (self.pu_weight >= 0.0, "pu_weight (rho) must be >= 0"),
            (self.reg_weight >= 0.0 and self.sde_weight >= 0.0, "loss weights must be >= 0"),
            (0.0 <= self.sde_scale < 1.0, "sde_scale (eta) must lie in [0, 1)"),
            (0.0 < self.tau <= 1.0, "tau must lie in (0, 1]"),
            (0.0 < self.gamma < 1.0, "gamma must lie in (0, 1)"),
            (self.kappa_init > 0.0, "kappa_init must be > 0"),
            (self.bc_prior in ("learned", "standard_normal"), "bc_prior must be learned|standard_normal"),
            (self.prior_batch >= 1 and self.rl_batch >= 1, "batch sizes must be >= 1"),
            (self.n_expert >= 1, "n_expert must be >= 1"),
            (self.eval_every >= 1 and self.eval_episodes >= 1, "evaluation cadence must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def replace(self, **kw) -> "TrainConfig":
        unknown = set(kw) - {f.name for f in fields(self)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(key: str, raw: str, typ) -> Any:
    if typ in (bool, "bool"):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if typ in (int, "int"):
            return int(float(raw)) if raw.lower().count("e") else int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_config(text: str, base: TrainConfig = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    base = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, raw, types[key])
    try:
        return base.replace(**values)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(cfg.dumps())
