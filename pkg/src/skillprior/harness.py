"""Experiment orchestration: pipeline stages, run records, return metrics and the SDE ablation grid."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from skillprior import demos as D
from skillprior import env as E
from skillprior.checkpoint import file_hash
from skillprior.config import TrainConfig, parse_config, save_config
from skillprior.core import ContractViolation, Rng
from skillprior.pulearn import load_prior, save_prior, train_prior
from skillprior.ssac import save_ssac, train_downstream

log = logging.getLogger(__name__)

EXPERT_FILE = "expert.jsonl"
GENERAL_FILE = "general.jsonl"
PRIOR_FILE = "prior.ckpt"
PRIOR_LOG = "prior_log.csv"
SSAC_FILE = "ssac.ckpt"
RL_LOG = "rl_log.csv"
RECORD_FILE = "record.json"

# flag overrides per ablation variant; the baseline turns SDE off in both stages
VARIANTS: Dict[str, dict] = {
    "full": {"sde_skill": True, "sde_downstream": True},
    "sde_skill": {"sde_skill": True, "sde_downstream": False},
    "sde_downstream": {"sde_skill": False, "sde_downstream": True},
    "no_sde": {"sde_skill": False, "sde_downstream": False},
}
BASELINE = "no_sde"
# downstream SAC without the learned prior: KL toward N(0, I), policy trained from scratch
NO_PRIOR = {"sde_skill": True, "sde_downstream": True, "bc_prior": "standard_normal",
            "policy_init_from_prior": False}


# ---------------------------------------------------------------- metrics

def normalized_return(ret: float, spec: E.EnvSpec) -> float:
    if not 0.0 <= ret <= spec.max_return:
        raise ContractViolation(f"return {ret} outside [0, {spec.max_return}] for {spec.name}")
    return ret / spec.max_return


Curve = Tuple[np.ndarray, np.ndarray]


def align_curves(curves: Sequence[Curve]) -> Tuple[np.ndarray, np.ndarray]:
    """Interpolate curves linearly onto the union of their steps within the shared step range.

    Returns ``(grid, values)`` with ``values`` of shape ``(len(curves), len(grid))``.
    """
    if not curves:
        raise ContractViolation("no curves to align")
    lo = max(float(np.min(s)) for s, _ in curves)
    hi = min(float(np.max(s)) for s, _ in curves)
    if lo > hi:
        raise ContractViolation("curves share no common step range")
    grid = np.unique(np.concatenate([np.asarray(s, dtype=np.float64) for s, _ in curves]))
    grid = grid[(grid >= lo) & (grid <= hi)]
    return grid, np.stack([np.interp(grid, s, v) for s, v in curves])


def mean_normalized_return(curves: Sequence[Curve]) -> Curve:
    """Pointwise mean of per-environment normalized-return curves on a common grid."""
    grid, values = align_curves(curves)
    return grid, values.mean(axis=0)


def curve_auc(steps, values, until: Optional[float] = None) -> float:
    """Trapezoidal area under a return curve, optionally truncated at ``until`` env steps."""
    steps, values = np.asarray(steps, dtype=np.float64), np.asarray(values, dtype=np.float64)
    if until is not None:
        end = np.interp(until, steps, values)
        keep = steps < until
        steps, values = np.append(steps[keep], until), np.append(values[keep], end)
    return float(np.trapezoid(values, steps))


def percentage_increase(variant: Curve, baseline: Curve) -> float:
    """``100 * (mean variant - mean baseline) / mean baseline`` over the shared evaluation points.

    NaN when the baseline never scores; 0 when both never score.
    """
    _, (v, b) = align_curves([variant, baseline])
    mv, mb = float(v.mean()), float(b.mean())
    if mb == 0.0:
        return 0.0 if mv == 0.0 else float("nan")
    return 100.0 * (mv - mb) / mb


def read_curve(path) -> Curve:
    """``(env_step, normalized_return)`` from a downstream log."""
    steps, values = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            steps.append(float(row["env_step"]))
            values.append(float(row["normalized_return"]))
    return np.array(steps), np.array(values)


# ---------------------------------------------------------------- run records

@dataclass
class RunRecord:
    stage: str
    config: dict
    config_hash: str
    seed: int
    logs: Dict[str, str] = field(default_factory=dict)
    checkpoints: Dict[str, str] = field(default_factory=dict)  # path -> sha256
    wall_clock: float = 0.0

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls(**json.loads(Path(path).read_text()))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.config)

    def is_valid_for(self, cfg: TrainConfig) -> bool:
        """Stored config matches ``cfg`` and every checkpoint still has its recorded hash."""
        if self.config_hash != cfg.hash() or self.train_config().hash() != self.config_hash:
            return False
        return all(Path(p).exists() and file_hash(p) == h for p, h in self.checkpoints.items()) and all(
            Path(p).exists() for p in self.logs.values())


def _reusable(out_dir: Path, cfg: TrainConfig) -> Optional[RunRecord]:
    path = out_dir / RECORD_FILE
    if not path.exists():
        return None
    rec = RunRecord.load(path)
    return rec if rec.is_valid_for(cfg) else None


# ---------------------------------------------------------------- pipeline stages

def data_rng(seed: int) -> Rng:
    return Rng(seed).child("data")


def generate_datasets(spec: E.EnvSpec, n_expert: int, seed: int) -> Tuple[D.DemoDataset, D.DemoDataset]:
    """Expert and (10x larger) general datasets for one seed."""
    rng = data_rng(seed)
    return D.generate_expert(spec, n_expert, rng.child("expert")), D.generate_general(spec, n_expert,
                                                                                     rng.child("general"))


def write_datasets(out_dir, expert: D.DemoDataset, general: D.DemoDataset) -> Tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    D.save_dataset(expert, out / EXPERT_FILE)
    D.save_dataset(general, out / GENERAL_FILE)
    return out / EXPERT_FILE, out / GENERAL_FILE


def run_prior(cfg: TrainConfig, expert: D.DemoDataset, general: D.DemoDataset, out_dir,
              resume: bool = False) -> RunRecord:
    """Train the skill prior and write ``prior.ckpt``, ``prior_log.csv`` and ``record.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume and (rec := _reusable(out, cfg)) is not None:
        return rec
    spec = E.make_spec(cfg.env)
    if expert.spec != spec:
        raise ContractViolation(f"expert data is for {expert.spec.name!r}, config says {cfg.env!r}")
    t0 = time.perf_counter()
    model, disc, _ = train_prior(expert, general, cfg, Rng(cfg.seed).child("prior"), log_path=out / PRIOR_LOG)
    ckpt = out / PRIOR_FILE
    h = save_prior(ckpt, model, disc, cfg, spec)
    save_config(cfg, out / "config.txt")
    rec = RunRecord("prior", cfg.to_dict(), cfg.hash(), cfg.seed, {"prior": str(out / PRIOR_LOG)},
                    {str(ckpt): h}, time.perf_counter() - t0)
    rec.save(out / RECORD_FILE)
    return rec


def run_downstream(cfg: TrainConfig, prior_path, out_dir, resume: bool = False) -> RunRecord:
    """Train SSAC against a prior checkpoint; writes ``ssac.ckpt``, ``rl_log.csv`` and ``record.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if resume and (rec := _reusable(out, cfg)) is not None:
        return rec
    spec = E.make_spec(cfg.env)
    model, _, header = load_prior(prior_path, expected_spec=spec)
    prior_hash = file_hash(prior_path)
    t0 = time.perf_counter()
    st, _ = train_downstream(spec, model, cfg, Rng(cfg.seed).child("rl"), log_path=out / RL_LOG)
    ckpt = out / SSAC_FILE
    h = save_ssac(ckpt, st, cfg, spec, prior_hash)
    save_config(cfg, out / "config.txt")
    rec = RunRecord("downstream", cfg.to_dict(), cfg.hash(), cfg.seed, {"rl": str(out / RL_LOG)},
                    {str(ckpt): h, str(prior_path): prior_hash}, time.perf_counter() - t0)
    rec.save(out / RECORD_FILE)
    return rec


# ---------------------------------------------------------------- variant grid and ablation

@dataclass
class GridResult:
    curves: Dict[Tuple[str, int, str], Curve] = field(default_factory=dict)  # (env, seed, variant)
    failures: Dict[Tuple[str, int, str], str] = field(default_factory=dict)
    records: Dict[Tuple[str, int, str], RunRecord] = field(default_factory=dict)


def run_variant_grid(base: TrainConfig, seeds: Sequence[int], envs: Sequence[str], out_dir,
                     variants: Mapping[str, dict] = VARIANTS, resume: bool = False) -> GridResult:
    """Train every variant for every (env, seed).

    Priors are shared between variants that agree on the prior-stage flags, so
    each (env, seed) trains at most two priors. A failing sub-run is recorded
    and the grid continues.
    """
    result = GridResult()
    root = Path(out_dir)
    for env_name in envs:
        spec = E.make_spec(env_name)
        for seed in seeds:
            seed_dir = root / env_name / f"seed{seed}"
            try:
                expert, general = generate_datasets(spec, base.n_expert, seed)
            except Exception as exc:  # noqa: BLE001 - any failure marks the sub-runs, the grid goes on
                for name in variants:
                    result.failures[(env_name, seed, name)] = f"data: {exc}"
                continue
            priors: Dict[bool, Path] = {}
            for name, overrides in variants.items():
                cfg = base.replace(env=env_name, seed=seed, **overrides)
                key = (env_name, seed, name)
                try:
                    if cfg.sde_skill not in priors:
                        prior_cfg = base.replace(env=env_name, seed=seed, sde_skill=cfg.sde_skill)
                        rec = run_prior(prior_cfg, expert, general, seed_dir / f"prior_sde{int(cfg.sde_skill)}",
                                        resume=resume)
                        priors[cfg.sde_skill] = Path(next(iter(rec.checkpoints)))
                    rec = run_downstream(cfg, priors[cfg.sde_skill], seed_dir / f"rl_{name}", resume=resume)
                    result.records[key] = rec
                    result.curves[key] = read_curve(rec.logs["rl"])
                    log.info("%s seed %d %s done in %.0fs", env_name, seed, name, rec.wall_clock)
                except Exception as exc:  # noqa: BLE001
                    log.warning("%s seed %d %s failed: %s", env_name, seed, name, exc)
                    result.failures[key] = f"{type(exc).__name__}: {exc}"
    return result


ABLATION_COLUMNS = ("variant", "env", "mean_increase_pct", "std_increase_pct", "n_seeds", "status")


def ablation_table(grid: GridResult, envs: Sequence[str], seeds: Sequence[int],
                   variants: Sequence[str] = tuple(VARIANTS), baseline: str = BASELINE) -> List[dict]:
    """Mean and sample std over seeds of each variant's percentage increase over ``baseline``."""
    rows = []
    for name in variants:
        for env_name in envs:
            incs, failed = [], []
            for seed in seeds:
                v, b = (env_name, seed, name), (env_name, seed, baseline)
                if v in grid.curves and b in grid.curves:
                    incs.append(percentage_increase(grid.curves[v], grid.curves[b]))
                else:
                    failed.append(seed)
            row = {"variant": name, "env": env_name, "n_seeds": len(incs)}
            if failed:
                row.update(mean_increase_pct=float("nan"), std_increase_pct=float("nan"),
                           status=f"failed (seeds {','.join(map(str, failed))})")
            else:
                arr = np.array(incs)
                row.update(mean_increase_pct=float(np.mean(arr)),
                           std_increase_pct=float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0,
                           status="ok")
            rows.append(row)
    return rows


def run_ablation(base: TrainConfig, seeds: Sequence[int], envs: Sequence[str], out_dir,
                 resume: bool = False) -> Tuple[List[dict], GridResult]:
    if len(seeds) < 2:
        raise ContractViolation("ablation needs at least 2 seeds")
    grid = run_variant_grid(base, seeds, envs, out_dir, VARIANTS, resume=resume)
    return ablation_table(grid, envs, seeds), grid


def write_table(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def format_table(rows: Sequence[dict]) -> str:
    """Variants as rows, environments as columns, cells ``mean +- std %``."""
    envs = list(dict.fromkeys(r["env"] for r in rows))
    cells: Dict[str, Dict[str, str]] = {}
    for r in rows:
        text = (f"{r['mean_increase_pct']:+.1f} +- {r['std_increase_pct']:.1f} %" if r["status"] == "ok"
                else "failed")
        if r["status"] == "ok" and math.isnan(r["mean_increase_pct"]):
            text = "undefined"
        cells.setdefault(r["variant"], {})[r["env"]] = text
    width = max([len("variant")] + [len(v) for v in cells])
    cw = max([len(e) for e in envs] + [len(t) for c in cells.values() for t in c.values()])
    lines = ["variant".ljust(width) + "  " + "  ".join(e.rjust(cw) for e in envs)]
    for v, c in cells.items():
        lines.append(v.ljust(width) + "  " + "  ".join(c.get(e, "").rjust(cw) for e in envs))
    return "\n".join(lines)


def load_base_config(path=None, overrides: Sequence[str] = ()) -> TrainConfig:
    """Config file (or defaults) plus ``key=value`` overrides, all strictly validated."""
    base = parse_config(Path(path).read_text()) if path else TrainConfig()
    return parse_config("\n".join(overrides), base)
