"""Command-line entry point: gen-data, train-prior, train-rl, eval, ablate, plot."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from skillprior import env as E
from skillprior import harness as H
from skillprior.checkpoint import CheckpointError, file_hash
from skillprior.config import ConfigError, TrainConfig
from skillprior.core import ContractViolation, Rng
from skillprior.demos import DatasetError, load_dataset
from skillprior.nets import GaussianHead
from skillprior.pulearn import load_prior
from skillprior.ssac import load_ssac, evaluate


class MissingArtifact(RuntimeError):
    pass


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{path} not found; produce it with `skillprior {producer}`")
    return path


def _config(args) -> TrainConfig:
    overrides = list(args.set or [])
    for key in ("env", "seed"):
        if getattr(args, key, None) is not None:
            overrides.append(f"{key} = {getattr(args, key)}")
    return H.load_base_config(args.config, overrides)


def cmd_gen_data(args) -> int:
    cfg = _config(args).replace(**({"n_expert": args.n_expert} if args.n_expert is not None else {}))
    spec = E.make_spec(cfg.env)
    expert, general = H.generate_datasets(spec, cfg.n_expert, cfg.seed)
    ep, gp = H.write_datasets(args.out, expert, general)
    print(f"wrote {len(expert)} expert trajectories to {ep}")
    print(f"wrote {len(general)} general trajectories to {gp}")
    return 0


def cmd_train_prior(args) -> int:
    cfg = _config(args)
    data = Path(args.data)
    spec = E.make_spec(cfg.env)
    expert = load_dataset(_require(data / H.EXPERT_FILE, "gen-data"), expected_spec=spec)
    general = load_dataset(_require(data / H.GENERAL_FILE, "gen-data"), expected_spec=spec)
    rec = H.run_prior(cfg, expert, general, args.out)
    ckpt, h = next(iter(rec.checkpoints.items()))
    print(f"prior checkpoint {ckpt} sha256 {h}")
    print(f"log {rec.logs['prior']} ({rec.wall_clock:.0f}s)")
    return 0


def cmd_train_rl(args) -> int:
    cfg = _config(args)
    prior = _require(Path(args.prior), "train-prior")
    rec = H.run_downstream(cfg, prior, args.out)
    ckpt = str(Path(args.out) / H.SSAC_FILE)
    print(f"policy checkpoint {ckpt} sha256 {rec.checkpoints[ckpt]}")
    print(f"log {rec.logs['rl']} ({rec.wall_clock:.0f}s)")
    return 0


def cmd_eval(args) -> int:
    model, _, header = load_prior(_require(Path(args.prior), "train-prior"))
    spec = E.EnvSpec.from_dict(header["meta"]["env"])
    if args.policy:
        st, _ = load_ssac(_require(Path(args.policy), "train-rl"), expected_prior_hash=file_hash(args.prior))
        policy = st.policy
    else:
        # untrained reference policy, fresh from its seeded initialization
        policy = GaussianHead(spec.state_dim, model.skill_dim, model.hidden, Rng(args.seed).child("untrained"))
    returns = evaluate(spec, model, policy, args.episodes, Rng(args.seed).child("eval"))
    mean = float(np.mean(returns))
    print(f"mean return {mean:.4f} (normalized {mean / spec.max_return:.4f}) over {args.episodes} episodes")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    rows, grid = H.run_ablation(cfg, args.seeds, args.envs, args.out, resume=args.resume)
    table = Path(args.out) / "ablation.csv"
    H.write_table(rows, table)
    print(H.format_table(rows))
    print(f"table written to {table}")
    for key, msg in sorted(grid.failures.items()):
        print(f"failed {key}: {msg}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    from skillprior.plotting import plot_curves

    groups = {}
    for item in args.log:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = Path(item).parent.name or Path(item).stem, item
        groups.setdefault(label, []).append(_require(Path(path), "train-rl"))
    csv_path = plot_curves(groups, args.out, title=args.title or "")
    print(f"wrote {args.out} and {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skillprior", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--env", choices=sorted(E.SPECS))
        sp.add_argument("--seed", type=int)
        return sp

    sp = with_config(sub.add_parser("gen-data", help="generate expert and general datasets"))
    sp.add_argument("--n-expert", type=int)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(fn=cmd_gen_data)

    sp = with_config(sub.add_parser("train-prior", help="train the skill model and prior"))
    sp.add_argument("--data", required=True, help="directory written by gen-data")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_prior)

    sp = with_config(sub.add_parser("train-rl", help="train the downstream skill policy"))
    sp.add_argument("--prior", required=True, help="prior checkpoint written by train-prior")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train_rl)

    sp = sub.add_parser("eval", help="mean greedy return of a policy")
    sp.add_argument("--prior", required=True)
    sp.add_argument("--policy", help="policy checkpoint from train-rl; omit for an untrained policy")
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_eval)

    sp = with_config(sub.add_parser("ablate", help="SDE ablation grid over seeds and environments"))
    sp.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sp.add_argument("--envs", nargs="+", choices=sorted(E.SPECS), default=sorted(E.SPECS))
    sp.add_argument("--out", required=True)
    sp.add_argument("--resume", action="store_true", help="reuse finished sub-runs with matching configs")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("plot", help="return curves with seed bands, plus a merged CSV")
    sp.add_argument("--log", action="append", required=True, metavar="[LABEL=]PATH",
                    help="downstream log; repeat a label to pool seeds")
    sp.add_argument("--out", required=True, help="image path; the CSV goes next to it")
    sp.add_argument("--title")
    sp.set_defaults(fn=cmd_plot)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    torch.set_num_threads(1)
    try:
        return args.fn(args)
    except (MissingArtifact, ConfigError, ContractViolation, DatasetError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
