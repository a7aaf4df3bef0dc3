"""Online-RL comparison on a level-3 target: warm-started adaptation curves
for the full model vs the feed-forward skill-VAE baseline.

Usage: python3 scripts/run_online_rl.py [--config cfg.json] [--out DIR]
       [--env-steps N] [--variants dual skillvae]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from skilldiff.config import ExperimentConfig, load_config
from skilldiff.experiments import checkpoint_dir, run_pretrain, run_rl, report_path
from skilldiff.plotting import plot_rl_curves


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--env-steps", type=int, default=None)
    ap.add_argument("--variants", nargs="+", default=["dual", "skillvae"])
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out_dir = str(args.out)

    report_files = []
    for variant in args.variants:
        for seed in cfg.seeds:
            ckpt = checkpoint_dir(cfg, variant, seed)
            if not (ckpt / "manifest.json").exists():
                print(f"pretraining {variant} seed {seed} ...")
                run_pretrain(cfg, seed, variant=variant)
            print(f"online RL {variant} seed {seed} ...")
            rep = run_rl(cfg, ckpt, seed, env_steps=args.env_steps)
            print(f"  eval curve: {list(zip(rep['eval_steps'], rep['eval_returns']))}")
            report_files.append(report_path(cfg, "rl", variant, seed))

    out = plot_rl_curves(report_files, Path(cfg.out_dir) / "plots")
    print(f"curves plotted to {out}")


if __name__ == "__main__":
    main()
