"""Few-shot robustness sweep: adapt with k = 1..20 demo trajectories and plot
mean return vs k.

Usage: python3 scripts/run_fewshot_sweep.py [--config cfg.json] [--out DIR]
       [--ks 1 3 5 10 20] [--variant dual]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from skilldiff.config import ExperimentConfig, load_config
from skilldiff.experiments import (checkpoint_dir, report_path, run_fewshot,
                                   run_pretrain)
from skilldiff.plotting import plot_fewshot_sweep


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--ks", type=int, nargs="+", default=[1, 3, 5, 10, 20])
    ap.add_argument("--variant", default="dual")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out_dir = str(args.out)
    cfg.variant = args.variant
    seed = cfg.seeds[0]

    ckpt = checkpoint_dir(cfg, cfg.variant, seed)
    if not (ckpt / "manifest.json").exists():
        print(f"pretraining {cfg.variant} seed {seed} ...")
        run_pretrain(cfg, seed)

    files = []
    for k in args.ks:
        print(f"few-shot k={k} ...")
        rep = run_fewshot(cfg, ckpt, seed, levels=[3], demos=k)
        mean = sum(r["mean_return"] for r in rep["rows"]) / len(rep["rows"])
        print(f"  mean level-3 return: {mean:.2f}")
        files.append(report_path(cfg, f"fewshot_k{k}", cfg.variant, seed))

    out = plot_fewshot_sweep(files, Path(cfg.out_dir) / "plots")
    print(f"sweep plotted to {out}")


if __name__ == "__main__":
    main()
