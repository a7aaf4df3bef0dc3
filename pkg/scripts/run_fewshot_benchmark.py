"""Full few-shot benchmark: pretrain every variant on the configured dataset,
adapt to each target cell at every level, and write the aggregate table.

Usage: python3 scripts/run_fewshot_benchmark.py [--config cfg.json] [--out DIR]
       [--variants dual flat hier skillvae bc] [--quick]
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from skilldiff.config import ExperimentConfig, load_config
from skilldiff.experiments import (aggregate_metrics, checkpoint_dir,
                                   run_fewshot, run_pretrain)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--variants", nargs="+",
                    default=["dual", "flat", "hier", "skillvae", "bc"])
    ap.add_argument("--quick", action="store_true",
                    help="small training budget for a fast end-to-end pass")
    args = ap.parse_args()

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out:
        cfg.out_dir = str(args.out)
    if args.quick:
        cfg.train.steps = 6000
        cfg.env.levels = [0, 3]

    reports = []
    for variant in args.variants:
        for seed in cfg.seeds:
            ckpt = checkpoint_dir(cfg, variant, seed)
            if not (ckpt / "manifest.json").exists():
                print(f"pretraining {variant} seed {seed} ...")
                run_pretrain(cfg, seed, variant=variant)
            print(f"few-shot eval {variant} seed {seed} ...")
            reports.append(run_fewshot(cfg, ckpt, seed))

    table = aggregate_metrics(reports)
    out = Path(cfg.out_dir) / "reports" / "fewshot_table.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table, indent=2, sort_keys=True))
    print(f"\n{'domain':24s} {'lvl':>3s} {'variant':10s} {'mean':>6s} {'std':>6s} {'n':>2s}")
    for row in table:
        print(f"{row['domain']:24s} {row['level']:3d} {row['variant']:10s} "
              f"{row['mean_return']:6.2f} {row['std_return']:6.2f} {row['n_seeds']:2d}")
    print(f"\ntable written to {out}")


if __name__ == "__main__":
    main()
