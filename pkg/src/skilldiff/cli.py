"""Command-line entry point.

Subcommands: gen-data, pretrain, fewshot, rl, embed, plot.  Common flags:
--config PATH (JSON), --seed N, --out DIR, --variant NAME.  Exit code 0 on
success; on failure a machine-readable error JSON goes to stdout and the exit
code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .env.datagen import generate_dataset, save_trajectory_set
from .errors import SkillDiffError
from . import experiments, plotting


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override run seed")
    p.add_argument("--out", type=Path, default=None, help="override output directory")
    p.add_argument("--variant", type=str, default=None, help="override model variant")


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.variant is not None:
        cfg.variant = args.variant
    return cfg


def _seed(args, cfg: ExperimentConfig) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.seeds[0] if cfg.seeds else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skilldiff",
                                     description="cross-domain skill diffusion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the expert dataset")
    _common_flags(p)

    p = sub.add_parser("pretrain", help="offline skill pretraining")
    _common_flags(p)

    p = sub.add_parser("fewshot", help="few-shot adaptation and evaluation")
    _common_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--levels", type=int, nargs="*", default=None)
    p.add_argument("--demos", type=int, default=None)

    p = sub.add_parser("rl", help="online RL adaptation on a target domain")
    _common_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--target-index", type=int, default=0)
    p.add_argument("--env-steps", type=int, default=None)

    p = sub.add_parser("embed", help="export latent embeddings and cluster metrics")
    _common_flags(p)
    p.add_argument("--checkpoint", type=Path, default=None)

    p = sub.add_parser("plot", help="render plots from serialized reports")
    _common_flags(p)
    p.add_argument("--reports", type=Path, nargs="+", required=True)
    p.add_argument("--kind", choices=["pretrain", "rl", "fewshot-sweep", "embeddings"],
                   required=True)
    return parser


def _default_checkpoint(cfg: ExperimentConfig, seed: int) -> Path:
    return experiments.checkpoint_dir(cfg, cfg.variant, seed)


def run_command(args) -> dict:
    cfg = _load_cfg(args)
    seed = _seed(args, cfg)
    if args.command == "gen-data":
        ts = generate_dataset(cfg.env.families, cfg.env.levels,
                              cfg.env.trajectories_per_domain, seed,
                              fewshot_pool=cfg.env.fewshot_pool)
        out = save_trajectory_set(ts, experiments.dataset_dir(cfg))
        return {"dataset_dir": str(out),
                "n_trajectories": sum(len(v) for v in ts.trajectories.values())}
    if args.command == "pretrain":
        path = experiments.run_pretrain(cfg, seed)
        return {"checkpoint": str(path)}
    if args.command == "fewshot":
        ckpt = args.checkpoint or _default_checkpoint(cfg, seed)
        report = experiments.run_fewshot(cfg, ckpt, seed, levels=args.levels,
                                         demos=args.demos)
        return {"report": str(experiments.report_path(
            cfg, "fewshot" if args.demos is None else f"fewshot_k{args.demos}",
            report["variant"], seed))}
    if args.command == "rl":
        ckpt = args.checkpoint or _default_checkpoint(cfg, seed)
        report = experiments.run_rl(cfg, ckpt, seed, level=args.level,
                                    target_index=args.target_index,
                                    env_steps=args.env_steps)
        return {"report": str(experiments.report_path(cfg, "rl", report["variant"], seed)),
                "final_eval_return": report["eval_returns"][-1]}
    if args.command == "embed":
        ckpt = args.checkpoint or _default_checkpoint(cfg, seed)
        manifest = experiments.export_embeddings(cfg, ckpt)
        return {"metrics": manifest["metrics"], "n_segments": manifest["n_segments"]}
    if args.command == "plot":
        out_dir = Path(cfg.out_dir) / "plots"
        if args.kind == "pretrain":
            paths = [plotting.plot_pretrain_log(p, out_dir) for p in args.reports]
        elif args.kind == "rl":
            paths = [plotting.plot_rl_curves(args.reports, out_dir)]
        elif args.kind == "fewshot-sweep":
            paths = [plotting.plot_fewshot_sweep(args.reports, out_dir)]
        else:
            paths = [plotting.plot_embeddings(p, out_dir) for p in args.reports]
        return {"plots": [str(p) for p in paths]}
    raise SkillDiffError(f"unhandled command {args.command}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = run_command(args)
    except SkillDiffError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 1
    except OSError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}))
        return 2
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
