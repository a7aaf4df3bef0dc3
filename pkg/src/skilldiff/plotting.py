"""Plots regenerated from serialized reports alone (no model reload)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .checkpoint import load_tensor_file  # noqa: E402
from .errors import ParameterError  # noqa: E402


def _load(path: Path | str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ParameterError(f"report not found: {path}")
    with open(path) as f:
        return json.load(f)


def _save(fig, out: Path) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120, metadata={})
    plt.close(fig)
    return out


def plot_pretrain_log(log_path: Path | str, out_dir: Path | str) -> Path:
    """Loss curves from a pretraining JSONL log."""
    log_path = Path(log_path)
    if not log_path.exists():
        raise ParameterError(f"loss log not found: {log_path}")
    rows = [json.loads(line) for line in open(log_path)]
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [r["step"] for r in rows]
    for key in ("rec", "total"):
        ax.plot(steps, [r[key] for r in rows], label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title(log_path.stem)
    return _save(fig, Path(out_dir) / f"{log_path.stem}.png")


def plot_rl_curves(report_paths: Sequence[Path | str], out_dir: Path | str) -> Path:
    """Evaluation-return curves of one or more online-RL reports."""
    fig, ax = plt.subplots(figsize=(6, 4))
    names = []
    for p in report_paths:
        rep = _load(p)
        label = f"{rep['variant']} seed{rep['seed']}"
        ax.plot(rep["eval_steps"], rep["eval_returns"], marker="o", label=label)
        names.append(Path(p).stem)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("eval return")
    ax.set_ylim(-0.1, 4.1)
    ax.legend()
    ax.set_title("online adaptation")
    return _save(fig, Path(out_dir) / ("rl_" + "_".join(sorted(names))[:80] + ".png"))


def plot_fewshot_sweep(report_paths: Sequence[Path | str], out_dir: Path | str) -> Path:
    """Mean return vs number of demo trajectories (1..20 sweep)."""
    points = []
    for p in report_paths:
        rep = _load(p)
        mean = sum(r["mean_return"] for r in rep["rows"]) / max(len(rep["rows"]), 1)
        points.append((rep["demos"], mean, rep["variant"]))
    points.sort()
    fig, ax = plt.subplots(figsize=(6, 4))
    variants = sorted({v for _, _, v in points})
    for v in variants:
        xs = [k for k, _, vv in points if vv == v]
        ys = [m for _, m, vv in points if vv == v]
        ax.plot(xs, ys, marker="o", label=v)
    ax.set_xlabel("few-shot trajectories")
    ax.set_ylabel("mean return")
    ax.set_ylim(-0.1, 4.1)
    ax.legend()
    ax.set_title("few-shot robustness")
    return _save(fig, Path(out_dir) / "fewshot_sweep.png")


def plot_embeddings(manifest_path: Path | str, out_dir: Path | str) -> Path:
    """Two-panel scatter of the invariant/variant projections."""
    manifest = _load(manifest_path)
    arrays = load_tensor_file(Path(manifest_path).parent / manifest["arrays_file"])
    has_sigma = "proj_sigma" in arrays
    fig, axes = plt.subplots(1, 2 if has_sigma else 1, figsize=(10, 4), squeeze=False)
    panels = [("proj_rho", "task_label", "invariant latent (by task)")]
    if has_sigma:
        panels.append(("proj_sigma", "domain_label", "variant latent (by domain)"))
    for ax, (proj_key, label_key, title) in zip(axes[0], panels):
        proj = arrays[proj_key]
        labels = arrays[label_key].astype(int)
        for lab in sorted(set(labels.tolist())):
            m = labels == lab
            ax.scatter(proj[m, 0], proj[m, 1], s=4, label=str(lab))
        ax.set_title(title)
        ax.legend(markerscale=3, fontsize=7)
    fig.suptitle(f"{manifest['variant']} embeddings")
    return _save(fig, Path(out_dir) / f"embeddings_{manifest['variant']}.png")
