"""Checkpoint format: a directory with a JSON manifest plus one binary tensor
file per network.

Tensor files are little-endian float32 with name- and shape-prefixed records,
so checkpoints are byte-stable across reruns and loadable without pickle.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np
import torch

from .data import NormStats
from .diffusion import DiffusionSchedule
from .errors import ParameterError
from .models import LossWeights, ModelDims, SkillModel, build_variant

_TENSOR_MAGIC = b"SDTN"
_TENSOR_VERSION = 1
MANIFEST_NAME = "manifest.json"


def save_tensor_file(path: str | Path, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(_TENSOR_MAGIC)
        f.write(struct.pack("<II", _TENSOR_VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f4")  # tobytes() yields C order
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_tensor_file(path: str | Path) -> Dict[str, np.ndarray]:
    out: Dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != _TENSOR_MAGIC:
            raise ParameterError(f"{path} is not a tensor file")
        version, count = struct.unpack("<II", f.read(8))
        if version != _TENSOR_VERSION:
            raise ParameterError(f"unsupported tensor file version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            out[name] = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
    return out


def module_hash(module: torch.nn.Module) -> str:
    """SHA-256 over the module's parameters, in name order."""
    digest = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        digest.update(name.encode())
        digest.update(p.detach().numpy().astype("<f4").tobytes())
    return digest.hexdigest()


def decoder_hash(model: SkillModel) -> str:
    digest = hashlib.sha256()
    for p in model.decoder_parameters():
        digest.update(p.detach().numpy().astype("<f4").tobytes())
    return digest.hexdigest()


@dataclass
class ModelBundle:
    """A trained, frozen model plus everything needed to use it downstream."""

    variant: str
    model: SkillModel
    dims: ModelDims
    weights: LossWeights
    norms: NormStats
    sched: DiffusionSchedule
    steps: int
    config: dict

    def freeze(self) -> "ModelBundle":
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        return self


def save_bundle(out_dir: str | Path, bundle: ModelBundle) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    networks = {}
    for name, child in sorted(bundle.model.named_children()):
        fname = f"{name}.bin"
        tensors = {k: v.detach().numpy() for k, v in child.state_dict().items()}
        save_tensor_file(out / fname, tensors)
        networks[name] = fname
    manifest = {
        "variant": bundle.variant,
        "steps": bundle.steps,
        "dims": bundle.dims.__dict__,
        "loss_weights": bundle.weights.__dict__,
        "norm_stats": bundle.norms.to_json(),
        "schedule": bundle.sched.spec(),
        "networks": networks,
        "config": bundle.config,
    }
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return out


def load_bundle(ckpt_dir: str | Path) -> ModelBundle:
    src = Path(ckpt_dir)
    with open(src / MANIFEST_NAME) as f:
        manifest = json.load(f)
    dims = ModelDims(**manifest["dims"])
    weights = LossWeights(**manifest["loss_weights"])
    model = build_variant(manifest["variant"], dims)
    for name, fname in manifest["networks"].items():
        child = getattr(model, name)
        tensors = load_tensor_file(src / fname)
        child.load_state_dict({k: torch.from_numpy(v) for k, v in tensors.items()})
    bundle = ModelBundle(
        variant=manifest["variant"],
        model=model,
        dims=dims,
        weights=weights,
        norms=NormStats.from_json(manifest["norm_stats"]),
        sched=DiffusionSchedule.from_spec(manifest["schedule"]),
        steps=int(manifest["steps"]),
        config=manifest.get("config", {}),
    )
    return bundle.freeze()
