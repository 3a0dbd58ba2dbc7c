"""On-disk formats: grids with headers, inspection images and checkpoints."""

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .diffusion import Denoiser, DiffusionConfig, NoiseSchedule, UNetDenoiser
from .unfolding import UnfoldingNet

__all__ = [
    "save_grid",
    "load_grid",
    "save_png",
    "save_network",
    "load_network",
    "save_denoiser",
    "load_denoiser",
]


def save_grid(path, grid, **header):
    """Store a 2-D (or stacked) grid with a JSON header in an ``.npz`` file.

    Typical header keys: ``gamma``, ``center_fraction``, ``seed``.
    """
    grid = np.asarray(grid)
    header = {"shape": list(grid.shape), **header}
    np.savez(path, grid=grid, header=np.array(json.dumps(header, sort_keys=True)))


def load_grid(path):
    with np.load(path) as f:
        return f["grid"], json.loads(str(f["header"]))


def save_png(path, grid):
    """Lossless inspection image; binary grids as 8-bit, others as 16-bit."""
    g = np.asarray(grid, dtype=np.float64)
    if np.isin(g, (0.0, 1.0)).all():
        Image.fromarray((g * 255).astype(np.uint8)).save(path)
        return
    lo, hi = g.min(), g.max()
    scaled = np.zeros_like(g) if hi == lo else (g - lo) / (hi - lo)
    Image.fromarray((scaled * 65535).round().astype(np.uint16)).save(path)


def _write_manifest(path, manifest):
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def save_network(path, net, **extra):
    """Weights to ``path`` and a JSON manifest next to it (``.json``)."""
    path = Path(path)
    torch.save(net.state_dict(), path)
    manifest = {"kind": "unfolding_net", **net.hyperparameters(),
                "stage_values": net.stage_values(), **extra}
    _write_manifest(path.with_suffix(".json"), manifest)


def load_network(path, dtype=torch.float32):
    path = Path(path)
    m = json.loads(path.with_suffix(".json").read_text())
    net = UnfoldingNet(
        channels=m["channels"], iterations=m["iterations"], prox_blocks=m["prox_blocks"],
        init_blocks=m["init_blocks"], ablation=m["ablation"], prox=m["prox"],
        lambdas=m.get("lambdas"), tied_adjoint=m.get("tied_adjoint", False),
        res_scale=m.get("res_scale", 0.1),
    ).to(dtype)
    net.load_state_dict(torch.load(path, weights_only=True))
    net.eval()
    return net, m


def save_denoiser(path, den, **extra):
    path = Path(path)
    torch.save({"model": den.model.state_dict(), "ema": den.ema.state_dict(),
                "betas": torch.from_numpy(den.schedule.betas)}, path)
    cfg = vars(den.config).copy()
    _write_manifest(path.with_suffix(".json"), {"kind": "denoiser", **cfg, **extra,
                                                "loss_history": den.loss_history})


def load_denoiser(path):
    path = Path(path)
    m = json.loads(path.with_suffix(".json").read_text())
    blob = torch.load(path, weights_only=True)
    fields = DiffusionConfig.__dataclass_fields__
    cfg = DiffusionConfig(**{k: v for k, v in m.items() if k in fields})
    model, ema = UNetDenoiser(cfg.base_width), UNetDenoiser(cfg.base_width)
    model.load_state_dict(blob["model"])
    ema.load_state_dict(blob["ema"])
    sched = NoiseSchedule(blob["betas"].numpy())
    return Denoiser(model, ema, sched, cfg, m.get("loss_history", []))
