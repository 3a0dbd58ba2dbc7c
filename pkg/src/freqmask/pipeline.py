"""Pipeline stages operating on a run directory.

Each stage reads its inputs from earlier stages (in the run directory, or in
``cfg.upstream`` when missing there), writes into its own sub-directory and
echoes the resolved config next to its outputs.
"""

import csv
import logging
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, stage_seed
from .data import (
    SplitSpec,
    VolumeFormat,
    generate_phantom_pairs,
    ingest_volumes,
    split_dataset,
    write_manifest,
)
from .diffusion import DiffusionConfig, compute_fep, sample_conditional, train_denoiser
from .io import load_denoiser, load_grid, load_network, save_denoiser, save_grid, save_network, save_png
from .sampling import (
    AccelerationSpec,
    LearnableMask,
    column_density,
    equispaced_mask,
    variable_density_mask,
)
from .training import (
    LossConfig,
    OptimizerConfig,
    evaluate,
    finetune,
    format_table,
    joint_optimize,
    learned_discrete_mask,
)
from .unfolding import UnfoldingNet

logger = logging.getLogger(__name__)

__all__ = [
    "MissingArtifactError",
    "STAGES",
    "acceleration_spec",
    "fixed_mask",
    "build_network",
    "central_band",
    "synth_data",
    "load_split",
    "train_diffusion",
    "fep",
    "train_joint",
    "binarize",
    "finetune_stage",
    "evaluate_stage",
    "compare_masks",
    "run_all",
]

DATASET = "data/dataset.npz"
DENOISER = "diffusion/denoiser.pt"
FEP = "fep/fep.npz"
JOINT_NET = "joint/net.pt"
JOINT_MASK = "joint/p_mask.npz"
MASK = "binarize/mask.npz"
FINAL_NET = "finetune/net.pt"


class MissingArtifactError(FileNotFoundError):
    """An upstream stage output is not available."""


def _stage_dir(cfg, name):
    d = cfg.resolved_output() / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(cfg.to_text())
    return d


def _find(cfg, rel, producer):
    roots = [cfg.resolved_output()] + ([Path(cfg.upstream)] if cfg.upstream else [])
    for root in roots:
        if (root / rel).exists():
            return root / rel
    raise MissingArtifactError(f"{rel} not found under {', '.join(map(str, roots))}; run '{producer}' first")


def _fresh(path):
    path = Path(path)
    if path.exists():
        path.unlink()
    return path


def acceleration_spec(cfg):
    if cfg.center_fraction < 0:
        return AccelerationSpec.from_rate(cfg.rate)
    return AccelerationSpec(cfg.rate, cfg.center_fraction)


def fixed_mask(cfg, shape=None):
    shape = shape or (cfg.size, cfg.size)
    spec = acceleration_spec(cfg)
    if cfg.mask_mode == "equispaced":
        return equispaced_mask(shape, spec)
    if cfg.mask_mode == "variable_density":
        return variable_density_mask(shape, spec, seed=stage_seed(cfg.seed, "variable_density"))
    raise ValueError(f"mask mode {cfg.mask_mode!r} is learned, not fixed")


def build_network(cfg):
    torch.manual_seed(stage_seed(cfg.seed, "network"))
    return UnfoldingNet(
        channels=cfg.channels, iterations=cfg.iterations, prox_blocks=cfg.prox_blocks,
        init_blocks=cfg.init_blocks, ablation=cfg.ablation,
    )


def _loss_cfg(cfg):
    return LossConfig(cfg.lambda1, cfg.lambda2, cfg.loss_alpha, cfg.loss_beta, cfg.blur_sigma,
                      cfg.loss_kind)


def _opt_cfg(cfg, stage, epochs):
    return OptimizerConfig(
        lr=cfg.lr, mask_lr=None if cfg.mask_lr < 0 else cfg.mask_lr, batch_size=cfg.batch_size,
        epochs=epochs, seed=stage_seed(cfg.seed, stage), clip_norm=cfg.clip_norm,
        noise_sigma=cfg.noise_sigma,
    )


def central_band(n):
    """Column indices of the central half of ``n`` k-space columns."""
    width = max(1, n // 2)
    start = (n - width + 1) // 2
    return np.arange(start, start + width)


# --- data -----------------------------------------------------------------

def synth_data(cfg):
    """Generate (or ingest) paired slices and split them by subject."""
    out = _stage_dir(cfg, "data")
    if cfg.data_dir:
        pairs = ingest_volumes(cfg.data_dir, VolumeFormat(size=cfg.size))
    else:
        pairs = generate_phantom_pairs(
            cfg.n_subjects, cfg.size, misalignment_sigma=cfg.misalignment_sigma,
            seed=stage_seed(cfg.seed, "phantoms"), slices_per_subject=cfg.slices_per_subject,
        )
    splits = split_dataset(pairs, SplitSpec(cfg.ratios(), stage_seed(cfg.seed, "split")))
    labels = [name for name, part in zip(("train", "val", "test"), splits) for _ in part]
    ordered = [p for part in splits for p in part]
    np.savez(
        out / "dataset.npz",
        targets=np.stack([p.target for p in ordered]),
        references=np.stack([p.reference for p in ordered]),
        subjects=np.array([p.subject_id for p in ordered]),
        slices=np.array([p.slice_index for p in ordered]),
        split=np.array(labels),
    )
    write_manifest(out / "manifest.csv", splits)
    counts = {name: len(part) for name, part in zip(("train", "val", "test"), splits)}
    logger.info("dataset: %s", counts)
    return counts


def load_split(cfg, name):
    """``(targets, references)`` of one split, plus subject ids and slice indices."""
    with np.load(_find(cfg, DATASET, "synth-data")) as f:
        sel = f["split"] == name
        return (f["targets"][sel], f["references"][sel]), f["subjects"][sel], f["slices"][sel]


# --- diffusion prior --------------------------------------------------------

def train_diffusion(cfg):
    (tgt, ref), _, _ = load_split(cfg, "train")
    out = _stage_dir(cfg, "diffusion")
    dcfg = DiffusionConfig(
        lr=cfg.diff_lr, epochs=cfg.diff_epochs, batch_size=cfg.diff_batch_size,
        ema_decay=cfg.diff_ema, base_width=cfg.diff_width, T=cfg.diff_timesteps,
        seed=stage_seed(cfg.seed, "diffusion"),
    )
    den = train_denoiser(tgt, ref, dcfg)
    save_denoiser(out / "denoiser.pt", den)
    return den


def fep(cfg):
    """Synthesize each training target and store its normalized k-space error."""
    (tgt, ref), _, _ = load_split(cfg, "train")
    den = load_denoiser(_find(cfg, DENOISER, "train-diffusion"))
    out = _stage_dir(cfg, "fep")
    steps = cfg.sample_steps if cfg.sample_steps > 0 else None
    synth = sample_conditional(den, ref, seed=stage_seed(cfg.seed, "sampling"), steps=steps)
    prior = compute_fep(synth, tgt)
    save_grid(out / "fep.npz", prior.r_norm, kind="fep_normalized", seed=cfg.seed)
    np.save(out / "synthesized.npy", synth)
    save_png(out / "mean_fep.png", prior.r_norm.mean(axis=0))
    return prior.r_norm


def _train_prior(cfg, targets):
    if cfg.mask_mode == "learned_fep":
        grid, _ = load_grid(_find(cfg, FEP, "fep"))
        if grid.shape != targets.shape:
            raise ValueError(f"prior grids {grid.shape} do not match the training set {targets.shape}")
        return grid
    return np.zeros(targets.shape)


# --- reconstruction -------------------------------------------------------

def train_joint(cfg):
    """Learn network weights and, for learned modes, the mask logits."""
    train, _, _ = load_split(cfg, "train")
    val, _, _ = load_split(cfg, "val")
    out = _stage_dir(cfg, "joint")
    log = _fresh(out / "train_log.jsonl")
    net = build_network(cfg)
    if cfg.mask_mode.startswith("learned"):
        prior = _train_prior(cfg, train[0])
        spec = acceleration_spec(cfg)
        mask_module = LearnableMask(prior.shape[1:], spec, seed=stage_seed(cfg.seed, "mask"))
        res = joint_optimize(train, val, net, mask_module, prior, _opt_cfg(cfg, "joint", cfg.epochs),
                             _loss_cfg(cfg), log)
        save_grid(out / "p_mask.npz", res.mask.p_mask.detach().double().numpy(),
                  gamma=spec.gamma, center_fraction=spec.center_fraction, seed=cfg.seed)
    else:
        res = finetune(train, val, net, fixed_mask(cfg, train[0].shape[1:]),
                       _opt_cfg(cfg, "joint", cfg.epochs), _loss_cfg(cfg), log)
    save_network(out / "net.pt", res.net, best_epoch=res.best_epoch, best_val_loss=res.best_val_loss,
                 mask_mode=cfg.mask_mode)
    return res


def binarize(cfg):
    """Write the discrete mask used for fine-tuning and evaluation."""
    out = _stage_dir(cfg, "binarize")
    spec = acceleration_spec(cfg)
    if cfg.mask_mode.startswith("learned"):
        train, _, _ = load_split(cfg, "train")
        p, _ = load_grid(_find(cfg, JOINT_MASK, "train-joint"))
        mask_module = LearnableMask(p.shape, spec)
        with torch.no_grad():
            mask_module.p_mask.copy_(torch.from_numpy(p))
        prior = _train_prior(cfg, train[0])
        mask = learned_discrete_mask(mask_module, prior, seed=stage_seed(cfg.seed, "binarize"))
    else:
        mask = fixed_mask(cfg)
    save_grid(out / "mask.npz", mask, gamma=spec.gamma, center_fraction=spec.center_fraction,
              seed=cfg.seed, mask_mode=cfg.mask_mode)
    save_png(out / "mask.png", mask)
    return mask


def finetune_stage(cfg):
    train, _, _ = load_split(cfg, "train")
    val, _, _ = load_split(cfg, "val")
    net, _ = load_network(_find(cfg, JOINT_NET, "train-joint"))
    mask, _ = load_grid(_find(cfg, MASK, "binarize"))
    out = _stage_dir(cfg, "finetune")
    log = _fresh(out / "train_log.jsonl")
    res = finetune(train, val, net, mask, _opt_cfg(cfg, "finetune", cfg.finetune_epochs),
                   _loss_cfg(cfg), log)
    save_network(out / "net.pt", res.net, best_epoch=res.best_epoch, best_val_loss=res.best_val_loss,
                 mask_mode=cfg.mask_mode)
    return res


def _eval_mask(cfg, shape):
    if not cfg.mask_mode.startswith("learned"):
        return fixed_mask(cfg, shape)
    path = _find(cfg, MASK, "binarize")
    mask, header = load_grid(path)
    gamma = acceleration_spec(cfg).gamma
    if header.get("mask_mode") != cfg.mask_mode or not np.isclose(header.get("gamma", -1), gamma):
        raise ValueError(f"{path} holds a {header.get('mask_mode')} mask at sampling fraction "
                         f"{header.get('gamma')}, but the config asks for {cfg.mask_mode} at {gamma}")
    return mask


def _eval_net(cfg):
    if cfg.eval_net in ("identity", "zero_filled"):
        return None
    for rel in (FINAL_NET, JOINT_NET):
        try:
            return load_network(_find(cfg, rel, "finetune"))[0]
        except MissingArtifactError:
            continue
    raise MissingArtifactError("no trained network found; run 'train-joint' and 'finetune' first")


def evaluate_stage(cfg):
    """Score the test split; writes ``metrics.tsv`` and ``per_image.csv``."""
    test, subjects, slices = load_split(cfg, "test")
    mask = _eval_mask(cfg, test[0].shape[1:])
    net = _eval_net(cfg)
    out = _stage_dir(cfg, "eval")
    label = f"{cfg.mask_mode}/{cfg.ablation}" if net is not None else f"{cfg.mask_mode}/{cfg.eval_net}"
    rows = {label: evaluate(test, net, mask)}
    if net is not None:
        rows["zero_filled"] = evaluate(test, None, mask)
    (out / "metrics.tsv").write_text(format_table({k: v.summary() for k, v in rows.items()}))
    with open(out / "per_image.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "subject_id", "slice_index", "psnr", "ssim", "rmse"])
        for name, res in rows.items():
            for s, z, r in zip(subjects, slices, res.reports):
                w.writerow([name, s, int(z), repr(r.psnr), repr(r.ssim), repr(r.rmse)])
    return rows


# --- mask comparison ------------------------------------------------------

def _compare_entries(cfg):
    entries = []
    if cfg.compare_masks:
        for item in cfg.compare_masks.split(","):
            if "=" not in item:
                raise ValueError(f"compare_masks entries must be label=path, got {item!r}")
            label, path = (s.strip() for s in item.split("=", 1))
            p = Path(path)
            if p.is_dir():
                p = p / MASK
            if not p.exists():
                raise MissingArtifactError(f"mask file {p} not found")
            entries.append((label, load_grid(p)[0]))
        return entries
    shape = (cfg.size, cfg.size)
    for mode in ("equispaced", "variable_density"):
        entries.append((mode, fixed_mask(cfg.replace(mask_mode=mode), shape)))
    try:
        entries.append((cfg.mask_mode, load_grid(_find(cfg, MASK, "binarize"))[0]))
    except MissingArtifactError:
        pass
    return entries


def compare_masks(cfg):
    """Export masks, column-density profiles and a summary table."""
    entries = _compare_entries(cfg)
    if not entries:
        raise MissingArtifactError("no masks to compare")
    out = _stage_dir(cfg, "compare")
    profiles = {}
    lines = ["mask\tsampled_fraction\tcentral_band_density\touter_density"]
    for label, mask in entries:
        safe = label.replace("/", "_")
        save_png(out / f"{safe}.png", mask)
        prof = column_density(mask)
        profiles[label] = prof
        band = central_band(len(prof))
        outer = np.setdiff1d(np.arange(len(prof)), band)
        lines.append(f"{label}\t{mask.mean():.6f}\t{prof[band].mean():.6f}\t{prof[outer].mean():.6f}")
    (out / "summary.tsv").write_text("\n".join(lines) + "\n")
    n = max(len(p) for p in profiles.values())
    with open(out / "profiles.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", *profiles])
        for c in range(n):
            w.writerow([c, *(f"{p[c]:.6f}" if c < len(p) else "" for p in profiles.values())])
    return profiles


STAGES = {
    "synth-data": synth_data,
    "train-diffusion": train_diffusion,
    "fep": fep,
    "train-joint": train_joint,
    "binarize": binarize,
    "finetune": finetune_stage,
    "eval": evaluate_stage,
    "compare-masks": compare_masks,
}


def run_all(cfg: ExperimentConfig):
    """Run every stage in order; the prior stages are skipped for modes that
    do not use them."""
    for name, stage in STAGES.items():
        if name in ("train-diffusion", "fep") and cfg.mask_mode != "learned_fep":
            continue
        logger.info("stage %s", name)
        stage(cfg)

