"""Paired-contrast data: synthetic phantoms, a raw voxel container, volume
ingestion and subject-level splitting."""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

__all__ = [
    "ContrastPair",
    "DEFAULT_CONTRASTS",
    "generate_phantom_pairs",
    "stack_pairs",
    "write_volume",
    "read_volume",
    "VolumeFormat",
    "ingest_volumes",
    "normalize_slice",
    "SplitSpec",
    "split_counts",
    "split_dataset",
    "write_manifest",
    "read_manifest",
]


@dataclass
class ContrastPair:
    reference: np.ndarray
    target: np.ndarray
    subject_id: str
    slice_index: int
    misalignment: Optional[np.ndarray] = field(default=None, repr=False)


# label -> intensity. Labels: 0 background, 1 scalp, 2 white matter,
# 3 grey matter, 4 fluid, 5 deep nuclei, 6 lesion.
# The lesion matches white matter in the reference, so only the target shows it.
DEFAULT_CONTRASTS = (
    (0.0, 1.00, 0.55, 0.70, 0.85, 0.60, 0.55),
    (0.0, 0.60, 0.30, 0.50, 1.00, 0.40, 0.75),
)


def _ellipse(shape, cy, cx, ry, rx, theta):
    yy, xx = np.mgrid[: shape[0], : shape[1]].astype(np.float64)
    yy -= cy
    xx -= cx
    c, s = np.cos(theta), np.sin(theta)
    u = (xx * c + yy * s) / rx
    v = (-xx * s + yy * c) / ry
    return u * u + v * v <= 1.0


def _subject_geometry(rng, size):
    n = size
    geo = {
        "head": (n / 2 + rng.uniform(-0.03, 0.03) * n, n / 2 + rng.uniform(-0.03, 0.03) * n,
                 rng.uniform(0.40, 0.46) * n, rng.uniform(0.33, 0.40) * n, rng.uniform(-0.2, 0.2)),
        "blobs": [],
    }
    for label, count, (rmin, rmax) in ((3, 4, (0.06, 0.14)), (4, 2, (0.04, 0.09)),
                                       (5, 2, (0.05, 0.08)), (6, 2, (0.03, 0.07))):
        for _ in range(count):
            ang = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0.0, 0.22) * n
            geo["blobs"].append((label, rad * np.sin(ang), rad * np.cos(ang),
                                 rng.uniform(rmin, rmax) * n, rng.uniform(rmin, rmax) * n,
                                 rng.uniform(0, np.pi)))
    return geo


def _label_map(geo, size, slice_offset):
    shape = (size, size)
    cy, cx, ry, rx, th = geo["head"]
    # neighbouring slices shrink slightly away from the centre slice
    scale = 1.0 - 0.04 * abs(slice_offset)
    labels = np.zeros(shape, dtype=np.int64)
    labels[_ellipse(shape, cy, cx, ry * scale, rx * scale, th)] = 1
    labels[_ellipse(shape, cy, cx, 0.86 * ry * scale, 0.86 * rx * scale, th)] = 2
    for label, dy, dx, by, bx, bth in geo["blobs"]:
        region = _ellipse(shape, cy + dy * scale, cx + dx * scale, by * scale, bx * scale, bth)
        labels[region & (labels >= 2)] = label
    return labels


def _smooth_displacement(rng, size, sigma):
    coarse = rng.normal(0.0, sigma, size=(2, 4, 4))
    return np.stack([ndimage.zoom(c, size / 4, order=3) for c in coarse])[:, :size, :size]


def generate_phantom_pairs(n_subjects, size=32, contrast_params=DEFAULT_CONTRASTS,
                           misalignment_sigma=0.0, seed=0, slices_per_subject=1):
    """Random head-like phantoms imaged under two contrasts.

    Each subject gets its own ellipse geometry; slices of one subject share it
    with a mild per-slice scaling. Reference and target apply the two
    label-to-intensity maps in ``contrast_params`` to the same label map. With
    ``misalignment_sigma > 0`` the reference is warped by a smooth random
    displacement of roughly that many pixels.
    """
    if size < 16:
        raise ValueError(f"size must be at least 16, got {size}")
    if n_subjects < 1:
        raise ValueError("need at least one subject")
    ref_map = np.asarray(contrast_params[0], dtype=np.float64)
    tgt_map = np.asarray(contrast_params[1], dtype=np.float64)
    # separate streams so switching warps on leaves the anatomy unchanged
    anatomy_seq, warp_seq = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.default_rng(anatomy_seq)
    warp_rng = np.random.default_rng(warp_seq)
    pairs = []
    mid = (slices_per_subject - 1) / 2
    for s in range(n_subjects):
        geo = _subject_geometry(rng, size)
        for k in range(slices_per_subject):
            labels = _label_map(geo, size, k - mid)
            ref = ref_map[labels]
            tgt = tgt_map[labels]
            disp = None
            if misalignment_sigma > 0:
                disp = _smooth_displacement(warp_rng, size, misalignment_sigma)
                grid = np.mgrid[:size, :size].astype(np.float64)
                ref = ndimage.map_coordinates(ref, grid + disp, order=1, mode="nearest")
            pairs.append(ContrastPair(ref, tgt, f"sub{s:04d}", k, disp))
    return pairs


def stack_pairs(pairs):
    """Return ``(targets, references)`` as ``(N, H, W)`` arrays."""
    if not pairs:
        raise ValueError("no pairs to stack")
    return (np.stack([p.target for p in pairs]), np.stack([p.reference for p in pairs]))


# --- raw voxel container -------------------------------------------------
#
# offset  size  content
# 0       4     magic b"FMVX"
# 4       4     uint32 version (1)
# 8       12    uint32 dims (slices, rows, cols)
# 20      4     dtype code, ASCII, NUL padded: f4 f8 i2 u2 u1
# 24      ...   voxels, little-endian, C order
_MAGIC = b"FMVX"
_HEADER = struct.Struct("<4sI3I4s")
_DTYPES = {"f4": "<f4", "f8": "<f8", "i2": "<i2", "u2": "<u2", "u1": "u1"}


def write_volume(path, volume):
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise ValueError("volume must be 3-D (slices, rows, cols)")
    code = next((c for c, d in _DTYPES.items() if np.dtype(d) == vol.dtype.newbyteorder("<")), None)
    if code is None:
        raise ValueError(f"unsupported dtype {vol.dtype}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, *vol.shape, code.encode().ljust(4, b"\0")))
        fh.write(np.ascontiguousarray(vol, dtype=_DTYPES[code]).tobytes())


def read_volume(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file shorter than the {_HEADER.size}-byte header")
    magic, version, nz, ny, nx, code = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != 1:
        raise ValueError(f"{path}: unsupported version {version}")
    code = code.rstrip(b"\0").decode("ascii", errors="replace")
    if code not in _DTYPES:
        raise ValueError(f"{path}: unknown dtype code {code!r}")
    dtype = np.dtype(_DTYPES[code])
    expected = nz * ny * nx * dtype.itemsize
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise ValueError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)


@dataclass
class VolumeFormat:
    """Directory layout for :func:`ingest_volumes`.

    Each subject contributes ``<id>_<reference_suffix>.fmvx`` and
    ``<id>_<target_suffix>.fmvx``.
    """

    reference_suffix: str = "ref"
    target_suffix: str = "tgt"
    n_slices: int = 20
    size: Optional[int] = None


def normalize_slice(img):
    """Min-max scale to [0, 1]; constant slices become all zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def _square(img, size):
    h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    img = img[top : top + side, left : left + side]
    if size is not None and size != side:
        img = ndimage.zoom(img, size / side, order=1)
    return img


def central_slices(n_total, n_keep):
    start = max(0, (n_total - n_keep) // 2)
    return list(range(start, min(n_total, start + n_keep)))


def ingest_volumes(path, format_spec=None):
    """Load co-registered two-contrast volumes as slice pairs."""
    fmt = format_spec or VolumeFormat()
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    ref_tag = f"_{fmt.reference_suffix}.fmvx"
    pairs = []
    for ref_path in sorted(root.glob(f"*{ref_tag}")):
        subject = ref_path.name[: -len(ref_tag)]
        tgt_path = root / f"{subject}_{fmt.target_suffix}.fmvx"
        if not tgt_path.exists():
            raise FileNotFoundError(f"missing target volume {tgt_path}")
        ref_vol, tgt_vol = read_volume(ref_path), read_volume(tgt_path)
        if ref_vol.shape != tgt_vol.shape:
            raise ValueError(
                f"subject {subject}: reference {ref_vol.shape} and target {tgt_vol.shape} differ"
            )
        do_square = fmt.size is not None or ref_vol.shape[1] != ref_vol.shape[2]
        for z in central_slices(ref_vol.shape[0], fmt.n_slices):
            ref, tgt = ref_vol[z].astype(np.float64), tgt_vol[z].astype(np.float64)
            if do_square:
                ref, tgt = _square(ref, fmt.size), _square(tgt, fmt.size)
            pairs.append(ContrastPair(normalize_slice(ref), normalize_slice(tgt), subject, z))
    if not pairs:
        raise FileNotFoundError(f"no '*{ref_tag}' volumes found in {root}")
    return pairs


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (7, 1, 2)
    seed: int = 0


def split_counts(n, ratios):
    """Largest-remainder apportionment of ``n`` items to ``ratios``."""
    total = float(sum(ratios))
    quotas = [n * r / total for r in ratios]
    counts = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def split_dataset(pairs, spec=None):
    """Subject-level train/val/test split.

    Subjects are shuffled with ``spec.seed`` and cut into contiguous blocks
    sized by :func:`split_counts`.
    """
    spec = spec or SplitSpec()
    subjects = sorted({p.subject_id for p in pairs})
    if len(subjects) < 10:
        raise ValueError(f"need at least 10 subjects to split, got {len(subjects)}")
    order = np.random.default_rng(spec.seed).permutation(len(subjects))
    shuffled = [subjects[i] for i in order]
    n_train, n_val, _ = split_counts(len(subjects), spec.ratios)
    groups = (
        set(shuffled[:n_train]),
        set(shuffled[n_train : n_train + n_val]),
        set(shuffled[n_train + n_val :]),
    )
    return tuple([p for p in pairs if p.subject_id in g] for g in groups)


def write_manifest(path, splits):
    """CSV with columns subject_id, slice_index, split."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "slice_index", "split"])
        for name, pairs in zip(("train", "val", "test"), splits):
            for p in pairs:
                writer.writerow([p.subject_id, p.slice_index, name])


def read_manifest(path):
    with open(path, newline="") as fh:
        return [
            (row["subject_id"], int(row["slice_index"]), row["split"])
            for row in csv.DictReader(fh)
        ]
