import numpy as np
import pytest
from scipy import ndimage

from freqmask.data import (
    DEFAULT_CONTRASTS,
    SplitSpec,
    VolumeFormat,
    generate_phantom_pairs,
    ingest_volumes,
    normalize_slice,
    read_manifest,
    read_volume,
    split_counts,
    split_dataset,
    stack_pairs,
    write_manifest,
    write_volume,
)


def _grad_mag(img):
    return np.hypot(ndimage.sobel(img, 0), ndimage.sobel(img, 1))


def test_aligned_pairs_share_edges():
    for p in generate_phantom_pairs(20, 32, seed=3):
        a, b = _grad_mag(p.reference).ravel(), _grad_mag(p.target).ravel()
        assert np.corrcoef(a, b)[0, 1] > 0.8


def test_same_seed_is_bit_identical():
    a = stack_pairs(generate_phantom_pairs(4, 24, seed=9, misalignment_sigma=1.0))
    b = stack_pairs(generate_phantom_pairs(4, 24, seed=9, misalignment_sigma=1.0))
    for x, y in zip(a, b):
        assert x.tobytes() == y.tobytes()


def test_swapped_contrasts_swap_images():
    a = generate_phantom_pairs(3, 20, seed=1)
    b = generate_phantom_pairs(3, 20, contrast_params=DEFAULT_CONTRASTS[::-1], seed=1)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.reference, q.target)
        np.testing.assert_array_equal(p.target, q.reference)


def test_pixelwise_function_of_shared_labels():
    for p in generate_phantom_pairs(5, 32, seed=2):
        # every reference intensity maps to a single target intensity
        for v in np.unique(p.target):
            assert len(np.unique(p.reference[p.target == v])) == 1


def test_misalignment_moves_reference_only():
    aligned = generate_phantom_pairs(2, 32, seed=4)
    moved = generate_phantom_pairs(2, 32, seed=4, misalignment_sigma=1.5)
    for p, q in zip(aligned, moved):
        np.testing.assert_array_equal(p.target, q.target)
        assert not np.array_equal(p.reference, q.reference)
        assert q.misalignment.shape == (2, 32, 32)


def test_values_in_unit_range_and_subject_slices():
    pairs = generate_phantom_pairs(3, 16, seed=0, slices_per_subject=4)
    assert len(pairs) == 12
    assert {p.subject_id for p in pairs} == {"sub0000", "sub0001", "sub0002"}
    assert [p.slice_index for p in pairs[:4]] == [0, 1, 2, 3]
    for p in pairs:
        assert 0 <= p.reference.min() and p.reference.max() <= 1


@pytest.mark.parametrize("kw", [dict(n_subjects=2, size=8), dict(n_subjects=0, size=32)])
def test_invalid_generation(kw):
    with pytest.raises(ValueError):
        generate_phantom_pairs(**kw)


# --- voxel files and ingestion ---------------------------------------------------------

@pytest.mark.parametrize("dtype", ["<f4", "<f8", "<i2", "<u2", "u1"])
def test_volume_round_trip(tmp_path, dtype):
    vol = (np.arange(2 * 3 * 4) % 7).reshape(2, 3, 4).astype(dtype)
    write_volume(tmp_path / "v.fmvx", vol)
    back = read_volume(tmp_path / "v.fmvx")
    assert back.dtype == np.dtype(dtype) and back.tobytes() == vol.tobytes()


def test_volume_header_layout(tmp_path):
    write_volume(tmp_path / "v.fmvx", np.zeros((5, 6, 7), dtype="<u2"))
    raw = (tmp_path / "v.fmvx").read_bytes()
    assert raw[:4] == b"FMVX"
    assert np.frombuffer(raw[4:20], "<u4").tolist() == [1, 5, 6, 7]
    assert raw[20:24] == b"u2\0\0"
    assert len(raw) == 24 + 5 * 6 * 7 * 2


@pytest.mark.parametrize("corrupt, message", [
    (lambda r: b"XXXX" + r[4:], "magic"),
    (lambda r: r[:4] + (9).to_bytes(4, "little") + r[8:], "version"),
    (lambda r: r[:20] + b"c8\0\0" + r[24:], "dtype"),
    (lambda r: r[:-3], "payload"),
    (lambda r: r[:10], "header"),
])
def test_volume_errors_are_descriptive(tmp_path, corrupt, message):
    path = tmp_path / "v.fmvx"
    write_volume(path, np.zeros((2, 2, 2), dtype="<f4"))
    path.write_bytes(corrupt(path.read_bytes()))
    with pytest.raises(ValueError, match=message):
        read_volume(path)


def test_write_volume_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_volume(tmp_path / "a.fmvx", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        write_volume(tmp_path / "a.fmvx", np.zeros((2, 2, 2), dtype=np.complex64))


def _write_subject(root, name, n_slices=30, shape=(12, 12), target_shape=None):
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    ref = rng.random((n_slices, *shape)).astype("<f4")
    tgt = rng.random((n_slices, *(target_shape or shape))).astype("<f4")
    ref[:, 0, 0] = np.arange(n_slices)  # tag slices so indices can be recovered
    write_volume(root / f"{name}_ref.fmvx", ref)
    write_volume(root / f"{name}_tgt.fmvx", tgt)


def test_ingest_takes_central_twenty_slices(tmp_path):
    _write_subject(tmp_path, "s01")
    pairs = ingest_volumes(tmp_path)
    assert [p.slice_index for p in pairs] == list(range(5, 25))
    for p in pairs:
        assert p.reference.min() == 0.0 and p.reference.max() == 1.0
        assert p.target.min() == 0.0 and p.target.max() == 1.0


def test_ingest_resizes_to_square(tmp_path):
    _write_subject(tmp_path, "s01", n_slices=4, shape=(20, 16))
    pairs = ingest_volumes(tmp_path, VolumeFormat(size=8))
    assert len(pairs) == 4 and pairs[0].reference.shape == (8, 8)


def test_ingest_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        ingest_volumes(tmp_path / "missing")
    with pytest.raises(FileNotFoundError):
        ingest_volumes(tmp_path)
    _write_subject(tmp_path, "bad", n_slices=4, target_shape=(10, 12))
    with pytest.raises(ValueError, match="differ"):
        ingest_volumes(tmp_path)
    (tmp_path / "bad_tgt.fmvx").unlink()
    with pytest.raises(FileNotFoundError, match="target"):
        ingest_volumes(tmp_path)


def test_normalize_slice():
    assert not normalize_slice(np.full((4, 4), 3.0)).any()
    out = normalize_slice(np.array([[2.0, 4.0], [6.0, 3.0]]))
    assert out.min() == 0.0 and out.max() == 1.0 and out[1, 1] == 0.25


# --- splitting -----------------------------------------------------------------------------

@pytest.mark.parametrize("n, expected", [(10, [7, 1, 2]), (570, [399, 57, 114]), (11, [8, 1, 2]),
                                         (13, [9, 1, 3]), (50, [35, 5, 10])])
def test_largest_remainder_counts(n, expected):
    assert split_counts(n, (7, 1, 2)) == expected


def test_split_is_subject_level_disjoint_and_deterministic():
    pairs = generate_phantom_pairs(20, 16, seed=0, slices_per_subject=3)
    a = split_dataset(pairs, SplitSpec(seed=5))
    b = split_dataset(pairs, SplitSpec(seed=5))
    subj = [{p.subject_id for p in part} for part in a]
    assert [len(s) for s in subj] == [14, 2, 4]
    assert not (subj[0] & subj[1]) and not (subj[0] & subj[2]) and not (subj[1] & subj[2])
    assert sum(len(part) for part in a) == len(pairs)
    assert [[id(p) for p in part] for part in a] == [[id(p) for p in part] for part in b]
    c = split_dataset(pairs, SplitSpec(seed=6))
    assert [{p.subject_id for p in part} for part in c] != subj


def test_split_needs_ten_subjects():
    with pytest.raises(ValueError):
        split_dataset(generate_phantom_pairs(9, 16), SplitSpec())


def test_manifest_round_trip(tmp_path):
    pairs = generate_phantom_pairs(10, 16, seed=0, slices_per_subject=2)
    splits = split_dataset(pairs)
    write_manifest(tmp_path / "m.csv", splits)
    rows = read_manifest(tmp_path / "m.csv")
    assert len(rows) == 20
    assert {r[2] for r in rows} == {"train", "val", "test"}
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "subject_id,slice_index,split"
