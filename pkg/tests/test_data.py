"""Dataset loading, splitting, blob generation, batching."""

import numpy as np
import pytest
from PIL import Image

from awgunet.data import (batches, load_dataset, make_synthetic_blobs,
                          split_dataset)
from awgunet.exceptions import ConfigError
from awgunet.pngio import load_mask_array, save_mask_png


def write_pair(root, stem, size=16, mask_value=255, image_mode="RGB"):
    (root / "images").mkdir(exist_ok=True, parents=True)
    (root / "masks").mkdir(exist_ok=True, parents=True)
    rng = np.random.default_rng(hash(stem) % 2**32)
    img = (rng.uniform(0, 255, (size, size, 3))).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(root / "images" / f"{stem}.png")
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[: size // 2] = mask_value
    Image.fromarray(mask, mode="L").save(root / "masks" / f"{stem}.png")


def test_load_dataset_sorted_and_shapes(tmp_path):
    for stem in ("charlie", "alpha", "bravo"):
        write_pair(tmp_path, stem)
    pairs = load_dataset(tmp_path / "images", tmp_path / "masks")
    assert [p.id for p in pairs] == ["alpha", "bravo", "charlie"]
    assert pairs[0].image.shape == (1, 3, 16, 16)
    assert pairs[0].mask.shape == (1, 1, 16, 16)
    assert pairs[0].image.data.min() >= 0.0 and pairs[0].image.data.max() <= 1.0


def test_mask_binarization_rule(tmp_path):
    write_pair(tmp_path, "a", mask_value=255)
    write_pair(tmp_path, "b", mask_value=127)  # not above half -> 0
    write_pair(tmp_path, "c", mask_value=128)  # above half -> 1
    pairs = load_dataset(tmp_path / "images", tmp_path / "masks")
    by_id = {p.id: p for p in pairs}
    assert set(np.unique(by_id["a"].mask.data)) == {0.0, 1.0}
    assert by_id["b"].mask.data.max() == 0.0
    assert by_id["c"].mask.data.max() == 1.0


def test_missing_mask_names_stem(tmp_path):
    write_pair(tmp_path, "present")
    (tmp_path / "images" / "orphan.png").write_bytes(
        (tmp_path / "images" / "present.png").read_bytes())
    with pytest.raises(ConfigError, match="orphan"):
        load_dataset(tmp_path / "images", tmp_path / "masks")


def test_size_mismatch_names_stem(tmp_path):
    write_pair(tmp_path, "odd")
    bad = np.zeros((8, 8), dtype=np.uint8)
    Image.fromarray(bad, mode="L").save(tmp_path / "masks" / "odd.png")
    with pytest.raises(ConfigError, match="odd"):
        load_dataset(tmp_path / "images", tmp_path / "masks")


def test_missing_directory_errors(tmp_path):
    with pytest.raises(ConfigError, match="masks"):
        write_pair(tmp_path, "x")
        load_dataset(tmp_path / "images", tmp_path / "nomasks")


def test_mask_roundtrip_lossless(tmp_path, rng):
    mask = (rng.uniform(0, 1, (12, 12)) > 0.5).astype(np.float32)
    path = tmp_path / "m.png"
    save_mask_png(path, mask)
    np.testing.assert_array_equal(load_mask_array(path)[0], mask)


def test_sixteen_bit_mask(tmp_path):
    arr = np.zeros((8, 8), dtype=np.uint16)
    arr[:4] = 65535
    arr[4:6] = 32767  # exactly half the 16-bit max -> 0
    Image.fromarray(arr).save(tmp_path / "m16.png")
    loaded = load_mask_array(tmp_path / "m16.png")[0]
    assert loaded[:4].min() == 1.0
    assert loaded[4:].max() == 0.0


# -- splitting --------------------------------------------------------------


def test_split_ten_pairs_default_fractions():
    pairs = make_synthetic_blobs(10, 32, seed=1)
    split = split_dataset(pairs, seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (7, 2, 1)
    all_ids = sorted(split.train + split.val + split.test)
    assert all_ids == sorted(p.id for p in pairs)


def test_split_degenerate_all_train():
    pairs = make_synthetic_blobs(5, 32, seed=2)
    split = split_dataset(pairs, fractions=(1.0, 0.0, 0.0), seed=0)
    assert len(split.train) == 5 and not split.val and not split.test


def test_split_deterministic():
    pairs = make_synthetic_blobs(9, 32, seed=3)
    a = split_dataset(pairs, seed=42)
    b = split_dataset(pairs, seed=42)
    assert (a.train, a.val, a.test) == (b.train, b.val, b.test)
    c = split_dataset(pairs, seed=43)
    assert (a.train, a.val, a.test) != (c.train, c.val, c.test)


def test_split_too_few_samples():
    pairs = make_synthetic_blobs(2, 32, seed=4)
    with pytest.raises(ConfigError, match="at least 3"):
        split_dataset(pairs)


def test_split_fraction_validation():
    pairs = make_synthetic_blobs(6, 32, seed=5)
    with pytest.raises(ConfigError, match="sum to 1"):
        split_dataset(pairs, fractions=(0.5, 0.2, 0.2))


# -- synthetic blobs ---------------------------------------------------------


def test_blobs_contract_seed7():
    pairs = make_synthetic_blobs(4, 64, seed=7)
    assert len(pairs) == 4
    for p in pairs:
        assert p.image.shape == (1, 3, 64, 64)
        assert p.mask.shape == (1, 1, 64, 64)
        assert p.mask.data.sum() > 0
        assert set(np.unique(p.mask.data)) <= {0.0, 1.0}


def test_blobs_deterministic():
    a = make_synthetic_blobs(3, 64, seed=9)
    b = make_synthetic_blobs(3, 64, seed=9)
    for pa, pb in zip(a, b):
        assert pa.image.data.tobytes() == pb.image.data.tobytes()
        assert pa.mask.data.tobytes() == pb.mask.data.tobytes()


def test_blob_mask_fraction_bounds_100_seeds():
    for seed in range(100):
        pair = make_synthetic_blobs(1, 64, seed=seed)[0]
        frac = float(pair.mask.data.mean())
        assert 0.02 < frac < 0.6, f"seed {seed}: fraction {frac}"


def test_blob_size_divisibility():
    with pytest.raises(ConfigError, match="divisible by 4"):
        make_synthetic_blobs(1, 30)


# -- batching ----------------------------------------------------------------


def test_batches_preserve_order_and_content():
    pairs = make_synthetic_blobs(5, 32, seed=6)
    got = list(batches(pairs, 2))
    assert [ids for _, _, ids in got] == [
        ["blob-000", "blob-001"], ["blob-002", "blob-003"], ["blob-004"]]
    np.testing.assert_array_equal(got[0][0].data[0], pairs[0].image.data[0])
    np.testing.assert_array_equal(got[2][1].data[0], pairs[4].mask.data[0])


def test_batches_twice_identical_without_shuffle():
    pairs = make_synthetic_blobs(4, 32, seed=8)
    first = [(img.data.tobytes(), ids) for img, _, ids in batches(pairs, 3)]
    second = [(img.data.tobytes(), ids) for img, _, ids in batches(pairs, 3)]
    assert first == second


def test_batches_shuffled_by_seeded_rng():
    pairs = make_synthetic_blobs(6, 32, seed=10)
    a = [ids for _, _, ids in batches(pairs, 2, rng=np.random.default_rng(0))]
    b = [ids for _, _, ids in batches(pairs, 2, rng=np.random.default_rng(0))]
    assert a == b
    flat = [i for chunk in a for i in chunk]
    assert sorted(flat) == sorted(p.id for p in pairs)


def test_augment_hook_applied():
    pairs = make_synthetic_blobs(2, 32, seed=11)

    def flip(pair):
        from awgunet.autodiff import Tensor
        from awgunet.data import SamplePair
        return SamplePair(id=pair.id,
                          image=Tensor(pair.image.data[:, :, :, ::-1].copy()),
                          mask=Tensor(pair.mask.data[:, :, :, ::-1].copy()))

    (images, masks, _), = list(batches(pairs[:1], 1, augment=flip))
    np.testing.assert_array_equal(images.data[0],
                                  pairs[0].image.data[0, :, :, ::-1])
