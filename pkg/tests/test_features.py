import numpy as np
import pytest

from zfrac import features as feat
from zfrac import kernels
from zfrac.features import (
    ExtractConfig,
    FeatureError,
    batch_extract,
    block_radii,
    extract_prewitt,
    extract_zfrac,
    read_zft1,
    validate_schedule,
    write_zft1,
)
from zfrac.imagio import DatasetManifest, ManifestEntry, write_pgm

FIXED = ExtractConfig(threshold=128)


class TestSchedule:
    def test_block_radii(self):
        assert block_radii(2) == [1, 2]
        assert block_radii(4) == [1, 2]
        assert block_radii(8) == [1, 2, 4]
        assert block_radii(32) == [1, 2, 4, 8, 16]

    def test_validate(self):
        assert validate_schedule((2, 4), 16) == [2, 4]
        with pytest.raises(FeatureError):
            validate_schedule((3,), 16)
        with pytest.raises(FeatureError):
            validate_schedule((4, 2), 16)
        with pytest.raises(FeatureError, match="half"):
            validate_schedule((16,), 16)

    def test_full_schedule(self):
        assert feat.full_schedule(256) == [2, 4, 8, 16, 32, 64, 128]


class TestExtractZfrac:
    def test_filled_blocks_have_fd_2(self):
        # each filled 2x2 block fits points (1,4),(2,1) -> slope 2
        img = np.full((4, 4), 255, np.uint8)
        vec = extract_zfrac(img, (2,), FIXED)
        assert vec.values.tolist() == [2.0, 2.0, 2.0, 2.0]
        assert vec.degenerate_count == 0

    def test_length_law_256(self):
        img = np.zeros((256, 256), np.uint8)
        img[::3, ::5] = 200
        vec = extract_zfrac(img, (2, 4, 8, 16, 32), FIXED)
        assert len(vec.values) == 128**2 + 64**2 + 32**2 + 16**2 + 8**2 == 21824

    def test_all_zero_image(self):
        img = np.zeros((16, 16), np.uint8)
        vec = extract_zfrac(img, (2, 4))
        assert not vec.values.any()
        assert vec.degenerate_count == 64 + 16

    def test_value_range(self, rng):
        img = (rng.random((64, 64)) * 255).astype(np.uint8)
        vec = extract_zfrac(img, (2, 4, 8))
        assert (vec.values >= 0).all() and (vec.values <= 2.0).all()

    def test_block_locality(self, rng):
        img = (rng.random((16, 16)) * 200).astype(np.uint8)
        base = extract_zfrac(img, (4,), FIXED)
        edited = img.copy()
        edited[0:4, 0:4] = 255  # inside block 0 only
        after = extract_zfrac(edited, (4,), FIXED)
        assert np.array_equal(base.values[1:], after.values[1:])

    def test_repeat_determinism(self, rng):
        img = (rng.random((32, 32)) * 255).astype(np.uint8)
        a = extract_zfrac(img, (2, 4, 8))
        b = extract_zfrac(img, (2, 4, 8))
        assert a.values.tobytes() == b.values.tobytes()

    def test_downsample_bounds_length(self, rng):
        big = (rng.random((100, 40)) * 255).astype(np.uint8)
        vec = extract_zfrac(big, (2, 4), ExtractConfig(downsample=16))
        assert vec.padded_side == 16
        assert len(vec.values) == 64 + 16

    def test_matches_per_block_fd(self, rng):
        from zfrac.fractal import fd_of_grid
        from zfrac.imagio import binarize, pad_to_square_pow2

        img = (rng.random((16, 16)) * 255).astype(np.uint8)
        vec = extract_zfrac(img, (8,), FIXED)
        grid = pad_to_square_pow2(binarize(img, 128))
        expect = []
        for bi in range(2):
            for bj in range(2):
                block = grid[bi * 8 : (bi + 1) * 8, bj * 8 : (bj + 1) * 8]
                expect.append(fd_of_grid(block, block_radii(8)).fd)
        np.testing.assert_allclose(vec.values, np.float32(expect), rtol=1e-6)


class TestBackends:
    def test_numpy_numba_parity(self, rng):
        for _ in range(10):
            occ = (rng.random((32, 32)) < rng.random()).astype(np.uint8)
            for w in (2, 4, 8, 16):
                radii = np.array(block_radii(w), dtype=np.int64)
                a = kernels.numpy_block_box_counts(occ, w, radii)
                b = kernels.numba_block_box_counts(occ, w, radii)
                assert np.array_equal(a, b)

    def test_counts_match_box_count(self, rng):
        from zfrac.fractal import box_count

        occ = (rng.random((16, 16)) < 0.3).astype(np.uint8)
        counts = kernels.block_box_counts(occ, 8, np.array([1, 2, 4], dtype=np.int64))
        for bi in range(2):
            for bj in range(2):
                block = occ[bi * 8 : (bi + 1) * 8, bj * 8 : (bj + 1) * 8].astype(bool)
                for ri, r in enumerate((1, 2, 4)):
                    assert counts[bi * 2 + bj, ri] == box_count(block, r)


class TestPrewitt:
    def test_constant_zero(self):
        vec = extract_prewitt(np.full((5, 5), 77, np.uint8), "prewitt_h")
        assert not vec.values.any()
        assert len(vec.values) == 9

    def test_hand_convolution(self):
        patch = np.array([[0, 0, 0], [0, 0, 0], [3, 3, 3]], np.uint8)
        vec = extract_prewitt(patch, "prewitt_h")
        assert vec.values.tolist() == [9.0]

    def test_vertical_edge_invisible_to_horizontal(self):
        img = np.zeros((5, 6), np.uint8)
        img[:, 3:] = 200  # vertical step edge
        assert not extract_prewitt(img, "prewitt_h").values.any()
        assert extract_prewitt(img, "prewitt_v").values.any()

    def test_too_small(self):
        with pytest.raises(FeatureError, match="small"):
            extract_prewitt(np.zeros((2, 5), np.uint8), "prewitt_h")

    def test_unknown_kind(self):
        with pytest.raises(FeatureError):
            extract_prewitt(np.zeros((5, 5), np.uint8), "harris")


def make_manifest(tmp_path, images, labels, splits):
    entries = []
    for i, (img, label, split) in enumerate(zip(images, labels, splits)):
        p = tmp_path / f"im{i}.pgm"
        write_pgm(p, img)
        entries.append(ManifestEntry(str(p), label, split))
    return DatasetManifest(entries)


class TestBatchExtract:
    def test_identical_images_identical_rows(self, tmp_path, rng):
        img = (rng.random((16, 16)) * 255).astype(np.uint8)
        m = make_manifest(tmp_path, [img] * 3, [0, 0, 0], ["train"] * 3)
        res = batch_extract(m, (2, 4))
        assert np.array_equal(res.features["train"][0], res.features["train"][1])
        assert np.array_equal(res.features["train"][0], res.features["train"][2])

    def test_worker_count_determinism(self, tmp_path, rng):
        images = [(rng.random((16, 16)) * 255).astype(np.uint8) for _ in range(12)]
        m = make_manifest(tmp_path, images, [i % 2 for i in range(12)], ["train"] * 12)
        res1 = batch_extract(m, (2, 4), workers=1)
        res8 = batch_extract(m, (2, 4), workers=8)
        assert res1.features["train"].tobytes() == res8.features["train"].tobytes()

    def test_heterogeneous_lengths_rejected(self, tmp_path, rng):
        a = (rng.random((16, 16)) * 255).astype(np.uint8)
        b = (rng.random((32, 32)) * 255).astype(np.uint8)
        m = make_manifest(tmp_path, [a, b], [0, 1], ["train", "train"])
        with pytest.raises(FeatureError, match="heterogeneous"):
            batch_extract(m, (2, 4))

    def test_downsample_homogenizes(self, tmp_path, rng):
        a = (rng.random((20, 16)) * 255).astype(np.uint8)
        b = (rng.random((33, 40)) * 255).astype(np.uint8)
        m = make_manifest(tmp_path, [a, b], [0, 1], ["train", "test"])
        res = batch_extract(m, (2, 4), ExtractConfig(downsample=16))
        assert res.features["train"].shape[1] == res.features["test"].shape[1] == 80

    def test_cache_hits(self, tmp_path, rng):
        img = (rng.random((16, 16)) * 255).astype(np.uint8)
        m = make_manifest(tmp_path, [img, img], [0, 1], ["train", "train"])
        cache = tmp_path / "cache"
        cold = batch_extract(m, (2, 4), cache_dir=str(cache))
        warm = batch_extract(m, (2, 4), cache_dir=str(cache))
        assert cold.cache_hits == 0 and warm.cache_hits == 2
        assert warm.features["train"].tobytes() == cold.features["train"].tobytes()

    def test_split_ordering(self, tmp_path, rng):
        images = [(rng.random((8, 8)) * 255).astype(np.uint8) for _ in range(4)]
        m = make_manifest(tmp_path, images, [0, 1, 0, 1], ["train", "test", "train", "test"])
        res = batch_extract(m, (2,))
        assert res.labels["train"].tolist() == [0, 0]
        assert res.labels["test"].tolist() == [1, 1]


class TestZft1:
    def test_roundtrip_bytes(self, tmp_path, rng):
        features = rng.random((5, 7)).astype(np.float32)
        labels = np.array([0, 1, 1, 0, 2], np.int32)
        p1 = tmp_path / "a.zft"
        p2 = tmp_path / "b.zft"
        write_zft1(p1, features, labels, [2, 4])
        f2, l2, sched = read_zft1(p1)
        write_zft1(p2, f2, l2, sched)
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(f2, features)
        assert l2.tolist() == labels.tolist()
        assert sched == [2, 4]

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.zft"
        p.write_bytes(b"NOPE" + b"\0" * 12)
        with pytest.raises(FeatureError, match="magic"):
            read_zft1(p)

    def test_truncated(self, tmp_path, rng):
        p = tmp_path / "t.zft"
        write_zft1(p, rng.random((3, 3)).astype(np.float32), np.zeros(3, np.int32), [2])
        p.write_bytes(p.read_bytes()[:-5])
        with pytest.raises(FeatureError, match="bytes"):
            read_zft1(p)

    def test_label_mismatch(self, tmp_path):
        with pytest.raises(FeatureError, match="labels"):
            write_zft1(tmp_path / "m.zft", np.zeros((3, 2), np.float32), np.zeros(2, np.int32), [2])
