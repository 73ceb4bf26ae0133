"""Normalization, triangle thresholding, and patch tiling."""

import numpy as np
import pytest

import oracles
from dhrb import optics, preprocess
from dhrb.optics import PlaneImage


def hist_from_counts(counts):
    counts = np.asarray(counts)
    return preprocess.Histogram(np.arange(counts.size + 1, dtype=float),
                                counts)


class TestHistogram:
    def test_validation(self):
        with pytest.raises(ValueError):
            preprocess.Histogram(np.array([0.0, 1.0]), np.array([1, 2]))
        with pytest.raises(ValueError):
            preprocess.Histogram(np.array([0.0, 0.0, 1.0]), np.array([1, 2]))
        with pytest.raises(ValueError):
            preprocess.Histogram(np.array([0.0, 1.0, 2.0]),
                                 np.array([1, -2]))

    def test_image_histogram_shape(self):
        img = PlaneImage(np.random.default_rng(0).uniform(0, 10, (32, 32)))
        h = preprocess.image_histogram(img)
        assert h.counts.size == 256
        assert h.counts.sum() == 32 * 32


class TestTriangularThreshold:
    def test_single_nonzero_bin(self):
        counts = np.zeros(16)
        counts[5] = 10
        assert preprocess.triangular_threshold(hist_from_counts(counts)) == 5

    def test_pinned_descending_example(self):
        h = hist_from_counts([100, 10, 8, 6, 0])
        assert preprocess.triangular_threshold(h) == 1

    def test_linear_ramp_tie_breaks_next_to_peak(self):
        # counts exactly on the chord: every distance 0, keep nearest to peak
        h = hist_from_counts([100, 75, 50, 25, 0])
        assert preprocess.triangular_threshold(h) == 1

    def test_peak_at_right_edge_uses_left_tail(self):
        h = hist_from_counts([0, 5, 8, 10, 100])
        t = preprocess.triangular_threshold(h)
        assert t == oracles.triangle_threshold_scan([0, 5, 8, 10, 100])
        assert 1 <= t <= 3

    def test_all_zero_raises(self):
        with pytest.raises(ValueError):
            preprocess.triangular_threshold(hist_from_counts(np.zeros(8)))

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            counts = rng.integers(0, 1000, size=64)
            counts[rng.integers(0, 64)] += 2000  # distinct peak
            h1 = hist_from_counts(counts)
            for k in (0.5, 3.0, 117.0):
                h2 = hist_from_counts(counts * k)
                assert (preprocess.triangular_threshold(h1)
                        == preprocess.triangular_threshold(h2))

    def test_matches_exact_scan_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            size = int(rng.integers(3, 80))
            counts = rng.integers(0, 500, size=size)
            if counts.sum() == 0:
                counts[0] = 1
            got = preprocess.triangular_threshold(hist_from_counts(counts))
            want = oracles.triangle_threshold_scan(counts.tolist())
            assert got == want, counts


class TestNormalizeImage:
    def test_all_zero_fixed_point(self):
        img = PlaneImage(np.zeros((32, 32)))
        out = preprocess.normalize_image(img)
        np.testing.assert_array_equal(out.pixels, 0.0)

    def test_constant_image_degenerates_to_zero(self):
        out = preprocess.normalize_image(PlaneImage(np.full((16, 16), 7.5)))
        np.testing.assert_array_equal(out.pixels, 0.0)

    def test_background_plus_bead_by_hand(self):
        # flat background 5.0 with one bright bead: background ~0, peak ~1
        # (the 99.9th percentile of the 1024-pixel frame sits on the bead's
        # shoulder, so the peak lands slightly above 1)
        pix = np.full((32, 32), 5.0)
        rr, cc = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        pix += 500.0 * np.exp(-((rr - 16) ** 2 + (cc - 16) ** 2) / (2 * 3.0 ** 2))
        out = preprocess.normalize_image(PlaneImage(pix))
        assert abs(out.pixels[0, 0]) < 0.01
        assert out.pixels[16, 16] == pytest.approx(1.0, abs=0.1)

    def test_saturated_pixel_replaced_by_neighbor_median(self):
        pix = np.full((16, 16), 10.0)
        pix[8, 8] = 70000.0
        out = preprocess.normalize_image(PlaneImage(pix),
                                        saturation_level=60000.0)
        assert out.pixels[8, 8] != out.pixels.max() or out.pixels.max() == 0.0
        # the hot pixel now matches its neighborhood
        assert out.pixels[8, 8] == pytest.approx(out.pixels[8, 7], abs=1e-9)

    def test_saturation_repair_keeps_real_signal(self):
        pix = np.full((32, 32), 5.0)
        rr, cc = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        pix += 500.0 * np.exp(-((rr - 10) ** 2 + (cc - 10) ** 2) / (2 * 2.0 ** 2))
        pix[25, 25] = 1e5
        out = preprocess.normalize_image(PlaneImage(pix),
                                        saturation_level=60000.0)
        peak = np.unravel_index(out.pixels.argmax(), out.pixels.shape)
        assert peak == (10, 10)

    def test_idempotent_within_tolerance(self, config, dh_params):
        # bright beads: the residual background of the second pass must stay
        # below the 1e-3 stability bound
        from conftest import make_planar_scene
        scene = make_planar_scene(config, 128, 10, seed=8,
                                  photons=(100_000.0, 150_000.0))
        clean = optics.render_plane(scene, 0.5, dh_params, config, 128)
        noisy = optics.add_noise(clean, optics.NoiseParams(seed=4))
        for img in (clean, noisy):
            once = preprocess.normalize_image(img)
            twice = preprocess.normalize_image(once)
            assert np.abs(twice.pixels - once.pixels).max() <= 1e-3

    def test_rejects_bad_saturation_level(self):
        with pytest.raises(ValueError):
            preprocess.normalize_image(PlaneImage(np.zeros((8, 8))),
                                       saturation_level=0.0)


class TestReferenceNormalizer:
    def test_frozen_scale_preserves_dimming(self, config, wf_params):
        from conftest import make_planar_scene
        scene = make_planar_scene(config, 128, 8, seed=5)
        focal = optics.render_plane(scene, 0.0, wf_params, config, 128)
        away = optics.render_plane(scene, 0.4, wf_params, config, 128)
        norm = preprocess.make_reference_normalizer(focal)
        assert norm(away).pixels.max() < 0.5 * norm(focal).pixels.max()

    def test_rejects_constant_reference(self):
        with pytest.raises(ValueError):
            preprocess.make_reference_normalizer(
                PlaneImage(np.full((8, 8), 3.0)))


class TestCropPatches:
    def test_identity_tiling(self):
        img = PlaneImage(np.random.default_rng(0).uniform(size=(256, 256)))
        grid = preprocess.PatchGrid.for_image(img.pixels.shape, 256, 0.10)
        patches = preprocess.crop_patches(img, grid)
        assert len(patches) == 1
        np.testing.assert_array_equal(patches[0].pixels, img.pixels)

    def test_1024_grid_origins(self):
        grid = preprocess.PatchGrid.for_image((1024, 1024), 256, 0.10)
        assert grid.stride == 230
        rows = sorted({r for r, _ in grid.origins})
        assert rows == [0, 230, 460, 690, 768]
        assert len(grid.origins) == 25

    def test_coverage(self):
        rng = np.random.default_rng(1)
        for shape in ((300, 300), (256, 410), (999, 640)):
            grid = preprocess.PatchGrid.for_image(shape, 256, 0.10)
            covered = np.zeros(shape, dtype=bool)
            for r, c in grid.origins:
                covered[r:r + 256, c:c + 256] = True
            assert covered.all(), shape

    def test_patch_content_matches_source(self):
        img = PlaneImage(np.random.default_rng(2).uniform(size=(300, 300)))
        grid = preprocess.PatchGrid.for_image((300, 300), 256, 0.10)
        patches = preprocess.crop_patches(img, grid)
        r, c = grid.origins[-1]
        np.testing.assert_array_equal(patches[-1].pixels,
                                      img.pixels[r:r + 256, c:c + 256])

    def test_too_small_image_errors(self):
        img = PlaneImage(np.zeros((100, 100)))
        with pytest.raises(ValueError):
            preprocess.crop_patches(img, preprocess.PatchGrid(patch_px=256))

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            preprocess.PatchGrid(patch_px=0)
        with pytest.raises(ValueError):
            preprocess.PatchGrid(overlap_fraction=1.0)
