"""Dual-peak correlation registration."""

import math
import time

import numpy as np
import pytest

import oracles
from conftest import make_planar_scene, smooth_random_image
from dhrb import optics, preprocess, registration
from dhrb.optics import PlaneImage
from dhrb.registration import (CorrelationMap, apply_shift, dppcm_shift,
                               normalized_xcorr, subpixel_refine,
                               top_two_local_maxima, unwrap_index)


def gaussian_bump(shape, row0, col0, sigma=2.0, amp=1.0):
    rr, cc = np.meshgrid(np.arange(shape[0], dtype=float),
                         np.arange(shape[1], dtype=float), indexing="ij")
    return amp * np.exp(-((rr - row0) ** 2 + (cc - col0) ** 2)
                        / (2 * sigma * sigma))


class TestNormalizedXcorr:
    def test_autocorrelation_peak(self):
        img = smooth_random_image((64, 64), seed=0)
        corr = normalized_xcorr(img, img)
        assert corr.values[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert corr.values.max() == corr.values[0, 0]

    def test_circular_shift_theorem(self):
        img = smooth_random_image((64, 64), seed=1)
        rolled = PlaneImage(np.roll(img.pixels, (5, -3), axis=(0, 1)))
        corr = normalized_xcorr(img, rolled)
        peak = np.unravel_index(corr.values.argmax(), corr.values.shape)
        assert peak == (5, (-3) % 64)
        assert corr.values[peak] == pytest.approx(1.0, abs=1e-9)

    def test_anticorrelation(self):
        img = smooth_random_image((32, 32), seed=2)
        neg = PlaneImage(-img.pixels)
        corr = normalized_xcorr(img, neg)
        assert corr.values[0, 0] == pytest.approx(-1.0, abs=1e-9)

    def test_values_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = PlaneImage(rng.normal(size=(24, 24)))
            b = PlaneImage(rng.normal(size=(24, 24)))
            v = normalized_xcorr(a, b).values
            assert v.max() <= 1.0 + 1e-9
            assert v.min() >= -1.0 - 1e-9

    def test_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(12, 12))
        b = rng.normal(size=(12, 12))
        got = normalized_xcorr(PlaneImage(a), PlaneImage(b)).values
        want = oracles.direct_circular_xcorr(a, b)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="shape"):
            normalized_xcorr(PlaneImage(np.ones((8, 8)) + np.eye(8)),
                             PlaneImage(np.ones((8, 9))))

    def test_constant_input_raises(self):
        img = smooth_random_image((16, 16), seed=5)
        with pytest.raises(ValueError, match="constant"):
            normalized_xcorr(PlaneImage(np.full((16, 16), 2.0)), img)
        with pytest.raises(ValueError, match="constant"):
            normalized_xcorr(img, PlaneImage(np.zeros((16, 16))))


class TestTopTwoLocalMaxima:
    def test_two_bumps_ordered_by_height(self):
        v = gaussian_bump((64, 64), 10, 12, 2.0, 1.0) \
            + gaussian_bump((64, 64), 40, 45, 2.0, 0.8)
        p1, p2, found = top_two_local_maxima(CorrelationMap(v), 3)
        assert found
        assert p1 == (10, 12)
        assert p2 == (40, 45)

    def test_single_bump_degrades(self):
        v = gaussian_bump((32, 32), 16, 16, 2.0)
        p1, p2, found = top_two_local_maxima(CorrelationMap(v), 3)
        assert not found
        assert p1 == p2 == (16, 16)

    def test_separation_respects_circular_distance(self):
        v = gaussian_bump((32, 32), 1, 1, 1.5, 1.0) \
            + gaussian_bump((32, 32), 30, 30, 1.5, 0.9)  # 2*sqrt2 away, wrapped
        _, p2, found = top_two_local_maxima(CorrelationMap(v), 5)
        assert not found or p2 != (30, 30)

    def test_dh_pair_shows_twin_peaks(self, config, dh_params,
                                      confocal_params):
        scene = make_planar_scene(config, 128, 1, seed=7, z_jitter_um=0.0)
        dh = optics.render_plane(scene, 0.0, dh_params, config, 128)
        cf = optics.render_plane(scene, 0.0, confocal_params, config, 128)
        corr = normalized_xcorr(dh, cf)
        p1, p2, found = top_two_local_maxima(corr, 3)
        assert found
        dr = unwrap_index((p1[0] - p2[0]) % 128, 128)
        dc = unwrap_index((p1[1] - p2[1]) % 128, 128)
        assert math.hypot(dr, dc) == pytest.approx(
            dh_params.lobe_distance_px, abs=1.0)

    def test_min_separation_validation(self):
        with pytest.raises(ValueError):
            top_two_local_maxima(CorrelationMap(np.zeros((8, 8))), 0)


class TestSubpixelRefine:
    def test_exact_on_discrete_quadratic(self):
        rr, cc = np.meshgrid(np.arange(32, dtype=float),
                             np.arange(32, dtype=float), indexing="ij")
        r0, c0 = 16.3, 15.8
        v = 5.0 - 0.1 * (rr - r0) ** 2 - 0.07 * (cc - c0) ** 2 \
            - 0.02 * (rr - r0) * (cc - c0)
        est = subpixel_refine(CorrelationMap(v), (16, 16))
        assert not est.degraded
        assert est.row == pytest.approx(16.3, abs=1e-6)
        assert est.col == pytest.approx(15.8, abs=1e-6)

    def test_on_grid_symmetric_bump(self):
        v = gaussian_bump((33, 33), 16, 16, 2.0)
        est = subpixel_refine(CorrelationMap(v), (16, 16))
        assert est.row == pytest.approx(16.0, abs=1e-9)
        assert est.col == pytest.approx(16.0, abs=1e-9)

    def test_off_grid_gaussian_vs_oversampled_oracle(self):
        row0, col0 = 16.25, 16.40
        v = gaussian_bump((33, 33), row0, col0, 2.0)
        est = subpixel_refine(CorrelationMap(v), (16, 16))
        oracle_r, oracle_c = oracles.oversampled_gaussian_argmax(
            1.0, row0, col0, 2.0, (33, 33))
        assert est.row == pytest.approx(oracle_r, abs=0.05)
        assert est.col == pytest.approx(oracle_c, abs=0.05)

    def test_flat_window_degrades_to_integer_peak(self):
        v = np.zeros((16, 16))
        v[8, 8] = 0.0  # perfectly flat
        est = subpixel_refine(CorrelationMap(v), (8, 8))
        assert est.degraded
        assert (est.row, est.col) == (8.0, 8.0)

    def test_wrapped_negative_peak_unwraps(self):
        # roll a centred bump across the boundary so it stays circularly
        # symmetric around (30, 2)
        v = np.roll(gaussian_bump((32, 32), 16.0, 16.0, 1.5), (14, -14),
                    axis=(0, 1))
        est = subpixel_refine(CorrelationMap(v), (30, 2))
        assert est.row == pytest.approx(-2.0, abs=0.01)
        assert est.col == pytest.approx(2.0, abs=0.01)

    def test_window_validation(self):
        with pytest.raises(ValueError):
            subpixel_refine(CorrelationMap(np.zeros((8, 8))), (4, 4),
                            window=4)


class TestDppcmShift:
    def test_identity_any_modality(self, config, dh_params):
        scene = make_planar_scene(config, 128, 12, seed=9)
        dh = preprocess.normalize_image(
            optics.render_plane(scene, 0.0, dh_params, config, 128))
        est = dppcm_shift(dh, dh)
        assert est.dx_px == pytest.approx(0.0, abs=1e-9)
        assert est.dy_px == pytest.approx(0.0, abs=1e-9)
        assert est.confidence == pytest.approx(1.0, abs=1e-9)
        assert not est.degraded

    def test_dh_vs_confocal_translation(self, config, dh_params,
                                        confocal_params):
        scene = make_planar_scene(config, 256, 20, seed=10)
        dh = optics.render_plane(scene, 0.0, dh_params, config, 256)
        cf = optics.render_plane(scene, 0.0, confocal_params, config, 256)
        moved = apply_shift(cf, 3.25, -1.50)
        est = dppcm_shift(dh, moved)
        assert est.dual
        assert est.dx_px == pytest.approx(3.25, abs=0.1)
        assert est.dy_px == pytest.approx(-1.50, abs=0.1)

    def test_single_bead_midpoint_symmetry(self, config, dh_params,
                                           confocal_params):
        # twin peaks straddle zero; their midpoint cancels the lobe offset
        scene = make_planar_scene(config, 128, 1, seed=7, z_jitter_um=0.0)
        dh = optics.render_plane(scene, 0.0, dh_params, config, 128)
        cf = optics.render_plane(scene, 0.0, confocal_params, config, 128)
        est = dppcm_shift(dh, cf)
        assert est.dual
        assert est.dx_px == pytest.approx(0.0, abs=0.2)
        assert est.dy_px == pytest.approx(0.0, abs=0.2)
        p1, p2 = est.peaks
        sep = math.hypot(p1.row - p2.row, p1.col - p2.col)
        assert sep == pytest.approx(dh_params.lobe_distance_px, abs=1.0)

    def test_round_trip_random_shifts(self):
        rng = np.random.default_rng(11)
        img = smooth_random_image((128, 128), seed=12)
        errors = []
        for _ in range(25):
            dx, dy = rng.uniform(-8, 8, size=2)
            moved = apply_shift(img, dx, dy)
            est = dppcm_shift(img, moved)
            errors.append((est.dx_px - dx, est.dy_px - dy))
        rms = np.sqrt(np.mean(np.square(errors), axis=0))
        assert rms[0] <= 0.1 and rms[1] <= 0.1, rms

    def test_antisymmetry(self, config, dh_params, confocal_params):
        scene = make_planar_scene(config, 128, 15, seed=13)
        a = optics.render_plane(scene, 0.0, dh_params, config, 128)
        b = apply_shift(optics.render_plane(scene, 0.0, confocal_params,
                                            config, 128), 2.6, -4.1)
        fwd = dppcm_shift(a, b)
        rev = dppcm_shift(b, a)
        assert fwd.dx_px == pytest.approx(-rev.dx_px, abs=0.05)
        assert fwd.dy_px == pytest.approx(-rev.dy_px, abs=0.05)

    def test_single_peak_mode_flag(self):
        img = smooth_random_image((64, 64), seed=14)
        moved = apply_shift(img, 4.0, 1.0)
        est = dppcm_shift(img, moved, dual=False)
        assert not est.dual
        assert est.dx_px == pytest.approx(4.0, abs=0.1)

    def test_phase_only_variant(self):
        img = smooth_random_image((64, 64), seed=15)
        moved = apply_shift(img, -3.0, 2.0)
        est = dppcm_shift(img, moved, phase_only=True)
        assert est.dx_px == pytest.approx(-3.0, abs=0.15)
        assert est.dy_px == pytest.approx(2.0, abs=0.15)

    def test_large_frame_runtime_budget(self):
        img = smooth_random_image((1024, 1024), seed=16, sigma=4.0)
        moved = apply_shift(img, 5.5, -2.5)
        start = time.perf_counter()
        est = dppcm_shift(img, moved)
        elapsed = time.perf_counter() - start
        assert est.dx_px == pytest.approx(5.5, abs=0.1)
        assert elapsed <= 2.0, f"registration took {elapsed:.2f} s"


class TestApplyShift:
    def test_zero_shift_identity(self):
        img = smooth_random_image((48, 48), seed=17)
        out = apply_shift(img, 0.0, 0.0)
        np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-12)

    def test_inverse_composition(self):
        img = smooth_random_image((48, 48), seed=18)
        out = apply_shift(apply_shift(img, 1.0, 0.0), -1.0, 0.0)
        np.testing.assert_allclose(out.pixels, img.pixels, atol=1e-9)

    def test_integer_bilinear_delta(self):
        pix = np.zeros((16, 16))
        pix[5, 6] = 1.0
        out = apply_shift(PlaneImage(pix), 3.0, 2.0, method="bilinear")
        assert out.pixels[7, 9] == pytest.approx(1.0)
        assert out.pixels.sum() == pytest.approx(1.0)

    def test_direction_convention(self):
        # positive dx moves content toward larger column indices
        pix = np.zeros((16, 16))
        pix[8, 4] = 1.0
        out = apply_shift(PlaneImage(pix), 2.0, 0.0, method="bilinear")
        assert out.pixels.argmax() == np.ravel_multi_index((8, 6), (16, 16))

    def test_non_finite_shift_rejected(self):
        img = smooth_random_image((16, 16), seed=19)
        with pytest.raises(ValueError):
            apply_shift(img, math.nan, 0.0)

    def test_unknown_method_rejected(self):
        img = smooth_random_image((16, 16), seed=20)
        with pytest.raises(ValueError):
            apply_shift(img, 1.0, 1.0, method="cubic")


def test_unwrap_index_convention():
    assert unwrap_index(0, 64) == 0
    assert unwrap_index(32, 64) == 32      # n/2 stays positive
    assert unwrap_index(33, 64) == -31
    assert unwrap_index(63, 64) == -1
