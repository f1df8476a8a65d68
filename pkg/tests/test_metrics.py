import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridgelab.data import make_toy_translation
from bridgelab.metrics import (
    ScoreReport,
    TaskResult,
    combined_score,
    desk_fid,
    desk_features,
    evaluate_images,
    frechet_gaussian,
    l1_metric,
    lpips_surrogate,
    normalize_fid,
    read_score_csv,
    task_score,
)

unit = st.floats(0.0, 1.0)


class TestL1:
    def test_identical(self):
        img = np.random.default_rng(0).random((2, 1, 8, 8))
        assert l1_metric(img, img) == 0.0

    def test_inverted_binary(self):
        img = np.zeros((1, 4, 4))
        img[:, :2] = 1.0
        assert l1_metric(1.0 - img, img) == 1.0

    def test_constants(self):
        assert l1_metric(np.full((3, 3), 0.2), np.full((3, 3), 0.5)) == pytest.approx(0.3)

    def test_values_are_clamped(self):
        assert l1_metric(np.full(4, 1.7), np.ones(4)) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l1_metric(np.zeros(3), np.zeros(4))


class TestFrechet:
    def test_identical(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        assert frechet_gaussian([1, 2], cov, [1, 2], cov) == pytest.approx(0.0, abs=1e-10)

    def test_mean_offset(self):
        d = np.array([3.0, 4.0])
        assert frechet_gaussian(np.zeros(2), np.eye(2), d, np.eye(2)) == pytest.approx(25.0)

    def test_scalar_case(self):
        assert frechet_gaussian([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(1.0)

    def test_asymmetric_covariance(self):
        with pytest.raises(ValueError):
            frechet_gaussian(np.zeros(2), [[1.0, 0.1], [0.0, 1.0]], np.zeros(2), np.eye(2))

    @given(st.integers(0, 10_000))
    def test_symmetric_and_matches_commuting_case(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((2, 3, 3))
        c1, c2 = a @ a.T, b @ b.T
        m1, m2 = rng.standard_normal((2, 3))
        assert frechet_gaussian(m1, c1, m2, c2) == pytest.approx(frechet_gaussian(m2, c2, m1, c1), rel=1e-6, abs=1e-8)
        s1, s2 = rng.uniform(0.1, 3, 3), rng.uniform(0.1, 3, 3)
        diag = frechet_gaussian(m1, np.diag(s1), m2, np.diag(s2))
        assert diag == pytest.approx(np.sum((m1 - m2) ** 2) + np.sum((np.sqrt(s1) - np.sqrt(s2)) ** 2), rel=1e-9)


class TestDeskFid:
    def test_same_set(self):
        imgs = make_toy_translation("sar2eo", 20, 16, 0).targets
        assert desk_fid(imgs, imgs) <= 1e-6

    def test_same_distribution_closer_than_different(self):
        a = make_toy_translation("sar2eo", 200, 16, 0).targets
        b = make_toy_translation("sar2eo", 200, 16, 1).targets
        c = make_toy_translation("sar2ir", 200, 16, 2).targets
        assert desk_fid(a, b) < desk_fid(a, c)

    def test_duplication_invariant(self):
        a = make_toy_translation("sar2eo", 30, 16, 0).targets
        b = make_toy_translation("sar2eo", 30, 16, 1).targets
        assert desk_fid(np.concatenate([a, a]), b) == pytest.approx(desk_fid(a, b), rel=1e-9)

    def test_needs_two_images(self):
        with pytest.raises(ValueError):
            desk_fid(np.zeros((1, 1, 8, 8)), np.zeros((3, 1, 8, 8)))

    def test_features_pool_channel_mean(self):
        img = np.random.default_rng(0).random((1, 3, 16, 16))
        f = desk_features(img)
        assert f.shape == (1, 64)
        assert f[0, 0] == pytest.approx(img[0, :, :2, :2].mean())


class TestScores:
    def test_normalize_fid(self):
        assert normalize_fid(0.0) == 0.0
        assert normalize_fid(1.0) == pytest.approx(0.5)
        assert normalize_fid(0.22) == pytest.approx(0.1378, abs=1e-4)
        with pytest.raises(ValueError):
            normalize_fid(-0.1)

    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_normalize_fid_order_preserving(self, a, b):
        if a < b:
            assert normalize_fid(a) <= normalize_fid(b)
        assert 0.0 <= normalize_fid(a) < 1.0

    def test_task_score_examples(self):
        assert task_score(0.22, 0.50, 0.08) == pytest.approx(0.2667, abs=5e-5)
        assert task_score(0.357, 0.151, 0.090) == pytest.approx(0.1993, abs=5e-5)
        assert task_score(0, 0, 0) == 0.0
        with pytest.raises(ValueError):
            task_score(1.2, 0.1, 0.1)

    @given(unit, unit, unit)
    def test_task_score_symmetric_and_bounded(self, a, b, c):
        s = task_score(a, b, c)
        assert 0.0 <= s <= 1.0
        assert s == pytest.approx(task_score(c, a, b))

    def test_combined_examples(self):
        assert combined_score([0.27, 0.58, 0.46, 0.20]) == pytest.approx(0.3775)
        assert combined_score([0.11, 0.50, 0.49, 0.20]) == pytest.approx(0.325)
        assert combined_score([0.2], 1) == pytest.approx(1.2)
        assert combined_score([], 2) == 2.0
        with pytest.raises(ValueError):
            combined_score([], 0)


class TestSurrogate:
    def test_identical_is_zero(self):
        img = np.random.default_rng(0).random((2, 3, 16, 16))
        assert lpips_surrogate(img, img) == pytest.approx(0.0, abs=1e-12)

    def test_noise_increases_distance(self):
        rng = np.random.default_rng(0)
        img = make_toy_translation("sar2eo", 4, 16, 0).targets
        small = lpips_surrogate(np.clip(img + 0.02 * rng.standard_normal(img.shape), 0, 1), img)
        large = lpips_surrogate(np.clip(img + 0.2 * rng.standard_normal(img.shape), 0, 1), img)
        assert 0.0 < small < large <= 1.0


class TestReport:
    def test_csv_and_json(self, tmp_path):
        rep = ScoreReport([TaskResult("sar2eo", 0.22, 0.50, 0.08), TaskResult("rgb2ir", 0.357, 0.151, 0.09)], 1)
        rep.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "task,fid_norm,lpips,l1,score"
        assert lines[1] == "sar2eo,0.220000,0.500000,0.080000,0.266667"
        assert lines[-1] == f"combined,,,,{rep.combined:.6f}"
        rep.write_json(tmp_path / "r.json")
        data = json.loads((tmp_path / "r.json").read_text())
        assert data["n_unattempted"] == 1 and data["combined"] == round(rep.combined, 6)

    def test_read_with_unattempted_rows(self, tmp_path):
        path = tmp_path / "in.csv"
        path.write_text("task,fid_norm,lpips,l1\na,0.2,0.3,0.1\nunattempted_b,,,\n")
        rep = read_score_csv(path)
        assert rep.n_unattempted == 1
        assert rep.combined == pytest.approx(0.2 + 1.0)

    def test_round_trip(self, tmp_path):
        rep = ScoreReport([TaskResult("a", 0.1, 0.2, 0.3), TaskResult("b", 0.4, 0.5, 0.6)])
        rep.write_csv(tmp_path / "r.csv")
        assert read_score_csv(tmp_path / "r.csv").combined == pytest.approx(rep.combined)


def test_evaluate_images_on_perfect_prediction():
    imgs = make_toy_translation("sar2rgb", 8, 16, 0).targets
    out = evaluate_images(imgs, imgs)
    assert out["l1"] == 0.0 and out["fid"] <= 1e-6
    assert out["score"] == pytest.approx((out["fid_norm"] + out["lpips"]) / 3)
    assert math.isfinite(out["score"])
