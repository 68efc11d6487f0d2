"""1-D k-means for aspect-ratio anchor design."""

import numpy as np
import pytest

from parkwatch.anchors import (
    DegenerateInputError,
    extract_aspect_ratios,
    kmeans_1d,
    validate_separation,
)
from parkwatch.core import BBox

from oracles import kmeans_contiguous_optimum


def _grouped_samples(rng, k: int, n: int) -> list[float]:
    """k separated ratio modes with near-equal membership."""
    means = np.sort(rng.uniform(0.3, 2.2, k))
    while k > 1 and np.any(np.diff(means) < 0.45):
        means = np.sort(rng.uniform(0.3, 2.2, k))
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    values = np.concatenate([rng.normal(m, 0.05, s) for m, s in zip(means, sizes)])
    return [float(v) for v in np.abs(values) + 1e-3]


class TestAspectRatios:
    def test_examples(self):
        assert extract_aspect_ratios([BBox(0, 0, 100, 50)]) == [0.5]
        assert extract_aspect_ratios([BBox(0, 0, 10, 7)]) == [0.7]
        assert extract_aspect_ratios([BBox(0, 0, 4, 4), BBox(0, 0, 2, 1)]) == [1.0, 0.5]

    def test_flipped_convention(self):
        assert extract_aspect_ratios([BBox(0, 0, 100, 50)], height_over_width=False) == [2.0]


class TestKmeans:
    def test_two_exact_clusters(self):
        res = kmeans_1d([0.5, 0.5, 0.7, 0.7], 2)
        assert res.centers == (0.5, 0.7)
        assert res.wcss == 0.0

    def test_five_sample_split(self):
        res = kmeans_1d([0.3, 0.4, 0.6, 0.7, 0.8], 2)
        assert res.centers == pytest.approx((0.35, 0.70), abs=1e-12)
        assert res.wcss == pytest.approx(0.025, abs=1e-12)

    def test_too_few_distinct_values(self):
        with pytest.raises(DegenerateInputError):
            kmeans_1d([0.5, 0.5, 0.5], 2)

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            kmeans_1d([0.5, 0.7], 0)

    def test_k_one(self):
        res = kmeans_1d([1.0, 2.0, 6.0], 1)
        assert res.centers == (3.0,)
        assert res.wcss == pytest.approx(14.0, abs=1e-12)

    def test_duplicate_heavy_samples(self):
        # quantile init would collapse without the distinct-value fallback
        res = kmeans_1d([0.5, 0.5, 0.5, 0.5, 0.9], 2)
        assert res.centers == (0.5, 0.9)
        assert res.wcss == 0.0

    def test_centers_are_cluster_means(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(4, 13))
            samples = rng.uniform(0.2, 3.0, size=n).tolist()
            k = int(rng.integers(2, 4))
            if len(set(samples)) < k:
                continue
            res = kmeans_1d(samples, k)
            groups = {}
            for value, a in zip(samples, res.assignments):
                groups.setdefault(a, []).append(value)
            for ci, center in enumerate(res.centers):
                assert center == pytest.approx(np.mean(groups[ci]), abs=1e-12)

    def test_assignments_contiguous_in_sorted_order(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            samples = rng.uniform(0.2, 3.0, size=10).tolist()
            res = kmeans_1d(samples, 3)
            order = np.argsort(samples, kind="stable")
            labels = [res.assignments[i] for i in order]
            assert labels == sorted(labels)

    def test_wcss_monotone_per_iteration(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            n = int(rng.integers(4, 13))
            samples = rng.uniform(0.2, 3.0, size=n).tolist()
            k = int(rng.integers(2, 4))
            if len(set(samples)) < k:
                continue
            res = kmeans_1d(samples, k)
            hist = res.wcss_history
            assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))
            assert res.wcss == hist[-1]

    def test_determinism(self):
        samples = [0.31, 0.52, 0.48, 0.77, 0.69, 1.4, 0.9]
        a = kmeans_1d(samples, 3)
        b = kmeans_1d(samples, 3)
        assert a == b

    def test_never_beats_contiguous_split_optimum(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            n = int(rng.integers(4, 13))
            samples = rng.uniform(0.2, 3.0, size=n).tolist()
            k = int(rng.integers(2, 4))
            res = kmeans_1d(samples, k)
            assert res.wcss >= kmeans_contiguous_optimum(samples, k) - 1e-9

    def test_matches_contiguous_split_optimum_on_grouped_data(self):
        # single-start Lloyd's can stall on spread-out samples, but on
        # data with k separated similar-sized groups (the shape anchor
        # design exists for) it should recover the optimal split
        rng = np.random.default_rng(17)
        hits = 0
        trials = 100
        for _ in range(trials):
            k = int(rng.integers(2, 4))
            n = int(rng.integers(k + 1, 13))
            samples = _grouped_samples(rng, k, n)
            res = kmeans_1d(samples, k)
            best = kmeans_contiguous_optimum(sorted(samples), k)
            assert res.wcss >= best - 1e-9
            if res.wcss <= best + 1e-9:
                hits += 1
        assert hits >= 0.95 * trials, f"only {hits}/{trials} optimal"


class TestSeparation:
    def test_wide_gap_passes(self):
        res = kmeans_1d([0.5, 0.5, 0.7, 0.7], 2)
        assert validate_separation(res, 0.1) == []

    def test_narrow_gap_warns(self):
        res = kmeans_1d([0.50, 0.50, 0.55, 0.55], 2)
        warnings = validate_separation(res, 0.1)
        assert len(warnings) == 1
        assert warnings[0].lower == pytest.approx(0.50)
        assert warnings[0].upper == pytest.approx(0.55)

    def test_single_center_never_warns(self):
        res = kmeans_1d([0.4, 0.6], 1)
        assert validate_separation(res, 10.0) == []
