import numpy as np
import pytest

from dipme.dtw import dtw_distance, dtw_knn_predict, dtw_knn_predict_batch, pairwise_distances


class TestDistance:
    def test_self_distance_zero(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((3, 64))
        assert dtw_distance(x, x) == 0.0

    def test_shifted_copy_at_most_euclidean(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 64))
        y = np.roll(x, 1, axis=1)
        euclid = sum(np.linalg.norm(x[c] - y[c]) for c in range(3))
        assert dtw_distance(x, y) <= euclid + 1e-12

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 3, 50))
        assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a), abs=1e-12)

    def test_band_limits_warping(self):
        # a feature moved far beyond the band cannot be aligned away
        n = 100
        x = np.zeros((1, n))
        x[0, 10] = 1.0
        y = np.zeros((1, n))
        y[0, 70] = 1.0
        narrow = dtw_distance(x, y, band_fraction=0.05)
        wide = dtw_distance(x, y, band_fraction=0.9)
        assert wide < narrow

    def test_matches_bruteforce_small(self):
        # full-window DP (no band) cross-check on short series
        def brute(x, y):
            n, m = len(x), len(y)
            dp = np.full((n + 1, m + 1), np.inf)
            dp[0, 0] = 0.0
            for i in range(1, n + 1):
                for j in range(1, m + 1):
                    cost = (x[i - 1] - y[j - 1]) ** 2
                    dp[i, j] = cost + min(dp[i - 1, j - 1], dp[i - 1, j], dp[i, j - 1])
            return np.sqrt(dp[n, m])

        rng = np.random.default_rng(3)
        for _ in range(10):
            x = rng.standard_normal(12)
            y = rng.standard_normal(12)
            assert dtw_distance(x[None], y[None], band_fraction=1.0) == pytest.approx(brute(x, y), abs=1e-10)


class TestKnn:
    def test_identical_window_wins_k1(self):
        rng = np.random.default_rng(4)
        train = rng.standard_normal((10, 3, 32))
        labels = np.arange(10) % 6
        assert dtw_knn_predict(train, labels, train[7], k=1) == labels[7]

    def test_empty_train_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            dtw_knn_predict(np.zeros((0, 3, 32)), np.zeros(0, dtype=int), np.zeros((3, 32)), k=1)

    def test_k_exceeding_train_rejected(self):
        train = np.zeros((2, 3, 8))
        with pytest.raises(ValueError, match="k="):
            dtw_knn_predict(train, np.array([0, 1]), np.zeros((3, 8)), k=3)

    def test_tie_broken_by_mean_distance(self):
        base = np.zeros((3, 16))
        train = np.stack([base + 0.1, base + 0.12, base + 1.0, base + 1.05])
        labels = np.array([0, 0, 1, 1])
        # k=4 ties 2-2; class 0 is closer on average
        assert dtw_knn_predict(train, labels, base, k=4) == 0

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        train = rng.standard_normal((12, 3, 24))
        labels = rng.integers(0, 6, 12)
        tests = rng.standard_normal((4, 3, 24))
        batch = dtw_knn_predict_batch(train, labels, tests, k=3)
        singles = [dtw_knn_predict(train, labels, t, k=3) for t in tests]
        assert list(batch) == singles

    def test_simulated_split_accuracy_band(self):
        # 60-recording split from the default media library, one window each
        from dipme.preprocess import build_window_dataset
        from dipme.simulate import generate_dataset

        recs = generate_dataset(10, seed=0)
        ds = build_window_dataset(recs, length=128, stride=300)
        rng = np.random.default_rng(0)
        test_ids = np.concatenate(
            [rng.choice(np.nonzero(ds.labels == c)[0], 3, replace=False) for c in range(6)]
        )
        mask = np.zeros(len(ds.labels), bool)
        mask[test_ids] = True
        preds = dtw_knn_predict_batch(ds.windows[~mask], ds.labels[~mask], ds.windows[mask], k=3)
        acc = np.mean(preds == ds.labels[mask])
        assert 0.6 <= acc <= 0.95
