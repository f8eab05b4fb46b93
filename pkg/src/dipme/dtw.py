"""Dynamic-time-warping distance and a k-NN classifier over it.

Serves as the independent baseline the encoder model is compared against.
Per-channel DTW uses squared local costs inside a Sakoe-Chiba band and the
final per-channel distance is the square root of the optimal path cost, so
the distance of a series to itself is zero and never exceeds the plain
Euclidean distance of the aligned pair.
"""

from __future__ import annotations

import numpy as np
from numba import njit

SAKOE_CHIBA_FRACTION = 0.1


@njit(cache=True)
def _dtw_band_sq(x, y, band):
    n, m = len(x), len(y)
    w = max(band, abs(n - m)) + 1
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[:] = inf
        jlo = max(1, i - w)
        jhi = min(m, i + w)
        for j in range(jlo, jhi + 1):
            d = x[i - 1] - y[j - 1]
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = d * d + best
        prev, cur = cur, prev
    return prev[m]


def dtw_distance(a: np.ndarray, b: np.ndarray, band_fraction: float = SAKOE_CHIBA_FRACTION) -> float:
    """Multivariate DTW: sum over channels of the per-channel DTW distances.

    a, b: (channels, N) arrays. The warping band is band_fraction of the
    longer length.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[None]
        b = b[None]
    band = int(round(band_fraction * max(a.shape[1], b.shape[1])))
    total = 0.0
    for c in range(a.shape[0]):
        total += np.sqrt(_dtw_band_sq(a[c], b[c], band))
    return float(total)


@njit(cache=True, parallel=False)
def _pairwise_dtw(tests, trains, band):
    nt = tests.shape[0]
    nr = trains.shape[0]
    ch = tests.shape[1]
    out = np.empty((nt, nr))
    for i in range(nt):
        for j in range(nr):
            total = 0.0
            for c in range(ch):
                total += np.sqrt(_dtw_band_sq(tests[i, c], trains[j, c], band))
            out[i, j] = total
    return out


def pairwise_distances(
    test_windows: np.ndarray, train_windows: np.ndarray, band_fraction: float = SAKOE_CHIBA_FRACTION
) -> np.ndarray:
    test_windows = np.ascontiguousarray(test_windows, dtype=np.float64)
    train_windows = np.ascontiguousarray(train_windows, dtype=np.float64)
    band = int(round(band_fraction * max(test_windows.shape[2], train_windows.shape[2])))
    return _pairwise_dtw(test_windows, train_windows, band)


def _vote(dists: np.ndarray, labels: np.ndarray, k: int, n_classes: int = 6) -> int:
    order = np.argsort(dists, kind="stable")[:k]
    near_labels = labels[order]
    counts = np.bincount(near_labels, minlength=n_classes)
    top = counts.max()
    tied = np.nonzero(counts == top)[0]
    if len(tied) == 1:
        return int(tied[0])
    # break ties by smallest mean distance among the tied classes
    means = [dists[order][near_labels == c].mean() for c in tied]
    return int(tied[int(np.argmin(means))])


def dtw_knn_predict(
    train_windows: np.ndarray,
    train_labels: np.ndarray,
    test_window: np.ndarray,
    k: int = 3,
    band_fraction: float = SAKOE_CHIBA_FRACTION,
) -> int:
    """Majority vote of the k DTW-nearest training windows."""
    train_windows = np.asarray(train_windows, dtype=np.float64)
    train_labels = np.asarray(train_labels, dtype=int)
    if len(train_windows) == 0:
        raise ValueError("empty training set")
    if k > len(train_windows):
        raise ValueError(f"k={k} exceeds training set size {len(train_windows)}")
    dists = pairwise_distances(np.asarray(test_window, dtype=np.float64)[None], train_windows, band_fraction)[0]
    return _vote(dists, train_labels, k)


def dtw_knn_predict_batch(
    train_windows: np.ndarray,
    train_labels: np.ndarray,
    test_windows: np.ndarray,
    k: int = 3,
    band_fraction: float = SAKOE_CHIBA_FRACTION,
) -> np.ndarray:
    """Vectorized variant classifying a stack of test windows."""
    train_labels = np.asarray(train_labels, dtype=int)
    if len(train_windows) == 0:
        raise ValueError("empty training set")
    if k > len(train_windows):
        raise ValueError(f"k={k} exceeds training set size {len(train_windows)}")
    d = pairwise_distances(np.asarray(test_windows, dtype=np.float64), np.asarray(train_windows, dtype=np.float64), band_fraction)
    return np.array([_vote(d[i], train_labels, k) for i in range(len(d))], dtype=int)
