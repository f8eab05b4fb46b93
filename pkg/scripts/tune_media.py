"""Tuning harness for the media parameter table.

Runs the acceptance-style holdout with a candidate table: DTW band check
(fast) plus an optionally shortened MCE training for signal. Not part of
the package; development tool only.
"""

import argparse
import time

import numpy as np

import dipme.simulate as sim
from dipme.dtw import dtw_knn_predict_batch
from dipme.mce import MceConfig, TrainConfig, train
from dipme.preprocess import build_window_dataset, normalize
from dipme.simulate import MEDIA_CLASSES, generate_dataset


def run(table=None, epochs=100, seed=0, split_seed=42, skip_mce=False, n_per_class=40):
    if table is not None:
        sim._MEDIA_TABLE = table
    recs = generate_dataset(n_per_class, seed=seed)
    ds = build_window_dataset(recs, length=128)
    rec_labels = {int(r): int(l) for r, l in zip(ds.rec_ids, ds.labels)}
    rng = np.random.default_rng(split_seed)
    test_recs = []
    for c in range(6):
        ids = [r for r, l in rec_labels.items() if l == c]
        test_recs += list(rng.choice(ids, max(1, len(ids) // 6), replace=False))
    test_mask = np.isin(ds.rec_ids, test_recs)
    Xtr, stats = normalize(ds.windows[~test_mask])
    ytr = ds.labels[~test_mask]
    Xte, _ = normalize(ds.windows[test_mask], stats)
    yte = ds.labels[test_mask]

    t0 = time.time()
    preds = dtw_knn_predict_batch(Xtr, ytr, Xte, k=3)
    dtw_acc = float(np.mean(preds == yte))
    cm = np.zeros((6, 6), int)
    for t, p in zip(yte, preds):
        cm[t, p] += 1
    print(f"DTW acc {dtw_acc:.4f}  ({time.time()-t0:.0f}s)")
    print("        " + " ".join(f"{n:>8}" for n in MEDIA_CLASSES))
    for i, n in enumerate(MEDIA_CLASSES):
        print(f"{n:>8}" + " ".join(f"{v:>8}" for v in cm[i]))

    if skip_mce:
        return dtw_acc, None
    t0 = time.time()
    params, hist = train(Xtr, ytr, MceConfig(), TrainConfig(seed=0, epochs=epochs),
                         val_windows=Xte, val_labels=yte)
    mce_acc = hist[-1]["val_acc"]
    from dipme.mce import predict_batch
    mp = predict_batch(params, (Xte)).argmax(axis=1)
    cm = np.zeros((6, 6), int)
    for t, p in zip(yte, mp):
        cm[t, p] += 1
    print(f"MCE acc {mce_acc:.4f}  ({time.time()-t0:.0f}s, {epochs} epochs)")
    print("        " + " ".join(f"{n:>8}" for n in MEDIA_CLASSES))
    for i, n in enumerate(MEDIA_CLASSES):
        print(f"{n:>8}" + " ".join(f"{v:>8}" for v in cm[i]))
    return dtw_acc, mce_acc


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--split-seed", type=int, default=42)
    ap.add_argument("--skip-mce", action="store_true")
    ap.add_argument("--n-per-class", type=int, default=40)
    args = ap.parse_args()
    run(epochs=args.epochs, seed=args.seed, split_seed=args.split_seed,
        skip_mce=args.skip_mce, n_per_class=args.n_per_class)
