"""Metrics and split protocols for the recognition experiments.

Confusion matrices, macro precision/recall/F1, stratified k-fold,
leave-one-operator-out, the seven-folder holdout, and the recognition
length sweep.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .mce import MceConfig, TrainConfig, predict_batch, train
from .preprocess import WindowDataset, normalize

N_CLASSES = 6


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (6, 6), cell (i, j) = true i predicted j

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.shape != (N_CLASSES, N_CLASSES) or np.any(self.counts < 0):
            raise ValueError("confusion matrix must be 6x6 non-negative counts")

    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True).astype(float)
        out = np.divide(self.counts, sums, out=np.zeros_like(self.counts, dtype=float), where=sums > 0)
        return out

    def to_csv(self) -> str:
        lines = [",".join(str(int(v)) for v in row) for row in self.counts]
        return "\n".join(lines) + "\n"


def confusion(preds, labels) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if len(preds) != len(labels):
        raise ValueError("preds and labels must have equal length")
    if len(labels) and (labels.min() < 0 or labels.max() >= N_CLASSES or preds.min() < 0 or preds.max() >= N_CLASSES):
        raise ValueError("labels out of range 0..5")
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=int)
    np.add.at(cm, (labels, preds), 1)
    return ConfusionMatrix(cm)


@dataclass
class MetricReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
        }


def metrics(cm: ConfusionMatrix) -> MetricReport:
    """Accuracy plus macro precision/recall/F1 (unweighted means over classes).

    Zero-denominator cells are defined as 0, with a warning, so macro means
    never propagate NaN.
    """
    c = cm.counts
    total = c.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    tp = np.diag(c).astype(float)
    pred_totals = c.sum(axis=0).astype(float)
    true_totals = c.sum(axis=1).astype(float)
    if np.any(pred_totals == 0) or np.any(true_totals == 0):
        warnings.warn("empty class row/column; precision/recall defined as 0 there")
    precision = np.divide(tp, pred_totals, out=np.zeros(N_CLASSES), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros(N_CLASSES), where=true_totals > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(N_CLASSES), where=pr > 0)
    return MetricReport(
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
    )


@dataclass
class SplitPlan:
    """Disjoint (train, test) id lists under a named protocol."""

    protocol: str
    splits: list  # [(train_ids, test_ids), ...]

    def __post_init__(self):
        for train_ids, test_ids in self.splits:
            if set(train_ids) & set(test_ids):
                raise ValueError("train and test ids overlap")


def kfold(labels, k: int = 10, seed: int = 0) -> SplitPlan:
    """Stratified k-fold over item ids 0..len(labels)-1, deterministic per seed."""
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > n:
        raise ValueError(f"k={k} exceeds dataset size {n}")
    rng = np.random.default_rng(np.random.SeedSequence([0xF01D, seed]))
    folds = [[] for _ in range(k)]
    for c in np.unique(labels):
        ids = np.nonzero(labels == c)[0]
        rng.shuffle(ids)
        for i, idx in enumerate(ids):
            folds[i % k].append(int(idx))
    all_ids = set(range(n))
    splits = [(sorted(all_ids - set(f)), sorted(f)) for f in folds]
    return SplitPlan(protocol="kfold", splits=splits)


def leave_one_operator_out(operators, group_size: int = 1) -> SplitPlan:
    """One split per held-out operator group; no operator on both sides."""
    operators = np.asarray(operators, dtype=int)
    uniq = sorted(set(int(o) for o in operators))
    if len(uniq) < 2:
        raise ValueError("need >= 2 operators for leave-one-operator-out")
    if group_size < 1 or group_size > len(uniq) - 1:
        raise ValueError("invalid group size")
    groups = [uniq[i : i + group_size] for i in range(0, len(uniq), group_size)]
    splits = []
    for g in groups:
        test_ids = sorted(int(i) for i in np.nonzero(np.isin(operators, g))[0])
        train_ids = sorted(int(i) for i in np.nonzero(~np.isin(operators, g))[0])
        splits.append((train_ids, test_ids))
    return SplitPlan(protocol="leave-one-operator-out", splits=splits)


def folder_holdout(labels, operators=None, n_folders: int = 7, n_test_folders: int = 3, seed: int = 0) -> SplitPlan:
    """Assign items to folders stratified by class (and operator), hold out some.

    Mirrors the protocol of splitting the corpus into seven folders and
    testing on three randomly chosen ones.
    """
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    if n_folders < 2 or not (0 < n_test_folders < n_folders):
        raise ValueError("invalid folder counts")
    operators = np.zeros(n, dtype=int) if operators is None else np.asarray(operators, dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence([0xF07D, seed]))
    folder_of = np.zeros(n, dtype=int)
    i = 0
    for c in np.unique(labels):
        for o in np.unique(operators):
            ids = np.nonzero((labels == c) & (operators == o))[0]
            rng.shuffle(ids)
            for idx in ids:
                folder_of[idx] = i % n_folders
                i += 1
    test_folders = rng.choice(n_folders, size=n_test_folders, replace=False)
    test_ids = sorted(int(i) for i in np.nonzero(np.isin(folder_of, test_folders))[0])
    train_ids = sorted(int(i) for i in np.nonzero(~np.isin(folder_of, test_folders))[0])
    return SplitPlan(protocol="folder-holdout", splits=[(train_ids, test_ids)])


def stratified_holdout(labels, test_fraction: float = 1 / 6, seed: int = 0) -> SplitPlan:
    """Single stratified split (the 200-train/40-test shape at 240 items).

    Test counts per class follow largest-remainder allocation so the total
    matches round(n * test_fraction) exactly with class proportions within
    one item.
    """
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence([0x51D0, seed]))
    classes = np.unique(labels)
    quotas = {c: len(np.nonzero(labels == c)[0]) * test_fraction for c in classes}
    base = {c: int(np.floor(q)) for c, q in quotas.items()}
    n_total = int(round(len(labels) * test_fraction))
    leftovers = sorted(classes, key=lambda c: quotas[c] - base[c], reverse=True)
    extra = n_total - sum(base.values())
    for c in leftovers[:extra]:
        base[c] += 1
    test_ids = []
    for c in classes:
        ids = np.nonzero(labels == c)[0]
        test_ids += list(rng.choice(ids, max(1, base[c]), replace=False))
    test_ids = sorted(int(i) for i in test_ids)
    train_ids = sorted(set(range(len(labels))) - set(test_ids))
    return SplitPlan(protocol="stratified-holdout", splits=[(train_ids, test_ids)])


def evaluate_split(
    ds: WindowDataset,
    train_rec_ids,
    test_rec_ids,
    mce_config: MceConfig = MceConfig(),
    train_config: TrainConfig = TrainConfig(),
):
    """Train on one recording-level split and report window-level metrics.

    Returns (report, params, norm_stats, extras). Normalization statistics
    come from the training windows only.
    """
    tr = ds.subset_by_recordings(train_rec_ids)
    te = ds.subset_by_recordings(test_rec_ids)
    Xtr, stats = normalize(tr.windows)
    Xte, _ = normalize(te.windows, stats)
    params, history = train(Xtr, tr.labels, mce_config, train_config, val_windows=Xte, val_labels=te.labels)
    preds = predict_batch(params, Xte).argmax(axis=1)
    report = metrics(confusion(preds, te.labels))
    return report, params, stats, {"history": history, "preds": preds, "labels": te.labels}


@dataclass
class SweepRow:
    length: int
    accuracy: float | None
    sampling_s: float
    inference_ms: float | None
    error: str | None = None


def length_sweep(
    recordings_series,
    labels,
    lengths=(32, 64, 128, 251),
    mce_config: MceConfig = MceConfig(),
    train_config: TrainConfig = TrainConfig(),
    rate_hz: float = 100.0,
    seed: int = 0,
) -> list[SweepRow]:
    """Train one model per recognition length on identical recording splits.

    recordings_series: (M, 3, 251) preprocessed series, one per recording.
    Reports held-out window accuracy, the sampling time length/rate, and the
    measured per-window inference time. Failures in one length do not stop
    the sweep.
    """
    series = np.asarray(recordings_series)
    labels = np.asarray(labels, dtype=int)
    plan = stratified_holdout(labels, test_fraction=1 / 6, seed=seed)
    train_ids, test_ids = plan.splits[0]
    rows = []
    for n in lengths:
        if n > series.shape[2]:
            rows.append(SweepRow(length=n, accuracy=None, sampling_s=n / rate_hz, inference_ms=None,
                                 error=f"length {n} exceeds series length {series.shape[2]}"))
            continue
        try:
            stride = max(1, n // 2)
            def cut(ids):
                ws, ys = [], []
                for i in ids:
                    for s in range(0, series.shape[2] - n + 1, stride):
                        ws.append(series[i, :, s : s + n])
                        ys.append(labels[i])
                return np.asarray(ws), np.asarray(ys)

            Xtr_raw, ytr = cut(train_ids)
            Xte_raw, yte = cut(test_ids)
            Xtr, stats = normalize(Xtr_raw)
            Xte, _ = normalize(Xte_raw, stats)
            cfg_n = MceConfig(
                window_len=n, channels=mce_config.channels, d_model=mce_config.d_model,
                n_heads=mce_config.n_heads, conv_kernel=mce_config.conv_kernel,
                conv_channels=mce_config.conv_channels, fc_dim=mce_config.fc_dim,
                mlp_hidden=mce_config.mlp_hidden, n_classes=mce_config.n_classes,
                dropout=mce_config.dropout,
            )
            params, _ = train(Xtr, ytr, cfg_n, train_config, val_windows=Xte, val_labels=yte)
            preds = predict_batch(params, Xte).argmax(axis=1)
            acc = float(np.mean(preds == yte))
            t0 = time.perf_counter()
            reps = 20
            for i in range(reps):
                predict_batch(params, Xte[i % len(Xte)][None])
            inference_ms = (time.perf_counter() - t0) / reps * 1e3
            rows.append(SweepRow(length=n, accuracy=acc, sampling_s=n / rate_hz, inference_ms=inference_ms))
        except Exception as exc:  # keep sweeping remaining lengths
            rows.append(SweepRow(length=n, accuracy=None, sampling_s=n / rate_hz, inference_ms=None, error=str(exc)))
    return rows


def sweep_table(rows: list[SweepRow]) -> str:
    """Aligned-column text table with the sampling/inference decomposition."""
    header = f"{'Length':>8} {'Accuracy':>10} {'Sampling s':>11} {'Inference ms':>13} {'Total s':>9}"
    lines = [header]
    for r in rows:
        if r.error:
            lines.append(f"{r.length:>8} {'error':>10}  {r.error}")
        else:
            total = r.sampling_s + r.inference_ms / 1e3
            lines.append(
                f"{r.length:>8} {r.accuracy:>10.4f} {r.sampling_s:>11.2f} {r.inference_ms:>13.2f} {total:>9.2f}"
            )
    return "\n".join(lines) + "\n"


def report_table(reports: dict) -> str:
    """Aligned-column text block for named metric reports."""
    header = f"{'Run':>24} {'Accuracy':>9} {'Prec_macro':>11} {'Recall_macro':>13} {'F1_macro':>9}"
    lines = [header]
    for name, r in reports.items():
        lines.append(
            f"{name:>24} {r.accuracy:>9.4f} {r.macro_precision:>11.4f} {r.macro_recall:>13.4f} {r.macro_f1:>9.4f}"
        )
    return "\n".join(lines) + "\n"
