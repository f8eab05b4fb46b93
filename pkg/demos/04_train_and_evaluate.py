"""Train the multi-channel encoder on a small synthetic dataset and score it.

Uses a reduced dataset and epoch count so the demo finishes in about a
minute; the full protocol runs live in the CLI (`dipme train`, `dipme
eval`) and the acceptance suite.
"""

import numpy as np

from dipme.dtw import dtw_knn_predict_batch
from dipme.evaluate import confusion, metrics, report_table, stratified_holdout
from dipme.mce import MceConfig, TrainConfig, predict_batch, train
from dipme.preprocess import build_window_dataset, normalize
from dipme.simulate import generate_dataset

recs = generate_dataset(12, seed=0)  # 72 recordings
ds = build_window_dataset(recs, length=128)
print(f"dataset: {len(recs)} recordings -> {len(ds)} windows of 3x128")

plan = stratified_holdout([r.label for r in recs], seed=0)
train_ids, test_ids = plan.splits[0]
tr, te = ds.subset_by_recordings(train_ids), ds.subset_by_recordings(test_ids)
Xtr, stats = normalize(tr.windows)
Xte, _ = normalize(te.windows, stats)

params, history = train(
    Xtr, tr.labels, MceConfig(), TrainConfig(epochs=40, seed=0),
    val_windows=Xte, val_labels=te.labels,
)
print(f"final val accuracy after {len(history)} epochs: {history[-1]['val_acc']:.3f}")

preds = predict_batch(params, Xte).argmax(axis=1)
mce_report = metrics(confusion(preds, te.labels))

dtw_preds = dtw_knn_predict_batch(Xtr, tr.labels, Xte, k=3)
dtw_report = metrics(confusion(dtw_preds, te.labels))

print()
print(report_table({"MCE": mce_report, "DTW+KNN": dtw_report}), end="")
print("\nrow-normalized MCE confusion:")
print(np.round(confusion(preds, te.labels).row_normalized(), 2))
