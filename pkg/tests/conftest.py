"""Shared fixtures: one compact trained recognizer reused across test modules."""

import numpy as np
import pytest

from dipme.mce import MceConfig, Recognizer, TrainConfig, train
from dipme.preprocess import build_offset_jittered_dataset, normalize
from dipme.simulate import generate_dataset


def train_small_recognizer(n_per_class=16, epochs=60, seed=0) -> Recognizer:
    """Mapping-capable recognizer: random-offset windows over full series."""
    recs = generate_dataset(n_per_class, seed=seed)
    ds = build_offset_jittered_dataset(recs, length=128, windows_per_recording=4, seed=seed)
    windows, stats = normalize(ds.windows)
    params, history = train(
        windows, ds.labels, MceConfig(), TrainConfig(epochs=epochs, seed=seed),
    )
    meta = {"train_acc": history[-1]["val_acc"], "n_recordings": len(recs)}
    return Recognizer(params=params, norm=stats, meta=meta)


@pytest.fixture(scope="session")
def recognizer() -> Recognizer:
    return train_small_recognizer()
