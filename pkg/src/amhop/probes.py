"""Logistic-regression probes over pooled per-modality features.

Probes are the independent yardstick for the synthetic tasks: they tell us
how much label information a single modality (or pair) carries, without
involving any of this package's model code.  Audio/video are mean-pooled
over time; text becomes a normalized token histogram.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np
from sklearn.linear_model import LogisticRegression

from .data import MultimodalSample

MODALITIES = ("audio", "text", "video")


def pooled_features(sample: MultimodalSample, modality: str, vocab_size: int) -> np.ndarray:
    if modality == "audio":
        return sample.audio.features[: sample.audio.length].mean(axis=0)
    if modality == "video":
        return sample.video.features[: sample.video.length].mean(axis=0)
    if modality == "text":
        hist = np.bincount(
            sample.text.features[: sample.text.length], minlength=vocab_size
        ).astype(np.float64)
        return hist / hist.sum()
    raise ValueError(f"unknown modality {modality!r}")


def probe_accuracy(
    train: Sequence[MultimodalSample],
    test: Sequence[MultimodalSample],
    modalities: Tuple[str, ...],
    vocab_size: int,
    seed: int = 0,
) -> float:
    """Test accuracy of a logistic probe on the given modality subset."""
    def featurize(samples):
        return np.asarray(
            [
                np.concatenate([pooled_features(s, m, vocab_size) for m in modalities])
                for s in samples
            ]
        )

    x_train, y_train = featurize(train), np.asarray([s.label for s in train])
    x_test, y_test = featurize(test), np.asarray([s.label for s in test])
    clf = LogisticRegression(max_iter=2000, random_state=seed)
    clf.fit(x_train, y_train)
    return float(clf.score(x_test, y_test))


def best_single_modality_accuracy(
    train: Sequence[MultimodalSample],
    test: Sequence[MultimodalSample],
    vocab_size: int,
    seed: int = 0,
) -> Tuple[str, float]:
    scores = {m: probe_accuracy(train, test, (m,), vocab_size, seed) for m in MODALITIES}
    best = max(scores, key=scores.get)
    return best, scores[best]
