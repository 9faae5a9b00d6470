"""Scikit-learn style estimators wrapping the hopping classifier.

``X`` is a list of (audio, tokens, video) triples — audio/video as (T, d)
float arrays, tokens as a 1-D integer array — and ``y`` is a label vector
(ints or strings).  The estimators follow the fit/predict/predict_proba
protocol and compose with model_selection utilities that accept list-like X.
"""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import MultimodalSample
from .gru import ModalitySequence
from .network import ModelConfig, predict_probs
from .training import TrainConfig, train_single


def validate_triples(X) -> List[tuple]:
    """Check the (audio, tokens, video) structure and return cleaned triples."""
    triples = []
    for i, item in enumerate(X):
        if isinstance(item, MultimodalSample):
            triples.append(
                (item.audio.features, item.text.features, item.video.features)
            )
            continue
        if len(item) != 3:
            raise ValueError(f"X[{i}]: expected an (audio, tokens, video) triple")
        audio, tokens, video = item
        audio = np.asarray(audio, dtype=np.float64)
        video = np.asarray(video, dtype=np.float64)
        tokens = np.asarray(tokens)
        if audio.ndim != 2 or video.ndim != 2:
            raise ValueError(f"X[{i}]: audio/video must be 2-D (time, features)")
        if tokens.ndim != 1:
            raise ValueError(f"X[{i}]: tokens must be a 1-D integer array")
        if not np.issubdtype(tokens.dtype, np.integer):
            if not np.all(tokens == tokens.astype(np.int64)):
                raise ValueError(f"X[{i}]: tokens must be integers")
            tokens = tokens.astype(np.int64)
        if min(audio.shape[0], video.shape[0], tokens.shape[0]) < 1:
            raise ValueError(f"X[{i}]: every modality needs at least one step")
        triples.append((audio, tokens, video))
    if not triples:
        raise ValueError("X is empty")
    first_audio = triples[0][0].shape[1]
    first_video = triples[0][2].shape[1]
    for i, (audio, _, video) in enumerate(triples):
        if audio.shape[1] != first_audio:
            raise ValueError(
                f"X[{i}]: audio dim {audio.shape[1]} differs from X[0] ({first_audio})"
            )
        if video.shape[1] != first_video:
            raise ValueError(
                f"X[{i}]: video dim {video.shape[1]} differs from X[0] ({first_video})"
            )
    return triples


class _HoppingEstimatorBase(BaseEstimator, ClassifierMixin):
    _kind = "amh"

    def _model_config(self, triples, n_classes) -> ModelConfig:
        vocab = self.vocab_size
        if vocab is None:
            vocab = int(max(int(t[1].max()) for t in triples)) + 1
        return ModelConfig(
            kind=self._kind,
            n_hops=getattr(self, "n_hops", 1),
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            vocab_size=vocab,
            audio_dim=triples[0][0].shape[1],
            video_dim=triples[0][2].shape[1],
            labels=tuple(str(c) for c in range(n_classes)),
        )

    def fit(self, X, y):
        triples = validate_triples(X)
        y = np.asarray(y)
        if y.shape[0] != len(triples):
            raise ValueError(f"len(y)={y.shape[0]} does not match len(X)={len(triples)}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        samples = [
            MultimodalSample(
                id=str(i),
                audio=ModalitySequence(a, a.shape[0]),
                text=ModalitySequence(t, t.shape[0]),
                video=ModalitySequence(v, v.shape[0]),
                label=int(label),
            )
            for i, ((a, t, v), label) in enumerate(zip(triples, y_idx))
        ]
        config = self._model_config(triples, len(self.classes_))
        tcfg = TrainConfig(
            lr=self.lr,
            clip_norm=self.clip_norm,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
        )
        rng = np.random.default_rng(np.random.SeedSequence([self.random_state]))
        if self.validation_fraction > 0 and len(samples) >= 10:
            n_dev = max(1, int(round(self.validation_fraction * len(samples))))
            order = rng.permutation(len(samples))
            dev = [samples[i] for i in order[:n_dev]]
            train = [samples[i] for i in order[n_dev:]]
        else:
            dev, train = [], samples
        self.model_params_, self.history_ = train_single(
            train, dev, config, tcfg, np.random.SeedSequence([self.random_state, 1])
        )
        return self

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        triples = validate_triples(X)
        probs = []
        for i, (a, t, v) in enumerate(triples):
            sample = MultimodalSample(
                id=str(i),
                audio=ModalitySequence(a, a.shape[0]),
                text=ModalitySequence(t, t.shape[0]),
                video=ModalitySequence(v, v.shape[0]),
                label=0,
            )
            probs.append(predict_probs(sample, self.model_params_))
        return np.asarray(probs)

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def _check_fitted(self):
        if not hasattr(self, "model_params_"):
            raise RuntimeError("estimator is not fitted; call fit first")


class AttentiveHopClassifier(_HoppingEstimatorBase):
    """Three-stream classifier with iterative cross-modal attention hops."""

    _kind = "amh"

    def __init__(
        self,
        n_hops: int = 3,
        hidden_dim: int = 32,
        embed_dim: int = 16,
        vocab_size: Optional[int] = None,
        lr: float = 1e-3,
        clip_norm: float = 1.0,
        batch_size: int = 32,
        max_epochs: int = 50,
        patience: int = 10,
        validation_fraction: float = 0.1,
        random_state: int = 0,
    ):
        self.n_hops = n_hops
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.vocab_size = vocab_size
        self.lr = lr
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state


class ConcatFusionClassifier(_HoppingEstimatorBase):
    """Baseline: concatenated encoder last states through a dense layer."""

    _kind = "mdre"

    def __init__(
        self,
        hidden_dim: int = 32,
        embed_dim: int = 16,
        vocab_size: Optional[int] = None,
        lr: float = 1e-3,
        clip_norm: float = 1.0,
        batch_size: int = 32,
        max_epochs: int = 50,
        patience: int = 10,
        validation_fraction: float = 0.1,
        random_state: int = 0,
    ):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.vocab_size = vocab_size
        self.lr = lr
        self.clip_norm = clip_norm
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state
