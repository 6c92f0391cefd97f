"""scikit-learn style facade over the two-stage pipeline.

`TileContextClassifier` is a fit/predict estimator for image batches and
`RegionFeatureTransformer` exposes contextualized pooled features as a
transform, so the pipeline composes with the usual sklearn tooling
(get_params/set_params, clone, Pipeline).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import tensor as T
from .pipeline import Model, PipelineConfig
from .synthetic import SyntheticDataset
from .training import train


def check_images(X, in_channels: int = 1) -> np.ndarray:
    """Validate and canonicalize to (n, channels, h, w) float64."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[:, None, :, :]
    if X.ndim != 4:
        raise ValueError(f"expected (n, h, w) or (n, c, h, w) images, got {X.shape}")
    if X.shape[1] != in_channels:
        raise ValueError(f"expected {in_channels} channel(s), got {X.shape[1]}")
    if X.shape[0] == 0:
        raise ValueError("empty image batch")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    return X


def _as_dataset(X: np.ndarray, y: np.ndarray, region_size: int) -> SyntheticDataset:
    n = X.shape[0]
    return SyntheticDataset(
        images=X, labels=y.astype(np.int64),
        markers=np.zeros((n, 4), dtype=np.int64),
        seed=0, input_size=X.shape[-1], region_size=region_size)


class TileContextClassifier(BaseEstimator, ClassifierMixin):
    """End-to-end trainable classifier over large images.

    Stage 1 encodes fixed-size regions independently; a context encoder
    ("xl", "attn", "ssm" or "identity") mixes information across regions;
    a linear head reads the pooled tokens.
    """

    def __init__(self, region_size=32, context="ssm", context_depth=None,
                 epochs=10, batch_size=16, lr=1e-3, weight_decay=0.0,
                 chunk_capacity=4, attn_mode="exact", seed=0):
        self.region_size = region_size
        self.context = context
        self.context_depth = context_depth
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.chunk_capacity = chunk_capacity
        self.attn_mode = attn_mode
        self.seed = seed

    def _build(self, input_size: int, n_classes: int) -> Model:
        cfg = PipelineConfig(
            input_size=input_size, region_size=self.region_size,
            context=self.context, context_depth=self.context_depth,
            chunk_capacity=self.chunk_capacity, attn_mode=self.attn_mode,
            n_classes=n_classes)
        return Model(cfg, seed=self.seed)

    def fit(self, X, y):
        X = check_images(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y shape {y.shape} != ({X.shape[0]},)")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        self.model_ = self._build(X.shape[-1], len(self.classes_))
        result = train(self.model_, _as_dataset(X, encoded, self.region_size),
                       epochs=self.epochs, batch_size=self.batch_size,
                       lr=self.lr, weight_decay=self.weight_decay,
                       seed=self.seed)
        self.loss_curve_ = [loss for _, loss, _ in result.curve]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")

    def decision_scores(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_images(X)
        out = []
        with T.no_grad():
            for start in range(0, X.shape[0], 64):
                logits = self.model_.logits(T.tensor(X[start:start + 64]))
                out.append(logits.data.copy())
        return np.concatenate(out, axis=0)

    def predict_proba(self, X) -> np.ndarray:
        scores = self.decision_scores(X)
        scores = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_scores(X)
        return self.classes_[scores.argmax(axis=1)]


class RegionFeatureTransformer(BaseEstimator, TransformerMixin):
    """Pooled contextualized features as an sklearn transform.

    fit() only instantiates deterministic random weights; transform() maps
    (n, h, w) images to (n, width) feature rows.
    """

    def __init__(self, region_size=32, context="ssm", seed=0):
        self.region_size = region_size
        self.context = context
        self.seed = seed

    def fit(self, X, y=None):
        X = check_images(X)
        cfg = PipelineConfig(
            input_size=X.shape[-1], region_size=self.region_size,
            context=self.context)
        self.model_ = Model(cfg, seed=self.seed)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before transform")
        X = check_images(X)
        out = []
        with T.no_grad():
            for start in range(0, X.shape[0], 64):
                tokens = self.model_.forward_tokens(T.tensor(X[start:start + 64]))
                out.append(self.model_.pool(tokens).data.copy())
        return np.concatenate(out, axis=0)
