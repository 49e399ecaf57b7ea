"""Synthetic non-i.i.d. classification task: softmax regression on a Gaussian mixture."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .. import rng as streams


class EmptyBatch(ValueError):
    """A gradient was requested over zero samples."""


@dataclass(frozen=True)
class SyntheticTask:
    """Training data split into label-sorted shards plus a held-out test set.

    The model is a flat vector ``[W.ravel(), b]`` with ``W`` of shape
    ``(num_classes, feature_dim)``; the per-sample loss is softmax
    cross-entropy, which is non-negative and smooth.
    """

    features: np.ndarray        # (K * D, feature_dim)
    labels: np.ndarray          # (K * D,)
    shards: List[np.ndarray]    # per-device index arrays into features
    test_features: np.ndarray
    test_labels: np.ndarray
    class_means: np.ndarray
    noise_scale: float

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.class_means.shape[0]

    @property
    def num_devices(self) -> int:
        return len(self.shards)

    @property
    def shard_size(self) -> int:
        return len(self.shards[0])

    @property
    def dim(self) -> int:
        return self.feature_dim * self.num_classes + self.num_classes

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)

    # -- model evaluation ---------------------------------------------------

    def _split(self, w: np.ndarray):
        c, d = self.num_classes, self.feature_dim
        return w[: c * d].reshape(c, d), w[c * d:]

    def _probs(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        weights, bias = self._split(w)
        logits = x @ weights.T + bias
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        return p

    def _residual(self, w, idx):
        x = self.features[idx]
        p = self._probs(w, x)
        p[np.arange(len(idx)), self.labels[idx]] -= 1.0
        return x, p

    def loss(self, w: np.ndarray, idx=None) -> float:
        """Mean cross-entropy over ``idx`` (default: the whole training set)."""
        if idx is None:
            idx = np.arange(len(self.labels))
        p = self._probs(w, self.features[idx])
        picked = p[np.arange(len(idx)), self.labels[idx]]
        return float(-np.mean(np.log(np.maximum(picked, 1e-300))))

    def gradient(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Mean per-sample loss gradient over training indices ``idx``."""
        idx = np.asarray(idx)
        if idx.size == 0:
            raise EmptyBatch("gradient over an empty batch")
        x, resid = self._residual(w, idx)
        n = len(idx)
        return np.concatenate([(resid.T @ x).ravel() / n, resid.sum(axis=0) / n])

    def sample_gradients(self, w: np.ndarray, idx: np.ndarray) -> np.ndarray:
        """Per-sample gradients, one row per index."""
        x, resid = self._residual(w, np.asarray(idx))
        outer = resid[:, :, None] * x[:, None, :]
        return np.concatenate([outer.reshape(len(x), -1), resid], axis=1)

    def shard_gradient(self, w: np.ndarray, k: int) -> np.ndarray:
        return self.gradient(w, self.shards[k])

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        return self.gradient(w, np.arange(len(self.labels)))

    def shard_sample_gradients(self, w: np.ndarray, k: int) -> np.ndarray:
        return self.sample_gradients(w, self.shards[k])

    def accuracy(self, w: np.ndarray) -> float:
        p = self._probs(w, self.test_features)
        return float(np.mean(p.argmax(axis=1) == self.test_labels))

    def smoothness_upper_bound(self) -> float:
        """Global smoothness constant of the training loss.

        The softmax Hessian block ``diag(p) - p p^T`` has spectral norm at most
        1/2, so ``mu <= lambda_max(mean x~ x~^T) / 2`` with ``x~ = [x, 1]``.
        """
        x = np.hstack([self.features, np.ones((len(self.features), 1))])
        gram = x.T @ x / len(x)
        return 0.5 * float(np.linalg.eigvalsh(gram)[-1])


def local_gradient(task: SyntheticTask, model: np.ndarray, k: int, batch: Sequence[int]) -> np.ndarray:
    """Mini-batch gradient at device ``k``; ``batch`` indexes into its shard."""
    batch = np.asarray(batch, dtype=int)
    if batch.size == 0:
        raise EmptyBatch(f"device {k} asked for an empty batch")
    shard = task.shards[k]
    if batch.min() < 0 or batch.max() >= len(shard):
        raise IndexError("batch index outside the device's shard")
    return task.gradient(model, shard[batch])


def build_task(seed: int, K: int, D: int, feature_dim: int = 10, num_classes: int = 10,
               noise_scale: float = 1.0, separation: float = 1.0,
               test_size: int = 1000) -> SyntheticTask:
    """Gaussian-mixture data, label-sorted and cut into ``K`` contiguous shards of ``D``.

    Classes are balanced, so with ``num_classes <= K`` every shard holds
    samples of at most two classes.
    """
    if num_classes < 2:
        raise ValueError("need at least two classes")
    if K < 1 or D < 1:
        raise ValueError("K and D must be positive")
    if num_classes > K * D:
        raise ValueError("fewer samples than classes")
    gen = streams.substream(seed, streams.TASK)
    means = separation * gen.standard_normal((num_classes, feature_dim))
    n = K * D
    labels = np.sort(np.arange(n) % num_classes)
    features = means[labels] + noise_scale * gen.standard_normal((n, feature_dim))
    test_labels = np.arange(test_size) % num_classes
    test_features = means[test_labels] + noise_scale * gen.standard_normal((test_size, feature_dim))
    shards = [np.arange(k * D, (k + 1) * D) for k in range(K)]
    return SyntheticTask(features, labels, shards, test_features, test_labels, means, noise_scale)
