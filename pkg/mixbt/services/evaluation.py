"""
Representation-quality measurement on frozen features: weighted k-NN classification,
linear probing and the self-correlation diagnostic.
"""
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple

import numpy as np

from mixbt.core.exceptions import EvaluationError
from mixbt.core.logging_config import get_logger
from mixbt.services.losses import NORM_EPS, normalize_embeddings
from mixbt.services.optim import OptimState, adam_step, exponential_lr
from mixbt.utils import diffcore as dc
from mixbt.utils.diffcore import Tensor
from mixbt.utils.rng import PROBE_STREAM, keyed_rng

logger = get_logger(__name__)

KNN_TEMPERATURE = 0.5
FULL_SCALE_K = 200
QUERY_CHUNK = 256

Weighting = Literal["exp", "uniform"]


@dataclass
class FeatureBank:
    features: np.ndarray  # M×h, unit rows (zero rows stay zero)
    labels: np.ndarray
    class_count: int

    @classmethod
    def from_features(cls, features: np.ndarray, labels: np.ndarray, class_count: int) -> "FeatureBank":
        """Row-normalize `features`; rows with zero norm are kept as zero."""
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if features.ndim != 2 or labels.shape != (features.shape[0],):
            raise EvaluationError(f"features {features.shape} and labels {labels.shape} do not line up")
        if labels.size and (labels.min() < 0 or labels.max() >= class_count):
            raise EvaluationError(f"labels outside [0, {class_count})")
        norms = np.linalg.norm(features, axis=1, keepdims=True)
        unit = np.divide(features, norms, out=np.zeros_like(features), where=norms > 0)
        return cls(features=unit, labels=labels, class_count=class_count)

    def __len__(self) -> int:
        return self.features.shape[0]


def default_k(bank_size: int) -> int:
    """k = 200 once the bank holds 2000 rows, otherwise min(200, M // 10) (at least 1)."""
    if bank_size >= 10 * FULL_SCALE_K:
        return FULL_SCALE_K
    return max(1, min(FULL_SCALE_K, bank_size // 10))


def knn_predict(bank: FeatureBank, queries: FeatureBank, k: int, temp: float = KNN_TEMPERATURE,
                weighting: Weighting = "exp") -> np.ndarray:
    """
    Predicted class per query. Neighbours are ranked by cosine similarity with ties going
    to the lower bank index; class ties go to the lower class index.
    """
    if len(bank) == 0:
        raise EvaluationError("k-NN needs a non-empty feature bank")
    if not 1 <= k <= len(bank):
        raise EvaluationError(f"k={k} must lie in [1, {len(bank)}] (bank size)")
    if bank.class_count != queries.class_count:
        raise EvaluationError(f"bank has {bank.class_count} classes, queries have {queries.class_count}")
    if bank.features.shape[1] != queries.features.shape[1]:
        raise EvaluationError(f"feature widths differ: {bank.features.shape[1]} vs {queries.features.shape[1]}")
    if weighting not in ("exp", "uniform"):
        raise EvaluationError(f"unknown k-NN weighting '{weighting}'")
    if weighting == "exp" and not temp > 0:
        raise EvaluationError(f"k-NN temperature must be > 0, got {temp}")

    predictions = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), QUERY_CHUNK):
        sims = queries.features[start:start + QUERY_CHUNK] @ bank.features.T
        neighbours = np.argsort(-sims, axis=1, kind="stable")[:, :k]
        top_sims = np.take_along_axis(sims, neighbours, axis=1)
        weights = np.exp(top_sims / temp) if weighting == "exp" else np.ones_like(top_sims)
        votes = np.zeros((sims.shape[0], bank.class_count))
        rows = np.repeat(np.arange(sims.shape[0]), k)
        np.add.at(votes, (rows, bank.labels[neighbours].reshape(-1)), weights.reshape(-1))
        predictions[start:start + sims.shape[0]] = np.argmax(votes, axis=1)
    return predictions


def knn_evaluate(bank: FeatureBank, queries: FeatureBank, k: int, temp: float = KNN_TEMPERATURE,
                 weighting: Weighting = "exp") -> float:
    """Top-1 accuracy of similarity-weighted k-NN voting."""
    if len(queries) == 0:
        raise EvaluationError("k-NN needs at least one query")
    predictions = knn_predict(bank, queries, k, temp, weighting)
    return float(np.mean(predictions == queries.labels))


def _softmax_cross_entropy(logits: Tensor, onehot: np.ndarray) -> Tensor:
    rows = logits.shape[0]
    normaliser = dc.sum(dc.logsumexp_rows(logits))
    target = dc.sum(dc.mul(logits, Tensor(onehot)))
    return dc.div(dc.sub(normaliser, target), rows)


def linear_probe(features_train: np.ndarray, labels: np.ndarray, features_test: np.ndarray,
                 labels_test: np.ndarray, epochs: int, batch_size: int, *, class_count: Optional[int] = None,
                 lr: float = 1e-3, gamma: float = 0.97, weight_decay: float = 1e-6, seed: int = 0) -> float:
    """
    Train one affine layer with softmax cross-entropy on frozen features and return test
    top-1 accuracy. Adam with lr_t = lr · gamma^epoch; the last partial batch is kept.

    Args:
        features_train, features_test: feature matrices; they are copied, never modified.
        class_count: number of classes; inferred from the training labels when omitted.
    """
    features_train = np.asarray(features_train, dtype=np.float64)
    features_test = np.asarray(features_test, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    labels_test = np.asarray(labels_test, dtype=np.int64)
    if features_train.ndim != 2 or features_test.ndim != 2 or features_train.shape[1] != features_test.shape[1]:
        raise EvaluationError(f"feature shapes differ: {features_train.shape} vs {features_test.shape}")
    if labels.shape != (features_train.shape[0],) or labels_test.shape != (features_test.shape[0],):
        raise EvaluationError("every feature row needs exactly one label")
    if labels.size == 0 or labels_test.size == 0:
        raise EvaluationError("linear probing needs non-empty train and test sets")
    if epochs < 1 or batch_size < 1:
        raise EvaluationError(f"epochs and batch_size must be >= 1, got {epochs} and {batch_size}")
    classes = int(class_count if class_count is not None else labels.max() + 1)
    if labels.min() < 0 or labels.max() >= classes or labels_test.min() < 0 or labels_test.max() >= classes:
        raise EvaluationError(f"labels do not fit {classes} classes")

    width = features_train.shape[1]
    params = [Tensor(np.zeros((width, classes)), requires_grad=True),
              Tensor(np.zeros(classes), requires_grad=True)]
    state = OptimState.for_params(params)
    onehot = np.eye(classes)[labels]
    m = features_train.shape[0]

    for epoch in range(epochs):
        epoch_lr = exponential_lr(lr, gamma, epoch)
        order = keyed_rng(PROBE_STREAM, seed, epoch).permutation(m)
        for start in range(0, m, batch_size):
            index = order[start:start + batch_size]
            weight, bias = params
            logits = dc.add(dc.matmul(Tensor(features_train[index]), weight), dc.expand_rows(bias, index.size))
            loss = _softmax_cross_entropy(logits, onehot[index])
            dc.backward(loss)
            params, state = adam_step(params, [p.grad for p in params], state, epoch_lr, weight_decay)
    weight, bias = params
    scores = features_test @ weight.data + bias.data
    accuracy = float(np.mean(np.argmax(scores, axis=1) == labels_test))
    logger.debug(f"Linear probe: {epochs} epochs on {m} rows, test top-1 {accuracy:.4f}")
    return accuracy


def redundancy_diagnostic(z) -> Tuple[float, float]:
    """
    (mean |off-diagonal|, mean diagonal) of the self cross-correlation of batch-normalized z.
    A single-column z has no off-diagonal entries and reports 0 for them.
    """
    z = z if isinstance(z, Tensor) else Tensor(z)
    with dc.no_grad():
        zn = normalize_embeddings(z, NORM_EPS).data
    c = zn.T @ zn / zn.shape[0]
    d = c.shape[0]
    off = np.abs(c[~np.eye(d, dtype=bool)])
    return (float(off.mean()) if off.size else 0.0, float(np.diag(c).mean()))


def overfitting_gap(knn_history: Sequence[float]) -> float:
    """Best minus final k-NN accuracy over a run; 0 for an empty history."""
    if len(knn_history) == 0:
        return 0.0
    return float(max(knn_history) - knn_history[-1])
