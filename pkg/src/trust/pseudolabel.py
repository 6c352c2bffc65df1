"""Caption pseudo-labels: a linear softmax head over caption embeddings.

The head is trained on labeled source captions with full-batch gradient
descent, frozen, then run on target captions; the per-row argmax becomes
the pseudo-label. Caption features are L2-normalized inside the classifier
(train and inference): with unit features the cross-entropy gradient is
1-Lipschitz, so the fixed step size 0.5 descends monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    EmbeddingDataset,
    read_embedding_file,
    read_labels_file,
    write_embedding_file,
    write_labels_file,
)
from .errors import ConfigError, DatasetError, ShapeError
from .numerics import DiffGraph, as_matrix, backward

PSEUDO_LABELS_FILE = "pseudo_labels.lbl"
PSEUDO_LOGITS_FILE = "pseudo_logits.emb"


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    # clamp keeps all-zero caption rows as zeros instead of dividing by 0
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(norms, 1e-12)


@dataclass
class TextClassifier:
    """Frozen linear softmax head: logits = W @ normalize(t) + b."""

    weight: np.ndarray  # (C, D_txt)
    bias: np.ndarray    # (C,)
    loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]

    def validate(self) -> None:
        if self.weight.ndim != 2:
            raise ShapeError("classifier weight must be 2-D (C, D_txt)")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("classifier bias must have one entry per class")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise DatasetError("classifier parameters contain non-finite values")

    def logits(self, captions: np.ndarray) -> np.ndarray:
        self.validate()
        x = as_matrix(captions, "captions")
        if x.shape[1] != self.weight.shape[1]:
            raise ShapeError(
                f"caption dimension {x.shape[1]} does not match classifier "
                f"dimension {self.weight.shape[1]}")
        return _normalize_rows(x) @ self.weight.T + self.bias


@dataclass
class PseudoLabels:
    labels: np.ndarray  # (N_t,) int64
    logits: np.ndarray  # (N_t, C)

    def validate(self) -> None:
        if self.logits.ndim != 2 or self.labels.shape != (self.logits.shape[0],):
            raise ShapeError("pseudo-labels must align one label per logits row")
        if not np.array_equal(self.labels, np.argmax(self.logits, axis=1)):
            raise DatasetError("pseudo-labels must equal the row argmax of logits")


def train_text_classifier(source: EmbeddingDataset, epochs: int = 200,
                          lr: float = 0.5, seed: int = 0) -> TextClassifier:
    """Full-batch gradient descent from zero init on mean cross-entropy.

    `seed` is accepted for interface symmetry; full-batch descent from a
    fixed init has no randomness. Records the loss at each epoch start plus
    the final loss, so `loss_history` has epochs+1 entries.
    """
    del seed
    source.validate()
    if source.labels is None:
        raise DatasetError("text classifier needs a labeled source dataset")
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if lr <= 0:
        raise ConfigError("lr must be > 0")
    c = source.num_classes
    if c < 2:
        raise DatasetError("need at least 2 classes to train a classifier")
    present = np.unique(source.labels)
    missing = sorted(set(range(c)) - set(present.tolist()))
    if missing:
        raise DatasetError(f"source labels missing classes {missing}")

    x = _normalize_rows(source.caption_emb)
    n = x.shape[0]
    onehot = np.zeros((n, c))
    onehot[np.arange(n), source.labels] = 1.0

    weight = np.zeros((c, x.shape[1]))
    bias = np.zeros((1, c))
    history = []
    for _ in range(epochs):
        g = DiffGraph()
        w_node = g.leaf(weight)
        b_node = g.leaf(bias)
        logits = g.add(g.matmul(g.const(x), g.transpose(w_node)), b_node)
        picked = g.mul(g.const(onehot), g.row_log_softmax(logits))
        loss = g.scale(g.sum_all(picked), -1.0 / n)
        backward(g, loss)
        history.append(loss.value[0, 0])
        weight = weight - lr * w_node.grad
        bias = bias - lr * b_node.grad
    history.append(_mean_ce(x, onehot, weight, bias))

    return TextClassifier(weight=weight, bias=bias.ravel(),
                          loss_history=np.array(history))


def _mean_ce(x: np.ndarray, onehot: np.ndarray, weight: np.ndarray,
             bias: np.ndarray) -> float:
    logits = x @ weight.T + bias.reshape(1, -1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-(onehot * logp).sum() / x.shape[0])


def generate_pseudo_labels(clf: TextClassifier,
                           target: EmbeddingDataset) -> PseudoLabels:
    """Row-argmax of frozen-classifier logits; ties go to the smallest id."""
    target.validate()
    logits = clf.logits(target.caption_emb)
    labels = np.argmax(logits, axis=1).astype(np.int64)  # first max wins ties
    out = PseudoLabels(labels=labels, logits=logits)
    out.validate()
    return out


def pseudo_label_accuracy(pseudo: PseudoLabels, truth: np.ndarray) -> float:
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != pseudo.labels.shape:
        raise DatasetError(
            f"length mismatch: {pseudo.labels.shape[0]} pseudo-labels vs "
            f"{truth.shape[0]} ground-truth labels")
    if truth.size == 0:
        raise DatasetError("cannot compute accuracy on an empty label set")
    return float(np.mean(pseudo.labels == truth))


def save_pseudo_labels(pseudo: PseudoLabels, directory: Path) -> None:
    pseudo.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_labels_file(directory / PSEUDO_LABELS_FILE, pseudo.labels)
    write_embedding_file(directory / PSEUDO_LOGITS_FILE, pseudo.logits)


def load_pseudo_labels(directory: Path) -> PseudoLabels:
    directory = Path(directory)
    labels = read_labels_file(directory / PSEUDO_LABELS_FILE)
    logits = read_embedding_file(directory / PSEUDO_LOGITS_FILE)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DatasetError("pseudo-label files disagree on sample count")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise DatasetError("stored pseudo-labels out of class range")
    # logits were quantized to float32 on disk, so check argmax consistency
    # with a matching tolerance instead of exactly
    if labels.size:
        picked = logits[np.arange(labels.size), labels]
        if np.any(picked < logits.max(axis=1) - 1e-5):
            raise DatasetError("stored pseudo-labels are not the logits argmax")
    return PseudoLabels(labels=labels, logits=logits)
