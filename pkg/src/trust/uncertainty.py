"""Reliability weights from joint image-caption embeddings.

For a scoring batch, S[i][j] is the scaled cosine similarity between image
i and caption j; each row is softmaxed and the diagonal entry becomes the
sample's weight. A well-matched pair dominates its row and scores near 1,
a mismatched caption shares mass with lookalike rows and scores low. The
joint encoders are frozen, so weights are computed once, before training,
over a fixed seeded partition of the target set.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingDataset, read_embedding_file, write_embedding_file
from .errors import ConfigError, DatasetError, ShapeError
from .numerics import as_matrix
from .seeding import spawn_rng

WEIGHTS_FILE = "weights.emb"


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # (B, B), entry (i, j) = gamma * cos(image_i, caption_j)

    def validate(self) -> None:
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ShapeError(f"similarity matrix must be square, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DatasetError("similarity matrix contains non-finite values")


@dataclass
class ReliabilityWeights:
    w: np.ndarray                 # (N,), each in (0, 1)
    scoring_batch_id: np.ndarray  # (N,) int64

    def validate(self) -> None:
        if self.w.ndim != 1 or self.scoring_batch_id.shape != self.w.shape:
            raise ShapeError("weights and batch ids must be aligned 1-D arrays")
        if not np.all(np.isfinite(self.w)):
            raise DatasetError("weights contain non-finite values")
        if self.w.size and (self.w.min() <= 0.0 or self.w.max() >= 1.0):
            raise DatasetError("weights must lie strictly inside (0, 1)")


def _unit_rows(x: np.ndarray, name: str) -> np.ndarray:
    absmax = np.abs(x).max(axis=1, keepdims=True)
    if np.any(absmax == 0.0):
        raise ShapeError(f"{name}: zero-norm row cannot be cosine-normalized")
    scaled = x / absmax
    norms = absmax * np.sqrt((scaled * scaled).sum(axis=1, keepdims=True))
    return x / norms


def clip_similarity(clip_img: np.ndarray, clip_txt: np.ndarray,
                    gamma: float = 10.0) -> SimilarityMatrix:
    """values[i][j] = gamma * cos(clip_img[i], clip_txt[j])."""
    a = as_matrix(clip_img, "clip_img")
    b = as_matrix(clip_txt, "clip_txt")
    if a.shape != b.shape:
        raise ShapeError(
            f"clip_img {a.shape} and clip_txt {b.shape} must match")
    if gamma <= 0:
        raise ConfigError("gamma must be > 0")
    cos = _unit_rows(a, "clip_img") @ _unit_rows(b, "clip_txt").T
    np.clip(cos, -1.0, 1.0, out=cos)  # roundoff can spill past +-1
    out = SimilarityMatrix(values=gamma * cos)
    out.validate()
    return out


def row_softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _open_interval(w: np.ndarray) -> np.ndarray:
    # the true softmax diagonal is always interior, but saturation can round
    # to exactly 0 or 1 in float64; nudge such artifacts back inside
    return np.clip(w, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def reliability_weights(sim: SimilarityMatrix) -> ReliabilityWeights:
    """Diagonal of the row-softmaxed similarity matrix."""
    sim.validate()
    probs = row_softmax(sim.values)
    w = _open_interval(np.diag(probs))
    out = ReliabilityWeights(w=w, scoring_batch_id=np.zeros(w.size, dtype=np.int64))
    out.validate()
    return out


def score_dataset(target: EmbeddingDataset, scoring_batch_size: int = 64,
                  gamma: float = 10.0, seed: int = 0) -> ReliabilityWeights:
    """Weights for every sample, over a fixed seeded batch partition.

    The trailing short batch borrows samples from the first batch to stay
    full-size (the softmax floor 1/B is then uniform across batches);
    borrowed samples keep the weight from their own batch.
    """
    target.validate()
    n = target.n
    if scoring_batch_size < 2:
        raise ConfigError("scoring_batch_size must be >= 2")
    if n < scoring_batch_size:
        raise DatasetError(
            f"dataset has {n} samples, fewer than scoring batch size "
            f"{scoring_batch_size}")
    perm = spawn_rng(seed, "scoring").permutation(n)
    b = scoring_batch_size
    w = np.zeros(n)
    batch_id = np.zeros(n, dtype=np.int64)
    n_full, rem = divmod(n, b)
    batches = [perm[k * b:(k + 1) * b] for k in range(n_full)]
    if rem:
        batches.append(np.concatenate([perm[n_full * b:], perm[:b - rem]]))
    for k, idx in enumerate(batches):
        sim = clip_similarity(target.clip_img[idx], target.clip_txt[idx], gamma)
        diag = _open_interval(np.diag(row_softmax(sim.values)))
        genuine = slice(0, rem) if (rem and k == n_full) else slice(None)
        w[idx[genuine]] = diag[genuine]
        batch_id[idx[genuine]] = k
    out = ReliabilityWeights(w=w, scoring_batch_id=batch_id)
    out.validate()
    return out


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties sharing the average rank."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, positive: np.ndarray) -> float:
    """Mann-Whitney AUROC of `scores` for the boolean `positive` class."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    if scores.shape != positive.shape or scores.ndim != 1:
        raise ShapeError("scores and class mask must be aligned 1-D arrays")
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DatasetError("AUROC needs both a positive and a negative class")
    ranks = _average_ranks(scores)
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def weight_histogram(weights: ReliabilityWeights,
                     mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, float]:
    """Fixed 50-bin histograms of w over [0,1] for clean and corrupted
    samples, plus the AUROC of w as a clean-vs-corrupted score."""
    weights.validate()
    if mask is None:
        raise DatasetError("weight histogram needs a corrupted_mask")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != weights.w.shape:
        raise ShapeError("mask and weights must be aligned")
    clean_hist = np.histogram(weights.w[~mask], bins=50, range=(0.0, 1.0))[0]
    corr_hist = np.histogram(weights.w[mask], bins=50, range=(0.0, 1.0))[0]
    score = auroc(weights.w, ~mask)
    return clean_hist, corr_hist, score


def save_weights(weights: ReliabilityWeights, directory: Path) -> None:
    weights.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_embedding_file(directory / WEIGHTS_FILE, weights.w.reshape(-1, 1))


def load_weights(directory: Path) -> ReliabilityWeights:
    m = read_embedding_file(Path(directory) / WEIGHTS_FILE)
    if m.ndim != 2 or m.shape[1] != 1:
        raise DatasetError("weights file must be N x 1")
    w = m[:, 0].copy()
    if w.size and (w.min() < 0.0 or w.max() > 1.0):
        raise DatasetError("weights must lie strictly inside (0, 1)")
    # float32 storage rounds saturated weights onto the boundary; nudge back
    w = np.clip(w, 1e-12, 1.0 - 1e-12)
    out = ReliabilityWeights(w=w,
                             scoring_batch_id=np.zeros(m.shape[0], dtype=np.int64))
    out.validate()
    return out
