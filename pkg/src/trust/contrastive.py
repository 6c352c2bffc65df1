"""Caption-guided contrastive losses over weak/strong feature views.

`hard_contrastive_node` is the standard self-supervised form: each anchor's
strong view is the only positive and the other weak views are negatives
(the positive is excluded from the denominator, exactly as written in the
hard form; the soft-to-hard reduction below depends on that). The soft form
replaces the hard positive/negative split with caption-similarity weights:
every strong view attracts anchor i with strength sim[i][p] and every other
weak view repels with strength 1 - sim[i][j]. With sim = identity the soft
loss equals the hard loss plus B * log B.

Loss builders append to a caller-supplied DiffGraph so the trainer can
differentiate through its model; the batch-level wrappers build a private
graph for standalone evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DatasetError, ShapeError
from .numerics import DiffGraph, Node, as_matrix


@dataclass
class CaptionSimilarity:
    """Pairwise clamped caption cosines: sim[a][b] = max(0, cos(t_a, t_b))."""

    sim: np.ndarray  # (B, B)

    def validate(self) -> None:
        s = self.sim
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ShapeError(f"caption similarity must be square, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DatasetError("caption similarity contains non-finite values")
        if not np.array_equal(s, s.T):
            raise DatasetError("caption similarity must be symmetric")
        if not np.all(np.diag(s) == 1.0):
            raise DatasetError("caption similarity diagonal must be 1")
        if s.size and (s.min() < 0.0 or s.max() > 1.0):
            raise DatasetError("caption similarity entries must lie in [0, 1]")


@dataclass
class ContrastiveBatch:
    """Weak-view and strong-view features for one target batch, unit rows."""

    z: np.ndarray      # (B, P) weak view
    z_bar: np.ndarray  # (B, P) strong view
    tau: float = 0.1

    def validate(self) -> None:
        z = as_matrix(self.z, "z")
        zb = as_matrix(self.z_bar, "z_bar")
        if z.shape != zb.shape:
            raise ShapeError(f"z {z.shape} and z_bar {zb.shape} must match")
        if z.shape[0] < 2:
            raise ShapeError("contrastive batch needs B >= 2")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        for name, m in (("z", z), ("z_bar", zb)):
            norms = np.linalg.norm(m, axis=1)
            if np.abs(norms - 1.0).max() > 1e-9:
                raise DatasetError(f"{name} rows must be L2-normalized")


def caption_similarity_matrix(caption_emb: np.ndarray) -> CaptionSimilarity:
    """Clamped caption cosines, symmetrized, diagonal forced to 1."""
    x = as_matrix(caption_emb, "caption_emb")
    absmax = np.abs(x).max(axis=1, keepdims=True)
    if np.any(absmax == 0.0):
        raise ShapeError("caption_similarity: zero-norm caption embedding")
    scaled = x / absmax
    norms = absmax * np.sqrt((scaled * scaled).sum(axis=1, keepdims=True))
    u = x / norms
    cos = u @ u.T
    cos = 0.5 * (cos + cos.T)  # exact symmetry despite roundoff
    sim = np.clip(cos, 0.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    out = CaptionSimilarity(sim=sim)
    out.validate()
    return out


def pair_weights_report(sim: CaptionSimilarity) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair (positiveness, negativeness); the two sum to 1."""
    sim.validate()
    return sim.sim.copy(), 1.0 - sim.sim


def _prepared(g: DiffGraph, z: Node, z_bar: Node, tau: float,
              normalize: bool) -> tuple[Node, Node, int]:
    if z.shape != z_bar.shape:
        raise ShapeError(f"z {z.shape} and z_bar {z_bar.shape} must match")
    b = z.shape[0]
    if b < 2:
        raise ShapeError("contrastive loss needs B >= 2 (no negatives otherwise)")
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    if normalize:
        z = g.l2_normalize_rows(z)
        z_bar = g.l2_normalize_rows(z_bar)
    return z, z_bar, b


def hard_contrastive_node(g: DiffGraph, z: Node, z_bar: Node, tau: float = 0.1,
                          normalize: bool = True) -> Node:
    """L = -sum_i log[ exp(z_i.zbar_i/tau) / sum_{j!=i} exp(z_i.z_j/tau) ].

    Set normalize=False only when rows are already unit; dot products are
    then taken verbatim.
    """
    z, z_bar, b = _prepared(g, z, z_bar, tau, normalize)
    eye = np.eye(b)
    logits_pos = g.scale(g.matmul(z, g.transpose(z_bar)), 1.0 / tau)
    logits_weak = g.scale(g.matmul(z, g.transpose(z)), 1.0 / tau)
    pos = g.row_sum(g.mul(logits_pos, g.const(eye)))            # (B,1) diagonal
    den = g.row_sum(g.mul(g.exp(logits_weak), g.const(1.0 - eye)))
    return g.sum_all(g.sub(g.log(den), pos))


def soft_contrastive_node(g: DiffGraph, z: Node, z_bar: Node,
                          sim: CaptionSimilarity, tau: float = 0.1,
                          normalize: bool = True) -> Node:
    """L = -sum_i log[ (1/B) sum_p sim[i][p] exp(z_i.zbar_p/tau)
                       / sum_{j!=i} (1-sim[i][j]) exp(z_i.z_j/tau) ]."""
    z, z_bar, b = _prepared(g, z, z_bar, tau, normalize)
    sim.validate()
    if sim.sim.shape != (b, b):
        raise ShapeError(
            f"caption similarity {sim.sim.shape} does not match batch size {b}")
    eye = np.eye(b)
    repulsion = (1.0 - sim.sim) * (1.0 - eye)
    if np.any(repulsion.max(axis=1) == 0.0):
        raise DatasetError(
            "soft contrastive loss undefined: some anchor sees only "
            "identical captions, so every repulsion weight is 0")
    logits_pos = g.scale(g.matmul(z, g.transpose(z_bar)), 1.0 / tau)
    logits_weak = g.scale(g.matmul(z, g.transpose(z)), 1.0 / tau)
    num = g.scale(g.row_sum(g.mul(g.exp(logits_pos), g.const(sim.sim))), 1.0 / b)
    den = g.row_sum(g.mul(g.exp(logits_weak), g.const(repulsion)))
    return g.sum_all(g.sub(g.log(den), g.log(num)))


def hard_contrastive_loss(batch: ContrastiveBatch) -> Node:
    """Standalone evaluation on a private graph."""
    batch.validate()
    g = DiffGraph()
    return hard_contrastive_node(g, g.leaf(batch.z), g.leaf(batch.z_bar),
                                 batch.tau, normalize=False)


def soft_contrastive_loss(batch: ContrastiveBatch, sim: CaptionSimilarity) -> Node:
    """Standalone evaluation on a private graph."""
    batch.validate()
    g = DiffGraph()
    return soft_contrastive_node(g, g.leaf(batch.z), g.leaf(batch.z_bar), sim,
                                 batch.tau, normalize=False)
