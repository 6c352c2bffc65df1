"""Vision model, weighted target objective, training loop and ablation.

The model is a one-hidden-layer tanh MLP feature extractor f followed by a
linear classifier h. Each training step pairs a labeled source batch with a
target batch and descends the sum of three terms: source cross-entropy on
weak views, the reliability-weighted target term, and (optionally) a
contrastive term over weak/strong target features. The target term mixes,
per sample i with reliability w_i, the caption pseudo-label (weight w_i)
against the model's own gradient-stopped strong-view prediction (weight
1 - w_i), so unreliable captions defer to the model's consolidated view.

Target ground-truth labels are read by `evaluate` only; every training
signal comes from pseudo-labels, reliability weights and caption geometry.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .contrastive import (
    CaptionSimilarity,
    caption_similarity_matrix,
    hard_contrastive_node,
    soft_contrastive_node,
)
from .data import (
    AugmentationConfig,
    EmbeddingDataset,
    augment,
    batch_iter,
    read_embedding_file,
    write_embedding_file,
)
from .errors import (
    ConfigError,
    DatasetError,
    DivergenceError,
    FormatError,
    NonFiniteError,
    ShapeError,
    TrustError,
)
from .numerics import DiffGraph, Node, as_matrix, backward
from .pseudolabel import PseudoLabels, generate_pseudo_labels, train_text_classifier
from .seeding import seed_int, spawn_rng
from .uncertainty import ReliabilityWeights, score_dataset

PARAM_NAMES = ("w1", "b1", "w2", "b2", "wh", "bh")


@dataclass
class VisionModel:
    """f: tanh MLP d_img -> hidden -> feature_dim; h: linear -> num_classes."""

    w1: np.ndarray  # (hidden, d_img)
    b1: np.ndarray  # (1, hidden)
    w2: np.ndarray  # (feature_dim, hidden)
    b2: np.ndarray  # (1, feature_dim)
    wh: np.ndarray  # (num_classes, feature_dim)
    bh: np.ndarray  # (1, num_classes)

    @classmethod
    def init(cls, d_img: int, hidden: int, feature_dim: int, num_classes: int,
             seed: int) -> "VisionModel":
        rng = spawn_rng(seed, "model-init")
        return cls(
            w1=rng.standard_normal((hidden, d_img)) / np.sqrt(d_img),
            b1=np.zeros((1, hidden)),
            w2=rng.standard_normal((feature_dim, hidden)) / np.sqrt(hidden),
            b2=np.zeros((1, feature_dim)),
            wh=rng.standard_normal((num_classes, feature_dim)) / np.sqrt(feature_dim),
            bh=np.zeros((1, num_classes)))

    def params(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_NAMES]

    @classmethod
    def from_params(cls, params: list[np.ndarray]) -> "VisionModel":
        return cls(**dict(zip(PARAM_NAMES, params)))

    @property
    def num_classes(self) -> int:
        return self.wh.shape[0]

    def validate(self) -> None:
        shapes = {name: getattr(self, name).shape for name in PARAM_NAMES}
        if shapes["b1"] != (1, shapes["w1"][0]) or shapes["b2"] != (1, shapes["w2"][0]):
            raise ShapeError("bias shapes must match layer widths")
        if shapes["w2"][1] != shapes["w1"][0] or shapes["wh"][1] != shapes["w2"][0]:
            raise ShapeError("layer widths must chain d_img -> hidden -> P -> C")
        if shapes["bh"] != (1, shapes["wh"][0]):
            raise ShapeError("classifier bias must match class count")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise DatasetError(f"model parameter {name} is non-finite")

    def features_np(self, x: np.ndarray) -> np.ndarray:
        x = as_matrix(x, "x")
        return np.tanh(x @ self.w1.T + self.b1) @ self.w2.T + self.b2

    def logits_np(self, x: np.ndarray) -> np.ndarray:
        return self.features_np(x) @ self.wh.T + self.bh


def _param_nodes(g: DiffGraph, model: VisionModel) -> dict[str, Node]:
    return {name: g.leaf(getattr(model, name)) for name in PARAM_NAMES}


def _forward_features(g: DiffGraph, pn: dict[str, Node], x: np.ndarray) -> Node:
    hid = g.tanh(g.add(g.matmul(g.const(x), g.transpose(pn["w1"])), pn["b1"]))
    return g.add(g.matmul(hid, g.transpose(pn["w2"])), pn["b2"])


def _head_logits(g: DiffGraph, pn: dict[str, Node], feats: Node) -> Node:
    return g.add(g.matmul(feats, g.transpose(pn["wh"])), pn["bh"])


def _onehot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1:
        raise ShapeError("labels must be 1-D")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DatasetError("labels out of range for the class count")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def source_loss_node(g: DiffGraph, pn: dict[str, Node], x: np.ndarray,
                     labels: np.ndarray, num_classes: int,
                     aug: AugmentationConfig, seed: int) -> Node:
    """Mean cross-entropy of h(f(weak view)) against ground-truth labels."""
    if labels is None:
        raise DatasetError("source classification loss needs labels")
    x_w = augment(x, "weak", aug, seed)
    logits = _head_logits(g, pn, _forward_features(g, pn, x_w))
    onehot = _onehot(labels, num_classes)
    picked = g.mul(g.const(onehot), g.row_log_softmax(logits))
    return g.scale(g.sum_all(picked), -1.0 / x.shape[0])


def target_loss_node(g: DiffGraph, pn: dict[str, Node], x: np.ndarray,
                     pseudo_labels: np.ndarray, weights: np.ndarray,
                     num_classes: int, aug: AugmentationConfig, seed: int,
                     teacher_probs: np.ndarray | None = None) -> Node:
    """Per sample: w * CE(weak logits, pseudo-label)
                 + (1-w) * CE(weak logits, stopped strong-view prediction).

    `teacher_probs` overrides the internally computed gradient-stopped
    teacher with a fixed constant; the loss value and the analytic gradient
    are identical, which is what finite-difference checks need.
    """
    b = x.shape[0]
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape != (b,):
        raise DatasetError(f"need one weight per batch row, got {weights.shape}")
    if np.asarray(pseudo_labels).shape != (b,):
        raise DatasetError("need one pseudo-label per batch row")
    if weights.size and (weights.min() < 0.0 or weights.max() > 1.0):
        raise DatasetError("weights must lie in [0, 1]")

    x_w = augment(x, "weak", aug, seed)
    logits_w = _head_logits(g, pn, _forward_features(g, pn, x_w))
    logp_w = g.row_log_softmax(logits_w)

    if teacher_probs is None:
        x_s = augment(x, "strong", aug, seed)
        logits_s = _head_logits(g, pn, _forward_features(g, pn, x_s))
        teacher = g.stop_gradient(g.row_softmax(logits_s))
    else:
        teacher = g.const(teacher_probs)

    onehot = _onehot(pseudo_labels, num_classes)
    ll_pseudo = g.row_sum(g.mul(g.const(onehot), logp_w))   # (B,1)
    ll_teacher = g.row_sum(g.mul(teacher, logp_w))          # (B,1)
    wcol = weights.reshape(-1, 1)
    mixed = g.add(g.mul(g.const(wcol), ll_pseudo),
                  g.mul(g.const(1.0 - wcol), ll_teacher))
    return g.scale(g.sum_all(mixed), -1.0 / b)


def teacher_probs_np(model: VisionModel, x: np.ndarray,
                     aug: AugmentationConfig, seed: int) -> np.ndarray:
    """The strong-view softmax the stopped teacher would produce."""
    x_s = augment(x, "strong", aug, seed)
    logits = model.logits_np(x_s)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


# public single-batch wrappers (fresh private graph each)

def source_cls_loss(model: VisionModel, x: np.ndarray, labels: np.ndarray,
                    num_classes: int, aug: AugmentationConfig, seed: int) -> Node:
    model.validate()
    g = DiffGraph()
    return source_loss_node(g, _param_nodes(g, model), as_matrix(x, "x"),
                            labels, num_classes, aug, seed)


def target_cls_loss(model: VisionModel, x: np.ndarray,
                    pseudo_labels: np.ndarray, weights: np.ndarray,
                    num_classes: int, aug: AugmentationConfig, seed: int) -> Node:
    model.validate()
    g = DiffGraph()
    return target_loss_node(g, _param_nodes(g, model), as_matrix(x, "x"),
                            pseudo_labels, weights, num_classes, aug, seed)


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 30
    lr: float = 0.05
    tau: float = 0.1
    gamma: float = 10.0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    seed: int = 0
    use_soft_ctr: bool = True
    use_hard_ctr: bool = False
    use_uncertainty: bool = True
    hidden: int = 64
    feature_dim: int = 32
    # near the class count: a clean pair's softmax diagonal is ~1/(1 + other
    # same-class captions in the scoring batch), so large batches floor every
    # weight near zero and the reweighted loss degenerates to self-teaching
    scoring_batch_size: int = 8
    text_epochs: int = 200
    text_lr: float = 0.5

    def validate(self) -> None:
        if self.use_soft_ctr and self.use_hard_ctr:
            raise ConfigError("use_soft_ctr and use_hard_ctr are mutually exclusive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0 or self.tau <= 0 or self.gamma <= 0:
            raise ConfigError("lr, tau and gamma must be > 0")
        if self.hidden < 1 or self.feature_dim < 1:
            raise ConfigError("hidden and feature_dim must be >= 1")
        if self.scoring_batch_size < 2:
            raise ConfigError("scoring_batch_size must be >= 2")
        if self.text_epochs < 0 or self.text_lr <= 0:
            raise ConfigError("text classifier settings out of range")
        self.augmentation.validate()

    def to_json_dict(self) -> dict:
        return asdict(self)


def total_loss(model: VisionModel, src_x: np.ndarray, src_labels: np.ndarray,
               tgt_x: np.ndarray, tgt_pseudo: np.ndarray,
               tgt_weights: np.ndarray, sim: CaptionSimilarity | None,
               config: TrainConfig, seed_src: int, seed_tgt: int,
               teacher_probs: np.ndarray | None = None
               ) -> tuple[Node, dict[str, float]]:
    """Unweighted sum of the three terms on a private graph.

    Returns the total node plus the evaluated parts; `parts["contrastive"]`
    is 0.0 when both contrastive toggles are off.
    """
    model.validate()
    config.validate()
    g = DiffGraph()
    pn = _param_nodes(g, model)
    parts = _loss_parts(g, pn, model.num_classes, as_matrix(src_x, "src_x"),
                        src_labels, as_matrix(tgt_x, "tgt_x"), tgt_pseudo,
                        tgt_weights, sim, config, seed_src, seed_tgt,
                        teacher_probs)
    total = parts["source"]
    total = g.add(total, parts["target"])
    if parts["contrastive"] is not None:
        total = g.add(total, parts["contrastive"])
    values = {name: (0.0 if node is None else float(node.value[0, 0]))
              for name, node in parts.items()}
    return total, values


def _loss_parts(g: DiffGraph, pn: dict[str, Node], c: int,
                src_x: np.ndarray, src_labels: np.ndarray, tgt_x: np.ndarray,
                tgt_pseudo: np.ndarray, tgt_weights: np.ndarray,
                sim: CaptionSimilarity | None, config: TrainConfig,
                seed_src: int, seed_tgt: int,
                teacher_probs: np.ndarray | None) -> dict[str, Node | None]:
    parts: dict[str, Node | None] = {}
    parts["source"] = source_loss_node(g, pn, src_x, src_labels, c,
                                       config.augmentation, seed_src)
    parts["target"] = target_loss_node(g, pn, tgt_x, tgt_pseudo, tgt_weights,
                                       c, config.augmentation, seed_tgt,
                                       teacher_probs)
    if config.use_soft_ctr or config.use_hard_ctr:
        # same seeded views as the target term, so the contrastive features
        # describe the very samples being classified
        x_w = augment(tgt_x, "weak", config.augmentation, seed_tgt)
        x_s = augment(tgt_x, "strong", config.augmentation, seed_tgt)
        z = _forward_features(g, pn, x_w)
        z_bar = _forward_features(g, pn, x_s)
        if config.use_soft_ctr:
            if sim is None:
                raise ConfigError("soft contrastive loss needs caption similarity")
            parts["contrastive"] = soft_contrastive_node(g, z, z_bar, sim,
                                                         config.tau)
        else:
            parts["contrastive"] = hard_contrastive_node(g, z, z_bar, config.tau)
    else:
        parts["contrastive"] = None
    return parts


@dataclass
class EpochStats:
    source_loss: float
    target_loss: float
    contrastive_loss: float
    target_accuracy: float | None


@dataclass
class TrainReport:
    per_epoch: list[EpochStats]
    final_target_accuracy: float | None
    config: dict
    pseudo_label_count: int
    wall_clock_seconds: float

    def to_json_dict(self) -> dict:
        # wall-clock deliberately excluded: artifacts from identical seeded
        # runs must be byte-identical
        return {
            "config": self.config,
            "per_epoch": [asdict(e) for e in self.per_epoch],
            "final_target_accuracy": self.final_target_accuracy,
            "pseudo_label_count": self.pseudo_label_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def evaluate(model: VisionModel, dataset: EmbeddingDataset) -> float:
    """Mean argmax accuracy on raw (unaugmented) images. The only reader of
    target ground-truth labels in the package."""
    model.validate()
    dataset.validate()
    if dataset.labels is None:
        raise DatasetError("evaluate needs a labeled dataset")
    if dataset.n == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    pred = np.argmax(model.logits_np(dataset.image_emb), axis=1)
    return float(np.mean(pred == dataset.labels))


def _check_compatible(source: EmbeddingDataset, target: EmbeddingDataset) -> None:
    if source.image_emb.shape[1] != target.image_emb.shape[1]:
        raise DatasetError("source and target image dimensions differ")
    if source.caption_emb.shape[1] != target.caption_emb.shape[1]:
        raise DatasetError("source and target caption dimensions differ")
    if source.num_classes != target.num_classes:
        raise DatasetError("source and target class counts differ")


def train(source: EmbeddingDataset, target: EmbeddingDataset,
          config: TrainConfig, pseudo: PseudoLabels | None = None,
          weights: ReliabilityWeights | None = None
          ) -> tuple[VisionModel, TrainReport]:
    """SGD over paired source/target minibatches; the shorter side cycles.

    Pseudo-labels and reliability weights are computed here (in that order)
    when not supplied. Deterministic given config.seed.
    """
    t0 = time.monotonic()
    source.validate()
    target.validate()
    config.validate()
    _check_compatible(source, target)

    if pseudo is None:
        clf = train_text_classifier(source, epochs=config.text_epochs,
                                    lr=config.text_lr)
        pseudo = generate_pseudo_labels(clf, target)
    if pseudo.labels.shape[0] != target.n:
        raise DatasetError("pseudo-labels do not cover the target dataset")
    if pseudo.labels.size and pseudo.labels.max() >= source.num_classes:
        raise DatasetError("pseudo-labels exceed the class count")

    if config.use_uncertainty:
        if weights is None:
            weights = score_dataset(target, config.scoring_batch_size,
                                    config.gamma, config.seed)
        if weights.w.shape[0] != target.n:
            raise DatasetError("reliability weights do not cover the target dataset")
        w_all = weights.w
    else:
        # toggle off: trust every pseudo-label fully
        w_all = np.ones(target.n)

    c = source.num_classes
    model = VisionModel.init(source.image_emb.shape[1], config.hidden,
                             config.feature_dim, c, config.seed)
    params = model.params()

    def current_model() -> VisionModel:
        return VisionModel.from_params([p.copy() for p in params])

    per_epoch: list[EpochStats] = []
    for epoch in range(config.epochs):
        src_batches = batch_iter(source, config.batch_size,
                                 seed_int(config.seed, "src-batches"), epoch)
        tgt_batches = batch_iter(target, config.batch_size,
                                 seed_int(config.seed, "tgt-batches"), epoch)
        steps = max(len(src_batches), len(tgt_batches))
        sums = {"source": 0.0, "target": 0.0, "contrastive": 0.0}
        for step in range(steps):
            sb = src_batches[step % len(src_batches)]
            tb = tgt_batches[step % len(tgt_batches)]
            seed_src = seed_int(config.seed, "aug-src", epoch, step)
            seed_tgt = seed_int(config.seed, "aug-tgt", epoch, step)
            sim = None
            if config.use_soft_ctr:
                sim = caption_similarity_matrix(target.caption_emb[tb])
            g = DiffGraph()
            pn = {name: g.leaf(p) for name, p in zip(PARAM_NAMES, params)}
            try:
                parts = _loss_parts(g, pn, c,
                                    source.image_emb[sb], source.labels[sb],
                                    target.image_emb[tb], pseudo.labels[tb],
                                    w_all[tb], sim, config, seed_src, seed_tgt,
                                    teacher_probs=None)
                total = g.add(parts["source"], parts["target"])
                if parts["contrastive"] is not None:
                    total = g.add(total, parts["contrastive"])
                backward(g, total)
            except (NonFiniteError, ShapeError) as exc:
                raise DivergenceError(
                    f"training diverged at epoch {epoch} step {step}: {exc}"
                ) from exc
            for name in sums:
                node = parts[name]
                sums[name] += 0.0 if node is None else float(node.value[0, 0])
            for k, name in enumerate(PARAM_NAMES):
                params[k] = params[k] - config.lr * pn[name].grad
                if not np.all(np.isfinite(params[k])):
                    raise DivergenceError(
                        f"parameter {name} became non-finite at epoch {epoch} "
                        f"step {step}; lower the learning rate")
        acc = (evaluate(current_model(), target)
               if target.labels is not None else None)
        per_epoch.append(EpochStats(
            source_loss=sums["source"] / steps,
            target_loss=sums["target"] / steps,
            contrastive_loss=sums["contrastive"] / steps,
            target_accuracy=acc))

    final_model = current_model()
    final_acc = (evaluate(final_model, target)
                 if target.labels is not None else None)
    report = TrainReport(per_epoch=per_epoch, final_target_accuracy=final_acc,
                         config=config.to_json_dict(),
                         pseudo_label_count=int(pseudo.labels.shape[0]),
                         wall_clock_seconds=time.monotonic() - t0)
    return final_model, report


ABLATION_ROWS: tuple[tuple[str, dict], ...] = (
    ("none", {"use_soft_ctr": False, "use_hard_ctr": False, "use_uncertainty": False}),
    ("hard_ctr", {"use_soft_ctr": False, "use_hard_ctr": True, "use_uncertainty": False}),
    ("uncertainty", {"use_soft_ctr": False, "use_hard_ctr": False, "use_uncertainty": True}),
    ("soft_ctr", {"use_soft_ctr": True, "use_hard_ctr": False, "use_uncertainty": False}),
    ("full", {"use_soft_ctr": True, "use_hard_ctr": False, "use_uncertainty": True}),
)


@dataclass
class AblationResult:
    rows: list[dict]
    config: dict

    def to_json_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    def accuracy(self, name: str) -> float:
        for row in self.rows:
            if row["name"] == name:
                return row["final_target_accuracy"]
        raise KeyError(name)


def ablate(source: EmbeddingDataset, target: EmbeddingDataset,
           config: TrainConfig) -> AblationResult:
    """The five toggle combinations, same seed, shared pseudo-labels and
    weights so rows differ only in the loss composition."""
    source.validate()
    target.validate()
    config.validate()
    if target.labels is None:
        raise DatasetError("ablation needs target labels to report accuracy")

    clf = train_text_classifier(source, epochs=config.text_epochs,
                                lr=config.text_lr)
    pseudo = generate_pseudo_labels(clf, target)
    weights = score_dataset(target, config.scoring_batch_size, config.gamma,
                            config.seed)

    rows = []
    for name, toggles in ABLATION_ROWS:
        row_config = replace(config, **toggles)
        _, report = train(source, target, row_config, pseudo=pseudo,
                          weights=weights)
        rows.append({
            "name": name,
            "use_soft_ctr": toggles["use_soft_ctr"],
            "use_hard_ctr": toggles["use_hard_ctr"],
            "use_uncertainty": toggles["use_uncertainty"],
            "final_target_accuracy": report.final_target_accuracy,
        })
    return AblationResult(rows=rows, config=config.to_json_dict())


# checkpoints

MODEL_MANIFEST = "model.json"


def save_model(model: VisionModel, directory: Path) -> None:
    """Parameters as embedding-format matrices plus a manifest. Stored in
    float32 like every other artifact."""
    model.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in PARAM_NAMES:
        files[name] = f"{name}.emb"
        write_embedding_file(directory / files[name], getattr(model, name))
    manifest = {
        "format_version": 1,
        "kind": "vision_model",
        "dims": {
            "d_img": int(model.w1.shape[1]),
            "hidden": int(model.w1.shape[0]),
            "feature_dim": int(model.w2.shape[0]),
            "num_classes": int(model.wh.shape[0]),
        },
        "files": files,
    }
    (directory / MODEL_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_model(directory: Path) -> VisionModel:
    directory = Path(directory)
    path = directory / MODEL_MANIFEST
    if not path.is_file():
        raise FormatError(f"{path}: missing model manifest")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("kind") != "vision_model" or manifest.get("format_version") != 1:
        raise FormatError(f"{path}: not a vision model checkpoint")
    files = manifest.get("files", {})
    arrays = {}
    for name in PARAM_NAMES:
        if name not in files:
            raise FormatError(f"{path}: files missing {name!r}")
        arrays[name] = read_embedding_file(directory / files[name])
    model = VisionModel(**arrays)
    model.validate()
    return model
