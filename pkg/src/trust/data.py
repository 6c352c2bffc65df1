"""Embedding datasets: file format, synthetic two-domain generator,
embedding-space augmentations and batching.

A dataset directory holds a manifest.json plus little-endian binary files:
embeddings as "TRSTEMB1" (u32 rows, u32 cols, float32 row-major payload),
class ids as "TRSTLBL1" (u32 n, n x u32) and the caption-corruption mask as
"TRSTMSK1" (u32 n, n x u8). Floats are stored as float32 and promoted to
float64 on load; everything else in the package runs in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DatasetError, FormatError
from .seeding import spawn_rng

EMB_MAGIC = b"TRSTEMB1"
LBL_MAGIC = b"TRSTLBL1"
MSK_MAGIC = b"TRSTMSK1"

FORMAT_VERSION = 1

# manifest "files" keys -> default filenames used by save_dataset
DEFAULT_FILENAMES = {
    "image": "image.emb",
    "caption": "caption.emb",
    "clip_img": "clip_img.emb",
    "clip_txt": "clip_txt.emb",
    "labels": "labels.lbl",
    "corrupted": "corrupted.msk",
}


# ---------------------------------------------------------------------------
# binary files


def write_embedding_file(path: Path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
    if m.ndim != 2:
        raise DatasetError(f"embedding matrix must be 2-D, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DatasetError("refusing to write non-finite embedding values")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(m.astype("<f4").tobytes(order="C"))


def read_embedding_file(path: Path) -> np.ndarray:
    raw = _read_bytes(path)
    _check_magic(raw, EMB_MAGIC, path)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need 16)")
    rows, cols = struct.unpack_from("<II", raw, 8)
    expected = 16 + rows * cols * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload size mismatch (header says {rows}x{cols}, "
            f"expected {expected} bytes, file has {len(raw)})")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=16)
    m = data.astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise FormatError(f"{path}: payload contains non-finite values")
    return m


def write_labels_file(path: Path, labels: np.ndarray) -> None:
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1:
        raise DatasetError("labels must be 1-D")
    if lab.size and (lab.min() < 0 or lab.max() >= 2**32):
        raise DatasetError("labels out of u32 range")
    with open(path, "wb") as fh:
        fh.write(LBL_MAGIC)
        fh.write(struct.pack("<I", lab.size))
        fh.write(lab.astype("<u4").tobytes())


def read_labels_file(path: Path) -> np.ndarray:
    raw = _read_bytes(path)
    _check_magic(raw, LBL_MAGIC, path)
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need 12)")
    (n,) = struct.unpack_from("<I", raw, 8)
    if len(raw) != 12 + 4 * n:
        raise FormatError(
            f"{path}: payload size mismatch (header says n={n}, "
            f"expected {12 + 4 * n} bytes, file has {len(raw)})")
    return np.frombuffer(raw, dtype="<u4", count=n, offset=12).astype(np.int64)


def write_mask_file(path: Path, mask: np.ndarray) -> None:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 1:
        raise DatasetError("mask must be 1-D")
    with open(path, "wb") as fh:
        fh.write(MSK_MAGIC)
        fh.write(struct.pack("<I", m.size))
        fh.write(m.astype(np.uint8).tobytes())


def read_mask_file(path: Path) -> np.ndarray:
    raw = _read_bytes(path)
    _check_magic(raw, MSK_MAGIC, path)
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes, need 12)")
    (n,) = struct.unpack_from("<I", raw, 8)
    if len(raw) != 12 + n:
        raise FormatError(
            f"{path}: payload size mismatch (header says n={n}, "
            f"expected {12 + n} bytes, file has {len(raw)})")
    payload = np.frombuffer(raw, dtype=np.uint8, count=n, offset=12)
    if payload.size and payload.max() > 1:
        raise FormatError(f"{path}: mask bytes must be 0 or 1")
    return payload.astype(bool)


def _read_bytes(path: Path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"{path}: missing file")
    return path.read_bytes()


def _check_magic(raw: bytes, magic: bytes, path: Path) -> None:
    if raw[:8] != magic:
        raise FormatError(
            f"{path}: bad magic {raw[:8]!r}, expected {magic.decode()!r}")


# ---------------------------------------------------------------------------
# dataset model


@dataclass
class EmbeddingDataset:
    """Aligned per-sample embeddings for one domain.

    `labels` are required for source data; for target data they are held-out
    ground truth that only evaluation code may read. `corrupted_mask` marks
    caption-corrupted samples in synthetic data.
    """

    domain: str
    image_emb: np.ndarray
    caption_emb: np.ndarray
    clip_img: np.ndarray
    clip_txt: np.ndarray
    num_classes: int
    labels: np.ndarray | None = None
    corrupted_mask: np.ndarray | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.image_emb.shape[0]

    def validate(self) -> None:
        if self.domain not in ("source", "target"):
            raise DatasetError(f"domain must be source|target, got {self.domain!r}")
        mats = {"image_emb": self.image_emb, "caption_emb": self.caption_emb,
                "clip_img": self.clip_img, "clip_txt": self.clip_txt}
        for name, m in mats.items():
            if not isinstance(m, np.ndarray) or m.ndim != 2:
                raise DatasetError(f"{name} must be a 2-D array")
            if not np.all(np.isfinite(m)):
                raise DatasetError(f"{name} contains non-finite values")
        n = self.image_emb.shape[0]
        for name, m in mats.items():
            if m.shape[0] != n:
                raise DatasetError(
                    f"row count mismatch: {name} has {m.shape[0]} rows, image_emb has {n}")
        if self.clip_img.shape[1] != self.clip_txt.shape[1]:
            raise DatasetError("clip_img and clip_txt dimensions differ")
        if self.num_classes < 1:
            raise DatasetError("num_classes must be >= 1")
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim != 1 or lab.shape[0] != n:
                raise DatasetError("labels must be 1-D with one entry per sample")
            if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
                raise DatasetError("labels out of range [0, num_classes)")
        if self.domain == "source" and self.labels is None:
            raise DatasetError("source datasets must carry labels")
        if self.corrupted_mask is not None:
            msk = np.asarray(self.corrupted_mask)
            if msk.ndim != 1 or msk.shape[0] != n or msk.dtype != bool:
                raise DatasetError("corrupted_mask must be 1-D bool, one per sample")


def save_dataset(dataset: EmbeddingDataset, directory: Path) -> None:
    """Write the directory layout; validates first so nothing half-written."""
    dataset.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    files = {k: DEFAULT_FILENAMES[k]
             for k in ("image", "caption", "clip_img", "clip_txt")}
    if dataset.labels is not None:
        files["labels"] = DEFAULT_FILENAMES["labels"]
    if dataset.corrupted_mask is not None:
        files["corrupted"] = DEFAULT_FILENAMES["corrupted"]

    write_embedding_file(directory / files["image"], dataset.image_emb)
    write_embedding_file(directory / files["caption"], dataset.caption_emb)
    write_embedding_file(directory / files["clip_img"], dataset.clip_img)
    write_embedding_file(directory / files["clip_txt"], dataset.clip_txt)
    if dataset.labels is not None:
        write_labels_file(directory / files["labels"], dataset.labels)
    if dataset.corrupted_mask is not None:
        write_mask_file(directory / files["corrupted"], dataset.corrupted_mask)

    manifest = {
        "format_version": FORMAT_VERSION,
        "domain": dataset.domain,
        "n": int(dataset.n),
        "c": int(dataset.num_classes),
        "dims": {
            "image": int(dataset.image_emb.shape[1]),
            "caption": int(dataset.caption_emb.shape[1]),
            "clip": int(dataset.clip_img.shape[1]),
        },
        "files": files,
    }
    if dataset.seed is not None:
        manifest["seed"] = int(dataset.seed)
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_dataset(directory: Path) -> EmbeddingDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"{manifest_path}: missing manifest")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc

    for key in ("format_version", "domain", "n", "c", "dims", "files"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    if manifest["format_version"] != FORMAT_VERSION:
        raise FormatError(
            f"{manifest_path}: unsupported format_version {manifest['format_version']!r}")
    dims, files = manifest["dims"], manifest["files"]
    for key in ("image", "caption", "clip"):
        if key not in dims:
            raise FormatError(f"{manifest_path}: dims missing {key!r}")
    n, c = int(manifest["n"]), int(manifest["c"])

    def load_emb(kind: str, expected_cols: int) -> np.ndarray:
        if kind not in files:
            raise FormatError(f"{manifest_path}: files missing {kind!r}")
        m = read_embedding_file(directory / files[kind])
        if m.shape != (n, expected_cols):
            raise FormatError(
                f"{directory / files[kind]}: manifest declares {n}x{expected_cols}, "
                f"binary header says {m.shape[0]}x{m.shape[1]}")
        return m

    image = load_emb("image", int(dims["image"]))
    caption = load_emb("caption", int(dims["caption"]))
    clip_img = load_emb("clip_img", int(dims["clip"]))
    clip_txt = load_emb("clip_txt", int(dims["clip"]))

    labels = None
    if "labels" in files:
        labels = read_labels_file(directory / files["labels"])
        if labels.shape[0] != n:
            raise FormatError(
                f"{directory / files['labels']}: manifest declares n={n}, "
                f"file has {labels.shape[0]} entries")
    mask = None
    if "corrupted" in files:
        mask = read_mask_file(directory / files["corrupted"])
        if mask.shape[0] != n:
            raise FormatError(
                f"{directory / files['corrupted']}: manifest declares n={n}, "
                f"file has {mask.shape[0]} entries")

    ds = EmbeddingDataset(
        domain=str(manifest["domain"]), image_emb=image, caption_emb=caption,
        clip_img=clip_img, clip_txt=clip_txt, num_classes=c, labels=labels,
        corrupted_mask=mask, seed=manifest.get("seed"))
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SynthConfig:
    """Two-domain generative model, fully determined by `seed`."""

    n_classes: int = 10
    n_per_class: int = 50
    d_img: int = 32
    d_txt: int = 24
    d_clip: int = 16
    shift_angle: float = 1.0     # Givens rotation angle applied to target images
    shift_offset: float = 2.0    # norm of the target translation
    noise_img: float = 0.9
    noise_txt: float = 0.1
    noise_clip: float = 0.15
    rho: float = 0.3             # target caption-corruption probability
    seed: int = 0

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.n_per_class < 1:
            raise ConfigError("n_per_class must be >= 1")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError("rho must be in [0, 1]")
        for name in ("d_img", "d_txt", "d_clip"):
            if getattr(self, name) < self.n_classes:
                raise ConfigError(f"{name} must be >= n_classes")
        for name in ("noise_img", "noise_txt", "noise_clip"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


def _rotation_matrix(dim: int, angle: float) -> np.ndarray:
    """Givens rotations on disjoint leading coordinate pairs (at most 8)."""
    rot = np.eye(dim)
    c, s = np.cos(angle), np.sin(angle)
    for k in range(min(8, dim // 2)):
        i, j = 2 * k, 2 * k + 1
        block = np.eye(dim)
        block[i, i] = c
        block[i, j] = -s
        block[j, i] = s
        block[j, j] = c
        rot = block @ rot
    return rot


def gen_synthetic(config: SynthConfig) -> tuple[EmbeddingDataset, EmbeddingDataset]:
    """Seeded source/target pair with an image-space shift and caption noise.

    Class prototypes: Gaussian image/text prototypes and orthonormal joint
    (clip-space) prototypes. Target images are rotated and offset; target
    captions keep their class with probability 1-rho, otherwise a uniformly
    random wrong class. True class ids are stored for both domains; target
    labels exist for evaluation only.
    """
    config.validate()
    rng = spawn_rng(config.seed, "synth")
    C, npc = config.n_classes, config.n_per_class
    n = C * npc

    mu = rng.standard_normal((C, config.d_img))
    nu = rng.standard_normal((C, config.d_txt))
    # orthonormal rows via QR; sign-canonicalized so the draw is reproducible
    raw = rng.standard_normal((config.d_clip, C))
    q, r = np.linalg.qr(raw)
    omega = (q * np.sign(np.diag(r))).T

    rot = _rotation_matrix(config.d_img, config.shift_angle)
    offset_dir = rng.standard_normal(config.d_img)
    offset = config.shift_offset * offset_dir / np.linalg.norm(offset_dir)

    labels = np.repeat(np.arange(C, dtype=np.int64), npc)

    def emit(domain: str) -> EmbeddingDataset:
        if domain == "source":
            img_centers = mu[labels]
            cap_class = labels.copy()
        else:
            img_centers = (mu[labels] @ rot.T) + offset
            corrupt = rng.random(n) < config.rho
            wrong = (labels + rng.integers(1, C, size=n)) % C
            cap_class = np.where(corrupt, wrong, labels)
        image = img_centers + config.noise_img * rng.standard_normal((n, config.d_img))
        caption = nu[cap_class] + config.noise_txt * rng.standard_normal((n, config.d_txt))
        clip_i = omega[labels] + config.noise_clip * rng.standard_normal((n, config.d_clip))
        clip_t = omega[cap_class] + config.noise_clip * rng.standard_normal((n, config.d_clip))
        return EmbeddingDataset(
            domain=domain, image_emb=image, caption_emb=caption,
            clip_img=clip_i, clip_txt=clip_t, num_classes=C,
            labels=labels.copy(), corrupted_mask=(cap_class != labels),
            seed=config.seed)

    source = emit("source")
    target = emit("target")
    source.validate()
    target.validate()
    return source, target


# ---------------------------------------------------------------------------
# augmentations and batching


@dataclass
class AugmentationConfig:
    sigma_weak: float = 0.01
    sigma_strong: float = 0.1
    dropout_strong: float = 0.2

    def validate(self) -> None:
        if self.sigma_weak < 0 or self.sigma_strong < 0:
            raise ConfigError("augmentation sigmas must be >= 0")
        if not (0.0 <= self.dropout_strong < 1.0):
            raise ConfigError("dropout_strong must be in [0, 1)")


def augment(x: np.ndarray, kind: str, config: AugmentationConfig, seed: int) -> np.ndarray:
    """Weak: additive Gaussian noise. Strong: coordinate dropout with
    1/(1-p) rescale, then heavier Gaussian noise. Deterministic given seed."""
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DatasetError("augment: input contains non-finite values")
    rng = spawn_rng(seed, "augment", kind)
    if kind == "weak":
        return x + config.sigma_weak * rng.standard_normal(x.shape)
    if kind == "strong":
        p = config.dropout_strong
        keep = rng.random(x.shape) >= p
        out = x * keep / (1.0 - p)
        return out + config.sigma_strong * rng.standard_normal(x.shape)
    raise ConfigError(f"unknown augmentation kind {kind!r}")


def batch_iter(dataset: EmbeddingDataset, batch_size: int, seed: int,
               epoch: int) -> list[np.ndarray]:
    """Seeded per-epoch shuffle into fixed-size index batches; the final
    short batch is dropped so batch-dependent losses keep their scale."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2 (contrastive losses need a negative)")
    if batch_size > dataset.n:
        raise ConfigError(f"batch_size {batch_size} exceeds dataset size {dataset.n}")
    perm = spawn_rng(seed, "batches", epoch).permutation(dataset.n)
    n_full = dataset.n // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(n_full)]
