"""Manifest -> embedding dataset directory, bit-exact in the binary format.

The writer lives here rather than reusing any engine code: the directory
layout is the public contract between the two packages, so this side writes
the raw bytes itself and the interop tests prove both ends agree.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoders
from .errors import ExtractError, ManifestError
from .manifest import SampleManifest, load_manifest

EMB_MAGIC = b"TRSTEMB1"
LBL_MAGIC = b"TRSTLBL1"

FILES = {
    "image": "image.emb",
    "caption": "caption.emb",
    "clip_img": "clip_img.emb",
    "clip_txt": "clip_txt.emb",
    "labels": "labels.lbl",
}


@dataclass
class ExtractConfig:
    image_encoder: str
    text_encoder: str
    joint_encoder: str
    classes: int | None = None    # required when the manifest carries no labels
    batch_size: int = 32
    device: str = "cpu"

    def validate(self) -> None:
        encoders.encoder_dim(self.image_encoder, "pix")
        encoders.encoder_dim(self.text_encoder, "tok")
        encoders.encoder_dim(self.joint_encoder, "cliptoy")
        if self.batch_size < 1:
            raise ExtractError("batch_size must be >= 1")
        if self.device != "cpu":
            raise ExtractError(f"device {self.device!r} unavailable; only cpu")
        if self.classes is not None and self.classes < 1:
            raise ExtractError("classes must be >= 1")


def _write_embedding(path: Path, matrix: np.ndarray) -> None:
    rows, cols = matrix.shape
    payload = np.ascontiguousarray(matrix, dtype="<f4").tobytes()
    path.write_bytes(EMB_MAGIC + struct.pack("<II", rows, cols) + payload)


def _write_labels(path: Path, labels: list[int]) -> None:
    payload = np.asarray(labels, dtype="<u4").tobytes()
    path.write_bytes(LBL_MAGIC + struct.pack("<I", len(labels)) + payload)


def _batched(items: list, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def _num_classes(manifest: SampleManifest, config: ExtractConfig) -> int:
    if manifest.labels is not None:
        needed = max(manifest.labels) + 1
        if config.classes is None:
            return needed
        if config.classes < needed:
            raise ManifestError(f"classes={config.classes} but labels reach "
                                f"{needed - 1}")
        return config.classes
    if config.classes is None:
        raise ManifestError("unlabeled manifest needs an explicit class count")
    return config.classes


def extract(manifest_path: str | Path, config: ExtractConfig,
            out_dir: str | Path) -> Path:
    """Encode every manifest row in order and write the dataset directory.

    Batch size only groups pure per-row computations, so outputs are
    independent of it (and of the device flag).
    """
    config.validate()
    manifest = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    image_rows, cap_rows, ji_rows, jt_rows = [], [], [], []
    for batch_idx in _batched(list(range(manifest.n)), config.batch_size):
        pixels = [encoders.load_rgb(manifest.images[i]) for i in batch_idx]
        caps = [manifest.captions[i] for i in batch_idx]
        image_rows.append(encoders.image_features(pixels, config.image_encoder))
        cap_rows.append(encoders.text_features(caps, config.text_encoder))
        ji_rows.append(encoders.joint_image_features(pixels, config.joint_encoder))
        jt_rows.append(encoders.joint_text_features(caps, config.joint_encoder))

    image_emb = np.concatenate(image_rows)
    caption_emb = np.concatenate(cap_rows)
    clip_img = np.concatenate(ji_rows)
    clip_txt = np.concatenate(jt_rows)

    _write_embedding(out_dir / FILES["image"], image_emb)
    _write_embedding(out_dir / FILES["caption"], caption_emb)
    _write_embedding(out_dir / FILES["clip_img"], clip_img)
    _write_embedding(out_dir / FILES["clip_txt"], clip_txt)
    files = {k: FILES[k] for k in ("image", "caption", "clip_img", "clip_txt")}
    if manifest.labels is not None:
        _write_labels(out_dir / FILES["labels"], manifest.labels)
        files["labels"] = FILES["labels"]

    doc = {
        "format_version": 1,
        "domain": manifest.domain,
        "n": manifest.n,
        "c": _num_classes(manifest, config),
        "dims": {
            "image": image_emb.shape[1],
            "caption": caption_emb.shape[1],
            "clip": clip_img.shape[1],
        },
        "files": files,
        "encoders": {
            "image": config.image_encoder,
            "text": config.text_encoder,
            "joint": config.joint_encoder,
        },
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return out_dir
