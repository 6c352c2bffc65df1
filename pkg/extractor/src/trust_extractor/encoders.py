"""Frozen deterministic encoder families.

No downloads and no learned checkpoints: each family derives its weights
from a fixed hash of its id, so extraction is bit-reproducible anywhere.
Ids carry the output width, e.g. "pix-16", "tok-24", "cliptoy-12".

  pix-<D>     image features: 8x8 grayscale thumbnail projected to D dims
  tok-<D>     caption features: hashed bag of tokens over D-1 dims + length
  cliptoy-<D> joint image/text space: color statistics of the image and the
              color words of the caption mapped through one shared projection

All outputs are stored pre-normalization; consumers own normalization.
"""
from __future__ import annotations

import hashlib
import re
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EncoderError

_TOKEN = re.compile(r"[a-z0-9]+")

# anchor vocabulary for the joint space's text side
COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "gray": (0.5, 0.5, 0.5),
    "black": (0.0, 0.0, 0.0),
}

_JOINT_BASE_DIM = 13  # mean rgb (3) + std rgb (3) + 6-bin gray histogram + bias


def _parse_id(encoder_id: str, family: str) -> int:
    prefix = family + "-"
    if not encoder_id.startswith(prefix):
        raise EncoderError(f"unknown {family} encoder {encoder_id!r}; "
                           f"expected {prefix}<dim>")
    try:
        dim = int(encoder_id[len(prefix):])
    except ValueError:
        raise EncoderError(f"bad width in encoder id {encoder_id!r}")
    if dim < 4:
        raise EncoderError(f"{encoder_id!r}: width must be >= 4")
    return dim


def encoder_dim(encoder_id: str, family: str) -> int:
    return _parse_id(encoder_id, family)


def _frozen_matrix(key: str, rows: int, cols: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols)) / np.sqrt(cols)


def load_rgb(path: Path) -> np.ndarray:
    """Decode to an HxWx3 float array in [0,1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            return np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        raise EncoderError(f"unreadable image {path}: {e}")


def _gray(pixels: np.ndarray) -> np.ndarray:
    return pixels @ np.array([0.299, 0.587, 0.114])


def _thumb64(pixels: np.ndarray) -> np.ndarray:
    gray8 = Image.fromarray(np.uint8(np.clip(_gray(pixels), 0, 1) * 255))
    small = gray8.resize((8, 8), Image.Resampling.BILINEAR)
    return np.asarray(small, dtype=np.float64).reshape(-1) / 255.0


def image_features(pixels_batch: list[np.ndarray], encoder_id: str) -> np.ndarray:
    dim = _parse_id(encoder_id, "pix")
    proj = _frozen_matrix(encoder_id, dim, 65)
    base = np.stack([np.concatenate([_thumb64(p), [1.0]]) for p in pixels_batch])
    return base @ proj.T


def text_features(captions: list[str], encoder_id: str) -> np.ndarray:
    dim = _parse_id(encoder_id, "tok")
    out = np.zeros((len(captions), dim))
    for i, caption in enumerate(captions):
        tokens = _TOKEN.findall(caption.lower())
        for tok in tokens:
            digest = hashlib.sha256(tok.encode()).digest()
            slot = int.from_bytes(digest[:4], "little") % (dim - 1)
            sign = 1.0 if digest[4] % 2 == 0 else -1.0
            out[i, slot] += sign
        out[i, dim - 1] = np.log1p(len(tokens))  # never the zero vector
    return out


def _joint_base_image(pixels: np.ndarray) -> np.ndarray:
    flat = pixels.reshape(-1, 3)
    hist = np.histogram(_gray(pixels).reshape(-1), bins=6, range=(0.0, 1.0))[0]
    hist = hist / max(1, flat.shape[0])
    return np.concatenate([flat.mean(axis=0), flat.std(axis=0), hist, [1.0]])


def _joint_base_text(caption: str) -> np.ndarray:
    tokens = _TOKEN.findall(caption.lower())
    matched = [COLOR_RGB[t] for t in tokens if t in COLOR_RGB]
    rgb = np.mean(matched, axis=0) if matched else np.full(3, 0.5)
    lum = float(rgb @ np.array([0.299, 0.587, 0.114]))
    centers = (np.arange(6) + 0.5) / 6.0
    hist = np.exp(-0.5 * ((centers - lum) / 0.18) ** 2)
    hist = hist / hist.sum()
    return np.concatenate([rgb, np.full(3, 0.08), hist, [1.0]])


def joint_image_features(pixels_batch: list[np.ndarray], encoder_id: str) -> np.ndarray:
    dim = _parse_id(encoder_id, "cliptoy")
    proj = _frozen_matrix(encoder_id, dim, _JOINT_BASE_DIM)
    base = np.stack([_joint_base_image(p) for p in pixels_batch])
    return base @ proj.T


def joint_text_features(captions: list[str], encoder_id: str) -> np.ndarray:
    # same projection as the image side: one shared joint space
    dim = _parse_id(encoder_id, "cliptoy")
    proj = _frozen_matrix(encoder_id, dim, _JOINT_BASE_DIM)
    base = np.stack([_joint_base_text(c) for c in captions])
    return base @ proj.T
