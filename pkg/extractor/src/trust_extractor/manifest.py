"""Manifest parsing: CSV or JSONL rows of {image, caption, label?, domain}."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError

REQUIRED = ("image", "caption", "domain")


@dataclass
class SampleManifest:
    images: list[Path]     # resolved, existing paths
    captions: list[str]
    labels: list[int] | None
    domain: str

    @property
    def n(self) -> int:
        return len(self.images)


def _rows_from_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ManifestError(f"{path}: empty manifest")
        missing = [c for c in REQUIRED if c not in reader.fieldnames]
        if missing:
            raise ManifestError(f"{path}: missing columns {missing}")
        return list(reader)


def _rows_from_jsonl(path: Path) -> list[dict]:
    rows = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{lineno}: invalid JSON ({e.msg})")
        if not isinstance(row, dict):
            raise ManifestError(f"{path}:{lineno}: row must be an object")
        rows.append(row)
    return rows


def load_manifest(path: str | Path) -> SampleManifest:
    """Parse and validate a manifest; all rows must share one domain, and
    labels must be present on every row or on none."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"{path}: no such manifest")
    if path.suffix.lower() == ".csv":
        rows = _rows_from_csv(path)
    elif path.suffix.lower() in (".jsonl", ".ndjson"):
        rows = _rows_from_jsonl(path)
    else:
        raise ManifestError(f"{path}: expected a .csv or .jsonl manifest")
    if not rows:
        raise ManifestError(f"{path}: manifest has no rows")

    images: list[Path] = []
    captions: list[str] = []
    labels: list[int] = []
    labeled = 0
    domains = set()
    for i, row in enumerate(rows, 1):
        for col in REQUIRED:
            if col not in row or row[col] in (None, ""):
                raise ManifestError(f"{path}: row {i}: missing {col!r}")
        img = Path(row["image"])
        if not img.is_absolute():
            img = path.parent / img
        if not img.is_file():
            raise ManifestError(f"{path}: row {i}: image not found: {img}")
        caption = str(row["caption"]).strip()
        if not caption:
            raise ManifestError(f"{path}: row {i}: empty caption")
        domain = str(row["domain"])
        if domain not in ("source", "target"):
            raise ManifestError(f"{path}: row {i}: domain must be source|target")
        domains.add(domain)
        label = row.get("label")
        if label not in (None, ""):
            try:
                value = int(label)
            except (TypeError, ValueError):
                raise ManifestError(f"{path}: row {i}: label must be an integer")
            if value < 0:
                raise ManifestError(f"{path}: row {i}: label must be >= 0")
            labels.append(value)
            labeled += 1
        images.append(img)
        captions.append(caption)

    if len(domains) != 1:
        raise ManifestError(f"{path}: rows mix domains {sorted(domains)}; "
                            "one manifest describes one dataset")
    if labeled not in (0, len(rows)):
        raise ManifestError(f"{path}: {labeled}/{len(rows)} rows carry labels; "
                            "label every row or none")
    return SampleManifest(images=images, captions=captions,
                          labels=labels if labeled else None,
                          domain=domains.pop())
