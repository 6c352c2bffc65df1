"""Standalone byte-level checker for embedding dataset directories.

Deliberately re-implements every check from raw struct parsing rather than
reusing reader code, so the two implementations of the format cross-verify
each other. Violations carry the byte offset of the offending region.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMB_MAGIC = b"TRSTEMB1"
LBL_MAGIC = b"TRSTLBL1"
MSK_MAGIC = b"TRSTMSK1"

EMB_HEADER = 16   # magic + u32 rows + u32 cols
VEC_HEADER = 12   # magic + u32 n


@dataclass
class Violation:
    file: str
    offset: int
    message: str

    def to_dict(self) -> dict:
        return {"file": self.file, "offset": self.offset, "message": self.message}


@dataclass
class ValidationReport:
    directory: str
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, file: str, offset: int, message: str) -> None:
        self.violations.append(Violation(file, offset, message))

    def to_dict(self) -> dict:
        return {"directory": self.directory, "ok": self.ok,
                "violations": [v.to_dict() for v in self.violations]}


def _check_embedding(path: Path, rel: str, n: int, cols: int,
                     report: ValidationReport) -> None:
    raw = path.read_bytes()
    if raw[:8] != EMB_MAGIC:
        report.add(rel, 0, f"bad magic {raw[:8]!r}, expected {EMB_MAGIC!r}")
        return
    if len(raw) < EMB_HEADER:
        report.add(rel, 8, "file too short for rows/cols header")
        return
    rows, file_cols = struct.unpack_from("<II", raw, 8)
    if (rows, file_cols) != (n, cols):
        report.add(rel, 8, f"header says {rows}x{file_cols}, "
                           f"manifest declares {n}x{cols}")
        return
    expected = EMB_HEADER + 4 * n * cols
    if len(raw) != expected:
        report.add(rel, min(len(raw), expected),
                   f"payload is {len(raw) - EMB_HEADER} bytes, "
                   f"expected {expected - EMB_HEADER}")
        return
    values = np.frombuffer(raw, dtype="<f4", offset=EMB_HEADER)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        report.add(rel, EMB_HEADER + 4 * int(bad[0]),
                   f"non-finite value at element {int(bad[0])}")


def _check_labels(path: Path, rel: str, n: int, c: int,
                  report: ValidationReport) -> None:
    raw = path.read_bytes()
    if raw[:8] != LBL_MAGIC:
        report.add(rel, 0, f"bad magic {raw[:8]!r}, expected {LBL_MAGIC!r}")
        return
    if len(raw) < VEC_HEADER:
        report.add(rel, 8, "file too short for count header")
        return
    count = struct.unpack_from("<I", raw, 8)[0]
    if count != n:
        report.add(rel, 8, f"header says {count} labels, manifest declares {n}")
        return
    if len(raw) != VEC_HEADER + 4 * n:
        report.add(rel, min(len(raw), VEC_HEADER + 4 * n),
                   f"payload is {len(raw) - VEC_HEADER} bytes, expected {4 * n}")
        return
    labels = np.frombuffer(raw, dtype="<u4", offset=VEC_HEADER)
    bad = np.flatnonzero(labels >= c)
    if bad.size:
        report.add(rel, VEC_HEADER + 4 * int(bad[0]),
                   f"label {int(labels[bad[0]])} out of range [0, {c})")


def _check_mask(path: Path, rel: str, n: int, report: ValidationReport) -> None:
    raw = path.read_bytes()
    if raw[:8] != MSK_MAGIC:
        report.add(rel, 0, f"bad magic {raw[:8]!r}, expected {MSK_MAGIC!r}")
        return
    if len(raw) < VEC_HEADER:
        report.add(rel, 8, "file too short for count header")
        return
    count = struct.unpack_from("<I", raw, 8)[0]
    if count != n:
        report.add(rel, 8, f"header says {count} entries, manifest declares {n}")
        return
    if len(raw) != VEC_HEADER + n:
        report.add(rel, min(len(raw), VEC_HEADER + n),
                   f"payload is {len(raw) - VEC_HEADER} bytes, expected {n}")
        return
    flags = np.frombuffer(raw, dtype=np.uint8, offset=VEC_HEADER)
    bad = np.flatnonzero(flags > 1)
    if bad.size:
        report.add(rel, VEC_HEADER + int(bad[0]),
                   f"mask byte {int(flags[bad[0]])} is not 0/1")


def validate_directory(directory: str | Path) -> ValidationReport:
    directory = Path(directory)
    report = ValidationReport(directory=str(directory))
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        report.add("manifest.json", 0, "missing manifest")
        return report
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        report.add("manifest.json", e.pos, f"invalid JSON: {e.msg}")
        return report

    for key in ("format_version", "domain", "n", "c", "dims", "files"):
        if key not in manifest:
            report.add("manifest.json", 0, f"missing key {key!r}")
    if report.violations:
        return report
    if manifest["format_version"] != 1:
        report.add("manifest.json", 0,
                   f"unsupported format_version {manifest['format_version']!r}")
        return report
    if manifest["domain"] not in ("source", "target"):
        report.add("manifest.json", 0, f"bad domain {manifest['domain']!r}")
    n, c = int(manifest["n"]), int(manifest["c"])
    dims, files = manifest["dims"], manifest["files"]
    for key in ("image", "caption", "clip_img", "clip_txt"):
        if key not in files:
            report.add("manifest.json", 0, f"files missing {key!r}")
    if report.violations:
        return report

    plan = [("image", int(dims["image"])), ("caption", int(dims["caption"])),
            ("clip_img", int(dims["clip"])), ("clip_txt", int(dims["clip"]))]
    for kind, cols in plan:
        rel = files[kind]
        path = directory / rel
        if not path.is_file():
            report.add(rel, 0, "missing file")
            continue
        _check_embedding(path, rel, n, cols, report)
    if "labels" in files:
        rel = files["labels"]
        path = directory / rel
        if not path.is_file():
            report.add(rel, 0, "missing file")
        else:
            _check_labels(path, rel, n, c, report)
    if "corrupted" in files:
        rel = files["corrupted"]
        path = directory / rel
        if not path.is_file():
            report.add(rel, 0, "missing file")
        else:
            _check_mask(path, rel, n, report)
    return report
