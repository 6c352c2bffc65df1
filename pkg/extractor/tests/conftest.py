import csv
import json

import numpy as np
import pytest
from PIL import Image

from trust_extractor.encoders import COLOR_RGB

COLORS = ["red", "green", "blue", "yellow", "magenta", "cyan"]
CAPTION_STYLES = ["a photo of a {} object", "small {} item on a table",
                  "one {} shape, centered"]


def make_toy_rows(directory, n, domain, labeled, seed):
    """Colored-noise PNGs whose captions name the dominant color."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        c = int(rng.integers(len(COLORS)))
        rgb = np.asarray(COLOR_RGB[COLORS[c]])
        img = np.clip(rgb + rng.normal(0.0, 0.08, size=(16, 16, 3)), 0, 1)
        name = f"img_{domain}_{i:03d}.png"
        Image.fromarray(np.uint8(img * 255)).save(directory / name)
        caption = CAPTION_STYLES[int(rng.integers(len(CAPTION_STYLES)))].format(COLORS[c])
        row = {"image": name, "caption": caption, "domain": domain}
        if labeled:
            row["label"] = c
        rows.append(row)
    return rows


def write_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["image", "caption", "label", "domain"])
        writer.writeheader()
        writer.writerows(rows)


def write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


@pytest.fixture()
def toy_csv(tmp_path):
    rows = make_toy_rows(tmp_path, 20, "source", labeled=True, seed=0)
    path = tmp_path / "manifest.csv"
    write_csv(path, rows)
    return path


@pytest.fixture()
def toy_jsonl(tmp_path):
    rows = make_toy_rows(tmp_path, 15, "target", labeled=False, seed=1)
    path = tmp_path / "manifest.jsonl"
    write_jsonl(path, rows)
    return path
