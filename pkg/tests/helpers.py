"""Synthetic fixtures shared by several test modules."""

from __future__ import annotations

import json
import random
from pathlib import Path

import numpy as np
from PIL import Image

from finebench.scorer import ScoreKind, ScoreRequest

SQUARE = (10, 10, 30, 30)


def textured(rng: np.random.Generator, h: int = 64, w: int = 64) -> np.ndarray:
    """Random texture with every channel in [60, 200)."""
    return rng.integers(60, 200, size=(h, w, 3), dtype=np.uint8)


def square_pair(seed: int = 0, noise: float = 0.0, size: int = 64, box=SQUARE):
    """Source texture and a copy with a solid square recolored, plus optional salt noise."""
    rng = np.random.default_rng(seed)
    src = textured(rng, size, size)
    dst = src.copy()
    x1, y1, x2, y2 = box
    dst[y1:y2, x1:x2] = (250, 30, 30)
    if noise:
        flips = rng.random((size, size)) < noise
        dst[flips] = 255
    return src, dst


def save_png(path: Path, img: np.ndarray) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, "RGB").save(path)
    return str(path)


def write_manifest(path: Path, records) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path


def random_request(rng: random.Random, max_side: int = 6) -> ScoreRequest:
    kind = rng.choice(list(ScoreKind))
    imgs = []
    for _ in range(kind.n_images):
        h, w = rng.randint(1, max_side), rng.randint(1, max_side)
        imgs.append(np.frombuffer(rng.randbytes(h * w * 3), dtype=np.uint8).reshape(h, w, 3))
    text = "".join(rng.choice('abc xyzé中"\\\n') for _ in range(rng.randint(0, 12)))
    if kind is ScoreKind.CLIP_TEXT and not text:
        text = "caption"
    return ScoreRequest(kind, tuple(imgs), text, request_id=f"r{rng.getrandbits(48):012x}")


def synthetic_samples(tmp: Path, n: int, seed: int = 0, size: int = 32):
    """``n`` edit pairs with varied outcomes written as PNGs plus a manifest."""
    from finebench.refine import CATEGORIES

    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        kind = i % 5
        if kind == 4:
            src = np.full((size, size, 3), rng.integers(0, 256, 3), dtype=np.uint8)
        else:
            src = textured(rng, size, size)
        dst = src.copy()
        bw, bh = int(rng.integers(6, 16)), int(rng.integers(6, 16))
        bx, by = int(rng.integers(0, size - bw)), int(rng.integers(0, size - bh))
        box = [bx, by, bx + bw, by + bh]
        if kind == 1:
            ex, ey = (bx + size // 2) % (size - bw), (by + size // 2) % (size - bh)
            dst[ey:ey + bh, ex:ex + bw] = 255 - dst[ey:ey + bh, ex:ex + bw]
        elif kind == 2:
            pass
        else:
            dst[by:by + bh, bx:bx + bw] = rng.integers(0, 256, 3)
            dst[by:by + bh, bx:bx + bw, 0] ^= 0x80
        if kind == 3 and i % 2:
            box = [0, 0, size, size]
        rec = {
            "id": f"s{i:03d}",
            "src_path": save_png(tmp / f"src_{i:03d}.png", src),
            "dst_path": save_png(tmp / f"dst_{i:03d}.png", dst),
            "instruction": f"edit number {i}",
            "boxes": [box],
            "category": CATEGORIES[i % len(CATEGORIES)],
        }
        conf = 0.5 + 0.5 * float(rng.random())
        if i % 7:
            rec["detector_confidence"] = round(conf, 3)
        records.append(rec)
    return write_manifest(tmp / "manifest.jsonl", records)
