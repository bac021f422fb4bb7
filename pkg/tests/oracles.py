"""Naive reference implementations used as independent test oracles.

Everything here is written from the textbook definitions with plain loops or
exhaustive enumeration and shares no code with the package under test.
"""

from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np


def brute_force_rectangle(bits):
    """(x1, y1, x2, y2) of the largest all-ones rectangle, ties by (y1, x1, y2, x2)."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    best = None
    for y1 in range(h):
        for x1 in range(w):
            for y2 in range(y1 + 1, h + 1):
                for x2 in range(x1 + 1, w + 1):
                    if bits[y1:y2, x1:x2].all():
                        key = (-(y2 - y1) * (x2 - x1), y1, x1, y2, x2)
                        if best is None or key < best:
                            best = key
    if best is None:
        return None
    _, y1, x1, y2, x2 = best
    return (x1, y1, x2, y2)


class BatchRectangleOracle:
    """Vectorized exhaustive search for many same-shaped matrices at once.

    Rectangles are listed in lexicographic (y1, x1, y2, x2) order, so the
    first maximum of the area vector is the tie-break winner.
    """

    def __init__(self, h, w):
        rects = [
            (y1, x1, y2, x2)
            for y1 in range(h)
            for x1 in range(w)
            for y2 in range(y1 + 1, h + 1)
            for x2 in range(x1 + 1, w + 1)
        ]
        self.rects = np.array(rects)
        y1, x1, y2, x2 = self.rects.T
        self.area = (y2 - y1) * (x2 - x1)

    def __call__(self, batch):
        batch = np.asarray(batch, dtype=np.int64)
        n, h, w = batch.shape
        p = np.zeros((n, h + 1, w + 1), dtype=np.int64)
        p[:, 1:, 1:] = batch.cumsum(1).cumsum(2)
        y1, x1, y2, x2 = self.rects.T
        sums = p[:, y2, x2] - p[:, y1, x2] - p[:, y2, x1] + p[:, y1, x1]
        full = np.where(sums == self.area[None, :], self.area[None, :], 0)
        idx = full.argmax(axis=1)
        out = []
        for i in range(n):
            if full[i, idx[i]] == 0:
                out.append(None)
            else:
                a, b, c, d = self.rects[idx[i]]
                out.append((int(b), int(a), int(d), int(c)))
        return out


def flood_fill_components(bits):
    """4-connected components as lists of (y, x), via BFS in row-major seed order."""
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    seen = np.zeros_like(bits)
    comps = []
    for y in range(h):
        for x in range(w):
            if bits[y, x] and not seen[y, x]:
                comp = []
                q = deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    comp.append((cy, cx))
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                comps.append(comp)
    return comps


def flood_fill_largest_bbox(bits):
    comps = flood_fill_components(bits)
    if not comps:
        return None
    best = None
    for comp in comps:
        ys = [p[0] for p in comp]
        xs = [p[1] for p in comp]
        key = (-len(comp), min(ys), min(xs), max(ys) + 1, max(xs) + 1)
        if best is None or key < best:
            best = key
    _, y1, x1, y2, x2 = best
    return (x1, y1, x2, y2)


def naive_erode(bits, r):
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    out = np.zeros_like(bits)
    for y in range(h):
        for x in range(w):
            ok = True
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w) or not bits[ny, nx]:
                        ok = False
            out[y, x] = ok
    return out


def naive_dilate(bits, r):
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    out = np.zeros_like(bits)
    for y in range(h):
        for x in range(w):
            out[y, x] = any(
                bits[y + dy, x + dx]
                for dy in range(-r, r + 1)
                for dx in range(-r, r + 1)
                if 0 <= y + dy < h and 0 <= x + dx < w
            )
    return out


def naive_median(bits, r):
    bits = np.asarray(bits, dtype=bool)
    h, w = bits.shape
    out = np.zeros_like(bits)
    for y in range(h):
        for x in range(w):
            vals = [
                int(bits[y + dy, x + dx])
                for dy in range(-r, r + 1)
                for dx in range(-r, r + 1)
                if 0 <= y + dy < h and 0 <= x + dx < w
            ]
            out[y, x] = sum(vals) * 2 >= len(vals)
    return out


def naive_psnr(a, b, region=None):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h, w, _ = a.shape
    total, n = 0.0, 0
    for y in range(h):
        for x in range(w):
            if region is not None and not region[y][x]:
                continue
            for c in range(3):
                total += (a[y, x, c] - b[y, x, c]) ** 2
                n += 1
    if total == 0:
        return 99.0
    return 20 * math.log10(255 / math.sqrt(total / n))


def _window_ssim(xs, ys):
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    vx = sum((v - mx) ** 2 for v in xs) / n
    vy = sum((v - my) ** 2 for v in ys) / n
    cxy = sum((u - mx) * (v - my) for u, v in zip(xs, ys)) / n
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def naive_ssim(a, b, region=None, k=8):
    """Luma (R+G+B)/3, every k x k window fully inside the region, plain mean."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    h, w, _ = a.shape
    la = [[(a[y, x, 0] + a[y, x, 1] + a[y, x, 2]) / 3 for x in range(w)] for y in range(h)]
    lb = [[(b[y, x, 0] + b[y, x, 1] + b[y, x, 2]) / 3 for x in range(w)] for y in range(h)]

    def inside(y, x):
        return region is None or bool(region[y][x])

    scores = []
    for y0 in range(h - k + 1):
        for x0 in range(w - k + 1):
            cells = [(y, x) for y in range(y0, y0 + k) for x in range(x0, x0 + k)]
            if all(inside(y, x) for y, x in cells):
                scores.append(_window_ssim([la[y][x] for y, x in cells], [lb[y][x] for y, x in cells]))
    if not scores:
        cells = [(y, x) for y in range(h) for x in range(w) if inside(y, x)]
        return _window_ssim([la[y][x] for y, x in cells], [lb[y][x] for y, x in cells])
    return sum(scores) / len(scores)


def naive_entropy(img):
    img = np.asarray(img)
    h, w, _ = img.shape
    total = 0.0
    for c in range(3):
        counts = {}
        for v in img[:, :, c].ravel().tolist():
            counts[v] = counts.get(v, 0) + 1
        e = 0.0
        for n in counts.values():
            p = n / (h * w)
            e -= p * math.log2(p)
        total += e
    return total / 3


def pixel_set(box):
    x1, y1, x2, y2 = box
    return {(x, y) for x in range(x1, x2) for y in range(y1, y2)}


def pixel_iou(a, b):
    sa, sb = pixel_set(a), pixel_set(b)
    return len(sa & sb) / len(sa | sb)


def all_matrices(h, w):
    for bits in itertools.product((0, 1), repeat=h * w):
        yield np.array(bits, dtype=bool).reshape(h, w)
