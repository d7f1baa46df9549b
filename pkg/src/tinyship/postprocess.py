"""Probability-map binarization and eight-connected region extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TargetRegion:
    """One eight-connected foreground component."""

    pixels: tuple  # ((row, col), ...) sorted row-major
    area: int
    centroid: tuple  # (row, col), unweighted mean of member coordinates
    bbox: tuple  # (r0, c0, r1, c1) inclusive

    def to_json_dict(self) -> dict:
        return {"area": self.area,
                "centroid": [self.centroid[0], self.centroid[1]],
                "bbox": list(self.bbox)}


def threshold(prob: np.ndarray, tau: float) -> np.ndarray:
    """Foreground iff p > tau (strict)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    return np.asarray(prob) > tau


def adaptive_threshold(prob: np.ndarray) -> float:
    """max(0.7 max(P), 0.5 sigma(P) + mean(P)); population std deviation."""
    p = np.asarray(prob, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty probability map")
    return float(max(0.7 * p.max(), 0.5 * p.std() + p.mean()))


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        root = a
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[a] != root:  # path compression
            self.parent[a], a = root, self.parent[a]
        return root

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def cluster8(mask: np.ndarray) -> list[TargetRegion]:
    """Partition foreground pixels into maximal eight-connected components.

    Two-pass labeling with union-find. Regions come back sorted by their
    top-left-most pixel; each pixel list is sorted row-major.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    labels = np.full((h, w), -1, dtype=np.int64)
    uf = _UnionFind(int(mask.sum()))
    next_label = 0
    # First pass: scan row-major, merge with the four already-seen neighbors.
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            neigh = []
            if c > 0 and mask[r, c - 1]:
                neigh.append(labels[r, c - 1])
            if r > 0:
                for dc in (-1, 0, 1):
                    cc = c + dc
                    if 0 <= cc < w and mask[r - 1, cc]:
                        neigh.append(labels[r - 1, cc])
            if neigh:
                lab = min(neigh)
                for other in neigh:
                    uf.union(lab, other)
            else:
                lab = next_label
                next_label += 1
            labels[r, c] = lab

    # Second pass: resolve roots and bucket pixels.
    buckets: dict[int, list[tuple[int, int]]] = {}
    rows, cols = np.nonzero(mask)
    for r, c in zip(rows.tolist(), cols.tolist()):
        root = uf.find(labels[r, c])
        buckets.setdefault(root, []).append((r, c))

    regions = []
    for pix in buckets.values():
        pix.sort()
        arr = np.array(pix, dtype=np.float64)
        r0, c0 = int(arr[:, 0].min()), int(arr[:, 1].min())
        r1, c1 = int(arr[:, 0].max()), int(arr[:, 1].max())
        regions.append(TargetRegion(
            pixels=tuple(pix),
            area=len(pix),
            centroid=(float(arr[:, 0].mean()), float(arr[:, 1].mean())),
            bbox=(r0, c0, r1, c1)))
    regions.sort(key=lambda reg: reg.pixels[0])
    return regions


def regions_to_mask(regions: list[TargetRegion], shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for reg in regions:
        for r, c in reg.pixels:
            out[r, c] = True
    return out
