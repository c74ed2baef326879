"""Class-agnostic regions via graph-based grouping on the RGB grid.

An 8-connected grid graph is built over the (smoothed) image; edges are
sorted by weight and merged with the adaptive threshold
Int(C) + k/|C|; a final pass absorbs components below the minimum size
into their most-similar neighbor. Edge weights are Euclidean RGB
distances on the 8-bit (0-255) value scale, the units the reference
implementation and the shipped presets' k values assume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import kernels


@dataclass
class FelzParams:
    k: float          # scale of observation
    sigma: float      # Gaussian pre-smoothing std, in pixels
    min_size: int     # enforced minimum region size, in pixels

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.min_size < 1:
            raise ValueError(f"min_size must be >= 1, got {self.min_size}")


# per-dataset (min_size, sigma, k) defaults
PRESETS = {
    "voc": FelzParams(k=20.0, sigma=0.7, min_size=100),
    "context": FelzParams(k=20.0, sigma=1.0, min_size=100),
    "stuff": FelzParams(k=100.0, sigma=1.0, min_size=100),
    "cityscapes": FelzParams(k=20.0, sigma=0.5, min_size=50),
    "ade": FelzParams(k=20.0, sigma=1.0, min_size=100),
}


def preset(name: str) -> FelzParams:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class RegionPartition:
    labels: np.ndarray        # H x W int32, ids dense in [0, R)
    region_count: int
    sizes: np.ndarray         # int64 [R], pixels per region

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(4.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _smooth_float(img: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0.0:
        return img.copy()
    kern = _gaussian_kernel(sigma)
    if kern.size == 1:
        return img.copy()
    radius = kern.size // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(img, dtype=np.float64)
        sl = [slice(None)] * out.ndim
        for t, kv in enumerate(kern):
            sl[axis] = slice(t, t + img.shape[axis])
            acc += kv * padded[tuple(sl)]
        out = acc
    return out


def gaussian_smooth(image: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel; sigma=0 is the identity.

    Kernel radius is ceil(4*sigma); borders reflect. Output keeps the
    caller's value scale, as float64.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    img = np.asarray(image, dtype=np.float64)
    return _smooth_float(img, sigma)


def _grid_edges(h: int, w: int, smooth: np.ndarray):
    """8-connected edges with Euclidean RGB weights, a < b always."""
    idx = np.arange(h * w, dtype=np.int32).reshape(h, w)
    families = [
        (idx[:, :-1], idx[:, 1:]),        # right
        (idx[:-1, :], idx[1:, :]),        # down
        (idx[:-1, :-1], idx[1:, 1:]),     # down-right
        (idx[:-1, 1:], idx[1:, :-1]),     # down-left
    ]
    ea = np.concatenate([a.ravel() for a, _ in families])
    eb = np.concatenate([b.ravel() for _, b in families])
    flat = smooth.reshape(-1, smooth.shape[-1])
    diff = flat[ea] - flat[eb]
    ew = np.sqrt((diff * diff).sum(axis=1))
    return ea, eb, ew


def felzenszwalb(image: np.ndarray, params: FelzParams) -> RegionPartition:
    """Segment an 8-bit RGB image into regions of at least min_size pixels.

    Deterministic: edge ties break on (weight, smaller index, larger
    index) and labels are assigned in row-major first-occurrence order.
    """
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 RGB, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("image must be at least 1x1")

    smooth = _smooth_float(img.astype(np.float64), params.sigma)
    n = h * w
    if n == 1:
        return RegionPartition(labels=np.zeros((1, 1), dtype=np.int32),
                               region_count=1,
                               sizes=np.ones(1, dtype=np.int64))

    ea, eb, ew = _grid_edges(h, w, smooth)
    order = np.lexsort((eb, ea, ew))
    ea, eb, ew = ea[order], eb[order], ew[order]

    parent = np.arange(n, dtype=np.int32)
    rank = np.zeros(n, dtype=np.int32)
    size = np.ones(n, dtype=np.int32)
    thresh = np.full(n, params.k, dtype=np.float64)
    kernels.felz_merge(ea, eb, ew, parent, rank, size, thresh, params.k)
    kernels.felz_absorb_small(ea, eb, parent, rank, size, params.min_size)

    roots = np.empty(n, dtype=np.int32)
    kernels.uf_roots(parent, roots)
    uniq, first, inverse = np.unique(roots, return_index=True,
                                     return_inverse=True)
    remap = np.empty(len(uniq), dtype=np.int32)
    remap[np.argsort(first, kind="stable")] = np.arange(len(uniq),
                                                        dtype=np.int32)
    labels = remap[inverse].reshape(h, w)
    sizes = np.bincount(labels.ravel(), minlength=len(uniq)).astype(np.int64)
    return RegionPartition(labels=labels, region_count=len(uniq), sizes=sizes)


def region_masks(partition: RegionPartition) -> Iterator[np.ndarray]:
    """Yield one boolean mask per region; mutually exclusive, exhaustive."""
    for r in range(partition.region_count):
        yield partition.labels == r
