"""Collapse cross-attention stacks into per-noun attribution maps and
binarize them into weak localization masks.

The collapse averages every (timestep, layer, head) map after bilinear
upsampling to the generated-image size; multi-token nouns average their
token maps first. Binarization rescales the map affinely onto [-1, 1],
applies the logistic sigmoid, and thresholds at gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMapError
from .tensorio import AttentionStack

DEFAULT_GAMMA = 0.45


@dataclass
class AttributionMap:
    values: np.ndarray  # H x W float64

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class LocalizationMask:
    values: np.ndarray  # H x W uint8 in {0, 1}

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _axis_coords(n_src: int, n_dst: int):
    """Sample positions for align-corners=false bilinear resampling."""
    src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    np.clip(src, 0.0, n_src - 1.0, out=src)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_src - 1)
    frac = src - i0
    return i0, i1, frac


def bilinear_upsample(grid: np.ndarray, target_h: int, target_w: int) -> np.ndarray:
    """Resample a 2-D grid to (target_h, target_w).

    Uses the align-corners=false convention with edge clamping. Written
    as v0 + frac*(v1 - v0) so constant inputs pass through bit-exactly.
    Works for downscaling too (pure sampling, no antialiasing).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got {grid.ndim}-D")
    if grid.shape[0] < 1 or grid.shape[1] < 1:
        raise ValueError("source grid must be at least 1x1")
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target dims must be >= 1, got {target_h}x{target_w}")
    r0, r1, fr = _axis_coords(grid.shape[0], target_h)
    c0, c1, fc = _axis_coords(grid.shape[1], target_w)
    rows = grid[r0] + fr[:, None] * (grid[r1] - grid[r0])
    out = rows[:, c0] + fc[None, :] * (rows[:, c1] - rows[:, c0])
    return out


def aggregate_attention(stack: AttentionStack, noun_tokens: list[int],
                        out_h: int, out_w: int) -> AttributionMap:
    """Mean of upsampled maps over all (t, l, h) triples.

    For each triple the maps of the noun's tokens are averaged before
    upsampling (averaging and upsampling commute, both linear). Triples
    are visited in sorted order, so the result is exactly independent of
    entry order in the stack.
    """
    if not noun_tokens:
        raise ValueError("noun has no token indices")
    bad = [t for t in noun_tokens if t < 0 or t >= stack.n_tokens]
    if bad:
        raise ValueError(f"token indices {bad} outside [0, {stack.n_tokens})")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dims must be >= 1, got {out_h}x{out_w}")

    per_token = [stack.maps_for_token(t) for t in noun_tokens]
    triples = sorted(per_token[0].keys())
    acc = np.zeros((out_h, out_w), dtype=np.float64)
    for triple in triples:
        token_maps = [m[triple] for m in per_token]
        mean_map = token_maps[0]
        if len(token_maps) > 1:
            mean_map = np.mean(token_maps, axis=0)
        acc += bilinear_upsample(mean_map, out_h, out_w)
    acc /= len(triples)
    return AttributionMap(values=acc)


def binarize(attribution: AttributionMap | np.ndarray, gamma: float = DEFAULT_GAMMA
             ) -> LocalizationMask:
    """Threshold an attribution map into a {0, 1} mask.

    Min-max rescales onto [-1, 1], applies the logistic sigmoid, and
    keeps pixels where sigma(x) > gamma. A constant map has no min-max
    normalization and is rejected.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    values = np.asarray(getattr(attribution, "values", attribution),
                        dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        raise DegenerateMapError(
            f"attribution map is constant ({lo}); cannot normalize")
    rescaled = -1.0 + 2.0 * (values - lo) / (hi - lo)
    sig = 1.0 / (1.0 + np.exp(-rescaled))
    return LocalizationMask(values=(sig > gamma).astype(np.uint8))
