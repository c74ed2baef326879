"""Test-time segmentation: retrieve category representatives, stitch
sliding-window features, pool per-superpixel embeddings, blend local and
global similarities, and assign labels.

Geometry conventions: the input image is resized so its shorter side is
448 (aspect kept, rounded); 448x448 windows slide with stride 224, the
last window clamped to the image edge. Each window's patch grid lands on
the full-image grid at its nearest cell offset (448/37 px per cell, so a
224 px stride is 18.5 cells; offsets round half-even); overlapping cells
average. Superpixels are computed once on the full resized image, and
the final label map goes back to the original resolution by
nearest-neighbor sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .attribution import _axis_coords, bilinear_upsample
from .errors import PipelineStageError, WindowPlanError
from .index import (
    DEFAULT_TOP_K,
    PrototypeIndex,
    query_exact,
    query_hnsw,
)
from .superpixel import FelzParams, RegionPartition, felzenszwalb, preset
from .tensorio import FeatureGrid

logger = logging.getLogger(__name__)

UNKNOWN_LABEL = 255
WINDOW_SIZE = 448
WINDOW_STRIDE = 224

AGGREGATIONS = ("mean_embedding", "mean_similarity", "max_similarity")


@dataclass
class CategorySet:
    names: list[str]
    text_embeds: np.ndarray              # S x d_t
    representatives: np.ndarray | None = None   # S x d_v (mean of retrieved)
    retrieved: list[np.ndarray] | None = None   # per category, K_i x d_v

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValueError("need at least one category")
        if self.text_embeds.shape[0] != len(self.names):
            raise ValueError("names and text_embeds disagree on S")
        norms = np.sqrt((self.text_embeds.astype(np.float64) ** 2).sum(axis=1))
        if (norms == 0).any():
            bad = self.names[int(np.nonzero(norms == 0)[0][0])]
            raise ValueError(f"category '{bad}' has a zero text embedding")


@dataclass
class SegmentConfig:
    beta: float = 0.8
    top_k: int = DEFAULT_TOP_K
    felz: FelzParams = field(default_factory=lambda: preset("ade"))
    felz_preset: str | None = "ade"
    window: int = WINDOW_SIZE
    stride: int = WINDOW_STRIDE
    unknown_threshold: float | None = None
    use_hnsw: bool = False
    ef_search: int | None = None
    aggregation: str = "mean_embedding"

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {self.beta}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(
                f"aggregation must be one of {AGGREGATIONS}, "
                f"got {self.aggregation!r}")
        if self.stride < 1 or self.window < 1:
            raise ValueError("window and stride must be >= 1")


@dataclass
class SegmentationMask:
    labels: np.ndarray   # H x W int32 in [0, S) plus UNKNOWN_LABEL
    provenance: dict


# ---------------------------------------------------------------------------
# representatives


def build_representatives(index: PrototypeIndex, categories: CategorySet,
                          k: int, use_hnsw: bool = False,
                          ef_search: int | None = None) -> CategorySet:
    """Query each category's mean-template embedding, average the K
    retrieved prototypes (the winning aggregation), keep the raw
    retrieved sets for the similarity-aggregation ablations."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    reps = np.zeros((len(categories.names), index.protos.shape[1]),
                    dtype=np.float64)
    retrieved = []
    for s, name in enumerate(categories.names):
        q = categories.text_embeds[s]
        if use_hnsw:
            res = query_hnsw(index, q, k, ef_search)
        else:
            res = query_exact(index, q, k)
        protos = index.protos[res.ids].astype(np.float64)
        retrieved.append(protos)
        reps[s] = protos.mean(axis=0)
    return replace(categories, representatives=reps, retrieved=retrieved)


# ---------------------------------------------------------------------------
# geometry


def resized_dims(h: int, w: int, short: int = WINDOW_SIZE) -> tuple[int, int]:
    """Target size with the shorter side pinned to ``short``."""
    if h <= 0 or w <= 0:
        raise ValueError("image dims must be positive")
    if h <= w:
        return short, max(short, round(w * short / h))
    return max(short, round(h * short / w)), short


def resize_image(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of an 8-bit RGB image (same sampler as the masks)."""
    img = np.asarray(image, dtype=np.float64)
    channels = [bilinear_upsample(img[:, :, c], out_h, out_w)
                for c in range(img.shape[2])]
    out = np.stack(channels, axis=2)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def plan_windows(h: int, w: int, window: int = WINDOW_SIZE,
                 stride: int = WINDOW_STRIDE) -> list[tuple[int, int]]:
    """(top, left) placements covering an h x w image, last one clamped."""
    if window > h or window > w:
        raise WindowPlanError(
            f"{window}px window does not fit a {h}x{w} image")

    def axis_positions(dim: int) -> list[int]:
        pos = list(range(0, dim - window + 1, stride))
        if pos[-1] != dim - window:
            pos.append(dim - window)
        return pos

    return [(t, l) for t in axis_positions(h) for l in axis_positions(w)]


def stitch_features(rects: list[tuple[int, int]], grids: list[FeatureGrid],
                    window: int = WINDOW_SIZE) -> FeatureGrid:
    """Overlap-average window grids onto the full-image patch grid."""
    if len(rects) != len(grids):
        raise WindowPlanError(
            f"{len(rects)} window rects but {len(grids)} grids")
    if not grids:
        raise WindowPlanError("no windows to stitch")
    g = grids[0].rows
    d = grids[0].dim
    for fg in grids:
        if fg.rows != g or fg.cols != g or fg.dim != d:
            raise WindowPlanError(
                f"window grids disagree on shape: {fg.values.shape} vs "
                f"({g}, {g}, {d})")
    offs = [(round(top * g / window), round(left * g / window))
            for top, left in rects]
    out_h = max(oy for oy, _ in offs) + g
    out_w = max(ox for _, ox in offs) + g
    acc = np.zeros((out_h, out_w, d), dtype=np.float64)
    cover = np.zeros((out_h, out_w), dtype=np.float64)
    for (oy, ox), fg in zip(offs, grids):
        acc[oy:oy + g, ox:ox + g] += fg.values
        cover[oy:oy + g, ox:ox + g] += 1.0
    if (cover == 0).any():
        raise WindowPlanError("window plan leaves uncovered patch cells")
    return FeatureGrid((acc / cover[:, :, None]).astype(np.float32))


# ---------------------------------------------------------------------------
# similarities


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.sqrt((mat * mat).sum(axis=1))
    return mat / np.maximum(norms, 1e-300)[:, None]


def pool_regions(stitched: FeatureGrid, partition: RegionPartition
                 ) -> np.ndarray:
    """Per-region pooled embeddings on the patch grid, R x d float64.

    Exactly refactors resize_mask + pool_region per region: bilinearly
    sampling each region's indicator mask at a patch cell spreads the
    cell's four corner weights over the corner pixels' labels, so one
    pass over cells accumulates every region's weighted feature sum.
    Regions whose weights vanish fall back to the feature at the patch
    cell nearest their centroid.
    """
    hr, wr = partition.shape
    gh, gw, d = stitched.values.shape
    n_regions = partition.region_count
    feats = stitched.values.astype(np.float64).reshape(-1, d)

    r0, r1, fr = _axis_coords(hr, gh)
    c0, c1, fc = _axis_coords(wr, gw)
    labs = partition.labels

    lab_parts = []
    wt_parts = []
    for rows, rw in ((r0, 1.0 - fr), (r1, fr)):
        for cols, cw in ((c0, 1.0 - fc), (c1, fc)):
            lab_parts.append(labs[rows[:, None], cols[None, :]].ravel())
            wt_parts.append(np.outer(rw, cw).ravel())
    lab_all = np.concatenate(lab_parts)
    wt_all = np.concatenate(wt_parts)
    feat_all = np.concatenate([feats] * 4, axis=0)

    den = np.bincount(lab_all, weights=wt_all, minlength=n_regions)
    num = np.empty((n_regions, d), dtype=np.float64)
    for j in range(d):
        num[:, j] = np.bincount(lab_all, weights=wt_all * feat_all[:, j],
                                minlength=n_regions)

    pooled = np.zeros_like(num)
    ok = den > 0.0
    pooled[ok] = num[ok] / den[ok, None]
    if not ok.all():
        ys, xs = np.indices((hr, wr))
        counts = partition.sizes.astype(np.float64)
        cy = np.bincount(labs.ravel(), weights=ys.ravel(),
                         minlength=n_regions) / counts
        cx = np.bincount(labs.ravel(), weights=xs.ravel(),
                         minlength=n_regions) / counts
        py = np.clip(np.rint((cy + 0.5) * gh / hr - 0.5), 0, gh - 1).astype(int)
        px = np.clip(np.rint((cx + 0.5) * gw / wr - 0.5), 0, gw - 1).astype(int)
        for r in np.nonzero(~ok)[0]:
            logger.warning(
                "region %d vanished at patch resolution; using nearest "
                "patch-center feature", r)
            pooled[r] = stitched.values[py[r], px[r]]
    return pooled


def local_similarities(stitched: FeatureGrid, partition: RegionPartition,
                       categories: CategorySet,
                       aggregation: str = "mean_embedding") -> np.ndarray:
    """R x S cosine table between pooled region embeddings and categories."""
    if categories.representatives is None:
        raise ValueError("categories have no representatives; retrieve first")
    pooled = pool_regions(stitched, partition)
    pooled_unit = _unit_rows(pooled)
    if aggregation == "mean_embedding":
        reps_unit = _unit_rows(categories.representatives.astype(np.float64))
        return pooled_unit @ reps_unit.T
    if categories.retrieved is None:
        raise ValueError("similarity aggregation needs the retrieved sets")
    n_regions = pooled.shape[0]
    out = np.zeros((n_regions, len(categories.names)), dtype=np.float64)
    for s, protos in enumerate(categories.retrieved):
        protos_unit = _unit_rows(protos.astype(np.float64))
        sims = pooled_unit @ protos_unit.T  # R x K_s
        out[:, s] = sims.mean(axis=1) if aggregation == "mean_similarity" \
            else sims.max(axis=1)
    return out


def global_similarity(image_embed: np.ndarray, categories: CategorySet
                      ) -> np.ndarray:
    """Cosine of the whole-image embedding against each category, S floats."""
    q = np.asarray(image_embed, dtype=np.float64).ravel()
    norm = np.sqrt((q * q).sum())
    if norm == 0.0:
        raise ValueError("image embedding has zero norm")
    embeds_unit = _unit_rows(categories.text_embeds.astype(np.float64))
    return embeds_unit @ (q / norm)


def combine(local: np.ndarray, global_: np.ndarray, beta: float) -> np.ndarray:
    """Rowwise blend: beta * local + (1 - beta) * global."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must be in [0, 1], got {beta}")
    local = np.asarray(local, dtype=np.float64)
    global_ = np.asarray(global_, dtype=np.float64).ravel()
    if local.ndim != 2 or local.shape[1] != global_.shape[0]:
        raise ValueError(
            f"shape mismatch: local {local.shape} vs global {global_.shape}")
    return beta * local + (1.0 - beta) * global_[None, :]


def assign(combined: np.ndarray, partition: RegionPartition,
           unknown_threshold: float | None = None) -> SegmentationMask:
    """Argmax per region (ties to the lowest category index), broadcast
    to pixels; rows whose best score is below the threshold go UNKNOWN."""
    combined = np.asarray(combined, dtype=np.float64)
    if combined.shape[0] != partition.region_count:
        raise ValueError(
            f"table has {combined.shape[0]} rows for "
            f"{partition.region_count} regions")
    if combined.shape[1] > UNKNOWN_LABEL:
        raise ValueError(
            f"{combined.shape[1]} categories exceed the 8-bit label space")
    region_labels = combined.argmax(axis=1).astype(np.int32)
    if unknown_threshold is not None:
        below = combined.max(axis=1) < unknown_threshold
        region_labels[below] = UNKNOWN_LABEL
    labels = region_labels[partition.labels]
    return SegmentationMask(labels=labels,
                            provenance={"unknown_threshold": unknown_threshold})


def labels_to_original(labels: np.ndarray, out_h: int, out_w: int
                       ) -> np.ndarray:
    """Nearest-neighbor mapping of a label map to the original resolution."""
    hr, wr = labels.shape
    ys = np.clip(np.rint((np.arange(out_h) + 0.5) * hr / out_h - 0.5),
                 0, hr - 1).astype(np.int64)
    xs = np.clip(np.rint((np.arange(out_w) + 0.5) * wr / out_w - 0.5),
                 0, wr - 1).astype(np.int64)
    return labels[ys[:, None], xs[None, :]]


# ---------------------------------------------------------------------------
# full pipeline


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineStageError):
                raise PipelineStageError(name, exc) from exc
            return False

    return _Ctx()


def segment(image: np.ndarray,
            windows: list[tuple[tuple[int, int, int, int], FeatureGrid]],
            image_embed: np.ndarray, categories: CategorySet,
            config: SegmentConfig) -> SegmentationMask:
    """Segment one image given its per-window dense features.

    ``windows`` pairs each (top, left, height, width) rect in resized
    coordinates with its feature grid. Categories must carry
    representatives already (build_representatives).
    """
    orig_h, orig_w = image.shape[:2]
    with _stage("resize"):
        hr, wr = resized_dims(orig_h, orig_w, config.window)
        resized = resize_image(image, hr, wr)
    with _stage("plan"):
        expected = plan_windows(hr, wr, config.window, config.stride)
        got = sorted(range(len(windows)),
                     key=lambda i: (windows[i][0][0], windows[i][0][1]))
        rects = [windows[i][0] for i in got]
        grids = [windows[i][1] for i in got]
        for rect in rects:
            if rect[2] != config.window or rect[3] != config.window:
                raise WindowPlanError(
                    f"window {rect} is not {config.window}x{config.window}")
        if [(t, l) for t, l, _, _ in rects] != expected:
            raise WindowPlanError(
                f"provided windows {[(r[0], r[1]) for r in rects]} do not "
                f"match the plan {expected} for a {hr}x{wr} image")
    with _stage("stitch"):
        stitched = stitch_features([(t, l) for t, l, _, _ in rects], grids,
                                   config.window)
    with _stage("superpixel"):
        partition = felzenszwalb(resized, config.felz)
    with _stage("local"):
        local = local_similarities(stitched, partition, categories,
                                   config.aggregation)
    with _stage("global"):
        glob = global_similarity(image_embed, categories)
    with _stage("combine"):
        table = combine(local, glob, config.beta)
    with _stage("assign"):
        mask = assign(table, partition, config.unknown_threshold)
    with _stage("restore"):
        full = labels_to_original(mask.labels, orig_h, orig_w)
    return SegmentationMask(labels=full, provenance={
        "beta": config.beta,
        "top_k": config.top_k,
        "felz_preset": config.felz_preset,
        "felz": {"k": config.felz.k, "sigma": config.felz.sigma,
                 "min_size": config.felz.min_size},
        "unknown_threshold": config.unknown_threshold,
        "window": config.window,
        "stride": config.stride,
        "aggregation": config.aggregation,
        "resized_hw": [hr, wr],
    })
