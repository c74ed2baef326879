"""Visual prototypes via masked region pooling and textual keys via
template/caption interpolation.

A prototype is the weighted mean of dense features under the (resized,
continuous) localization mask. Its key blends the noun's mean template
embedding with the full caption embedding: alpha * t_hat + (1-alpha) * c_hat.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attribution import LocalizationMask, aggregate_attention, binarize
from .errors import DegenerateMapError, EmptyRegionError
from .tensorio import (
    CaptionRecord,
    FeatureGrid,
    load_attention_stack,
    load_feature_grid,
    read_tensor,
    write_tensor,
)

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.9


@dataclass
class VisualPrototype:
    vector: np.ndarray
    noun: str
    caption_id: str


@dataclass
class TextualKey:
    vector: np.ndarray
    noun: str
    caption_id: str


@dataclass
class KeyedPrototype:
    key: TextualKey
    prototype: VisualPrototype


def resize_mask(mask: LocalizationMask | np.ndarray, rows: int, cols: int
                ) -> np.ndarray:
    """Bilinearly interpolate a {0,1} mask to feature-grid resolution.

    The result stays continuous in [0, 1]; pooling uses the fractional
    boundary weights directly rather than re-binarizing.
    """
    from .attribution import bilinear_upsample

    values = np.asarray(getattr(mask, "values", mask), dtype=np.float64)
    if values.size == 0:
        raise ValueError("mask is empty")
    weights = bilinear_upsample(values, rows, cols)
    if not (weights > 0).any():
        raise EmptyRegionError("mask vanishes at feature resolution")
    return weights


def pool_region(features: FeatureGrid | np.ndarray, weights: np.ndarray
                ) -> np.ndarray:
    """Weighted mean of patch features: sum(v*w) / sum(w)."""
    values = np.asarray(getattr(features, "values", features), dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if values.ndim != 3:
        raise ValueError(f"features must be rows x cols x dim, got {values.ndim}-D")
    if weights.shape != values.shape[:2]:
        raise ValueError(
            f"weights {weights.shape} do not match feature grid "
            f"{values.shape[:2]}")
    total = weights.sum()
    if total <= 0.0:
        raise EmptyRegionError("pooling weights sum to zero")
    return np.einsum("hwd,hw->d", values, weights) / total


def mean_template_embed(template_embeds: list[np.ndarray] | np.ndarray
                        ) -> np.ndarray:
    """Arithmetic mean of the per-template noun embeddings."""
    arr = np.asarray(template_embeds, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("need a non-empty list of equal-length vectors")
    return arr.mean(axis=0)


def build_key(mean_noun_embed: np.ndarray, caption_embed: np.ndarray,
              alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Blend noun and caption embeddings: alpha*t_hat + (1-alpha)*c_hat."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    t_hat = np.asarray(mean_noun_embed, dtype=np.float64)
    c_hat = np.asarray(caption_embed, dtype=np.float64)
    if t_hat.shape != c_hat.shape:
        raise ValueError(
            f"embedding dims differ: {t_hat.shape} vs {c_hat.shape}")
    return alpha * t_hat + (1.0 - alpha) * c_hat


def _pairs_for_record(rec: CaptionRecord, gamma: float, alpha: float
                      ) -> list[KeyedPrototype]:
    stack = load_attention_stack(rec.attention_stack)
    grid = load_feature_grid(rec.feature_grid)
    caption_embed = read_tensor(rec.caption_embed).astype(np.float64)
    out = []
    for span in rec.nouns:
        try:
            attr = aggregate_attention(stack, span.tokens, *stack.image_hw)
            mask = binarize(attr, gamma)
            weights = resize_mask(mask, grid.rows, grid.cols)
            proto = pool_region(grid, weights)
        except (DegenerateMapError, EmptyRegionError) as e:
            logger.warning("skipping noun '%s' of caption '%s': %s",
                           span.noun, rec.caption_id, e)
            continue
        t_hat = mean_template_embed(
            read_tensor(rec.template_embeds[span.noun]))
        key_vec = build_key(t_hat, caption_embed, alpha)
        out.append(KeyedPrototype(
            key=TextualKey(vector=key_vec, noun=span.noun,
                           caption_id=rec.caption_id),
            prototype=VisualPrototype(vector=proto, noun=span.noun,
                                      caption_id=rec.caption_id)))
    return out


def generate_pairs(records: list[CaptionRecord], gamma: float = 0.45,
                   alpha: float = DEFAULT_ALPHA, workers: int = 1
                   ) -> list[KeyedPrototype]:
    """Run the offline pipeline over caption records.

    Result order is canonical (manifest order, then noun order) no
    matter how many workers run; degenerate nouns are skipped with a
    logged warning, hard I/O errors abort.
    """
    if workers <= 1:
        per_record = [_pairs_for_record(r, gamma, alpha) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_record = list(pool.map(
                lambda r: _pairs_for_record(r, gamma, alpha), records))
    return [p for chunk in per_record for p in chunk]


# ---------------------------------------------------------------------------
# prototype bundles: keys.fdt / protos.fdt / meta.tsv, index-aligned


@dataclass
class PrototypeBundle:
    keys: np.ndarray    # N x d_t float32
    protos: np.ndarray  # N x d_v float32
    meta: list[tuple[str, str]]  # (noun, caption_id)

    def __post_init__(self):
        if not (len(self.keys) == len(self.protos) == len(self.meta)):
            raise ValueError("keys/protos/meta lengths differ")


def bundle_from_pairs(pairs: list[KeyedPrototype]) -> PrototypeBundle:
    if not pairs:
        raise ValueError("no pairs to bundle")
    keys = np.stack([p.key.vector for p in pairs]).astype(np.float32)
    protos = np.stack([p.prototype.vector for p in pairs]).astype(np.float32)
    meta = [(p.key.noun, p.key.caption_id) for p in pairs]
    return PrototypeBundle(keys=keys, protos=protos, meta=meta)


def write_bundle(bundle: PrototypeBundle, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(bundle.keys, out_dir / "keys.fdt")
    write_tensor(bundle.protos, out_dir / "protos.fdt")
    lines = []
    for noun, cid in bundle.meta:
        lines.append(f"{noun.replace(chr(9), ' ')}\t{cid.replace(chr(9), ' ')}")
    (out_dir / "meta.tsv").write_text("\n".join(lines) + "\n")


def read_bundle(path: str | Path) -> PrototypeBundle:
    path = Path(path)
    keys = read_tensor(path / "keys.fdt")
    protos = read_tensor(path / "protos.fdt")
    meta = []
    for line in (path / "meta.tsv").read_text().splitlines():
        if line:
            noun, cid = line.split("\t")
            meta.append((noun, cid))
    return PrototypeBundle(keys=keys, protos=protos, meta=meta)
