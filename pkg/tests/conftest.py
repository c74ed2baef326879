"""Shared synthetic-asset builders for the test suite."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from protoseg.tensorio import write_tensor


def write_stack(base: Path, name: str, image_hw: tuple[int, int],
                maps: dict[tuple[int, int, int, int], np.ndarray],
                n_tokens: int) -> str:
    """Write attention maps + sidecar; returns the sidecar's relative path.

    ``maps`` keys are (t, l, h, token).
    """
    stack_dir = base / f"{name}_stack"
    stack_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for (t, l, h, token), grid in sorted(maps.items()):
        fname = f"{t}_{l}_{h}_{token}.fdt"
        write_tensor(np.asarray(grid, dtype=np.float32), stack_dir / fname)
        entries.append({"t": t, "l": l, "h": h, "token": token,
                        "path": f"{name}_stack/{fname}",
                        "rows": grid.shape[0], "cols": grid.shape[1]})
    sidecar = base / f"{name}_stack.json"
    sidecar.write_text(json.dumps({
        "image_hw": list(image_hw), "tokens": n_tokens, "entries": entries}))
    return sidecar.name


def write_caption_assets(base: Path, caption_id: str,
                         nouns: list[tuple[str, list[int]]],
                         maps: dict[tuple[int, int, int, int], np.ndarray],
                         n_tokens: int,
                         image_hw: tuple[int, int],
                         feature_grid: np.ndarray,
                         caption_embed: np.ndarray,
                         template_embeds: dict[str, np.ndarray]) -> dict:
    """Materialize one manifest record's files; returns the JSON record."""
    stack_rel = write_stack(base, caption_id, image_hw, maps, n_tokens)
    grid_rel = f"{caption_id}_grid.fdt"
    write_tensor(feature_grid.astype(np.float32), base / grid_rel)
    embed_rel = f"{caption_id}_cap.fdt"
    write_tensor(caption_embed.astype(np.float32), base / embed_rel)
    tmpl_rels = {}
    for noun, emb in template_embeds.items():
        rel = f"{caption_id}_tmpl_{noun.replace(' ', '_')}.fdt"
        write_tensor(np.asarray(emb, dtype=np.float32), base / rel)
        tmpl_rels[noun] = rel
    return {
        "caption_id": caption_id,
        "caption_text": f"synthetic caption {caption_id}",
        "nouns": [{"noun": n, "tokens": toks} for n, toks in nouns],
        "attention_stack": stack_rel,
        "feature_grid": grid_rel,
        "caption_embed": embed_rel,
        "template_embeds": tmpl_rels,
    }


def write_manifest(base: Path, records: list[dict],
                   name: str = "manifest.jsonl") -> Path:
    path = base / name
    path.write_text("".join(json.dumps(r) + "\n" for r in records))
    return path


def random_stack_maps(rng: np.random.Generator, n_steps: int, n_layers: int,
                      n_heads: int, n_tokens: int, sizes: list[int] | None = None
                      ) -> dict[tuple[int, int, int, int], np.ndarray]:
    """Random non-negative maps; each layer gets its own spatial size."""
    if sizes is None:
        sizes = [8 + 4 * l for l in range(n_layers)]
    maps = {}
    for t in range(n_steps):
        for l in range(n_layers):
            s = sizes[l]
            for h in range(n_heads):
                for token in range(n_tokens):
                    maps[(t, l, h, token)] = rng.random((s, s))
    return maps


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# micro scene: 3 vertical bands, features piecewise-constant per band,
# a 6-pair index whose category representatives equal the band features


BAND_EDGES = (0, 149, 299, 448)  # pixel columns of the three bands
MICRO_SIZE = 448


def band_of_columns(x: np.ndarray) -> np.ndarray:
    """Band id per pixel column."""
    return np.digitize(x, BAND_EDGES[1:3])


def build_micro_scene():
    """Deterministic end-to-end fixture; returns a dict of parts.

    The image is three solid vertical bands; the 37x37 feature grid is
    piecewise-constant (per band, by cell-center column); the bundle
    holds two (key=e_c, proto=f_c) pairs per category, so K=2 retrieval
    averages to exactly f_c.
    """
    import protoseg
    from protoseg.prototype import PrototypeBundle

    size = MICRO_SIZE
    shades = (30, 128, 230)
    image = np.zeros((size, size, 3), np.uint8)
    gt = np.zeros((size, size), np.uint8)
    for b in range(3):
        lo, hi = BAND_EDGES[b], BAND_EDGES[b + 1]
        image[:, lo:hi] = shades[b]
        gt[:, lo:hi] = b

    d_v, d_t = 8, 6
    protos_by_band = np.zeros((3, d_v), np.float32)
    for b in range(3):
        protos_by_band[b, b] = 1.0
    cells = 37
    centers = (np.arange(cells) + 0.5) * size / cells
    cell_band = band_of_columns(centers)
    grid = np.zeros((cells, cells, d_v), np.float32)
    for j in range(cells):
        grid[:, j] = protos_by_band[cell_band[j]]

    keys = np.zeros((6, d_t), np.float32)
    protos = np.zeros((6, d_v), np.float32)
    meta = []
    for c in range(3):
        for j in range(2):
            keys[2 * c + j, c] = 1.0
            protos[2 * c + j] = protos_by_band[c]
            meta.append((f"band{c}", f"cap{c}_{j}"))
    bundle = PrototypeBundle(keys=keys, protos=protos, meta=meta)

    cat_embeds = np.eye(3, d_t, dtype=np.float64)
    categories = protoseg.CategorySet(
        names=["band0", "band1", "band2"], text_embeds=cat_embeds)
    image_embed = np.ones(d_t) / np.sqrt(d_t)  # equal global sims

    config = protoseg.SegmentConfig(
        beta=0.8, top_k=2,
        felz=protoseg.FelzParams(k=50.0, sigma=0.0, min_size=100),
        felz_preset=None, window=size, stride=224)
    return {
        "image": image, "gt": gt, "grid": grid, "bundle": bundle,
        "categories": categories, "image_embed": image_embed,
        "config": config,
    }
