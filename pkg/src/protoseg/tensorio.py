"""FDT1 binary tensors, dataset manifests, and raster ingestion.

This is the boundary between the engine and whatever produced the
features. Everything on disk is little-endian and row-major:

    FDT1 tensor file
        magic      4 bytes  b"FDT1"
        dtype_code 1 byte   0 = float32, 1 = uint8
        ndim       1 byte   in [1, 4]
        dims       ndim x uint32 LE, each >= 1
        payload    prod(dims) elements, row-major

    caption manifest   one JSON object per line (paths relative to the
                       manifest's directory), see CaptionRecord
    attention sidecar  single JSON object: {"image_hw": [H, W],
                       "tokens": n, "entries": [{t, l, h, token, path,
                       rows, cols}, ...]}
    inference manifest one JSON object per line, see InferenceRecord

Float payloads are validated finite on load; NaN/Inf would poison every
cosine downstream.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ManifestError,
    TensorDataError,
    TensorFormatError,
    TensorTruncationError,
)

MAGIC = b"FDT1"
_DTYPE_BY_CODE = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODE_BY_KIND = {"f": 0, "u": 1}
MAX_NDIM = 4


def read_tensor(path: str | Path) -> np.ndarray:
    """Decode one FDT1 file into a float32 or uint8 ndarray."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 6 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: not an FDT1 tensor (bad magic)")
    code, ndim = raw[4], raw[5]
    if code not in _DTYPE_BY_CODE:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= MAX_NDIM:
        raise TensorFormatError(f"{path}: ndim {ndim} outside [1, {MAX_NDIM}]")
    header_end = 6 + 4 * ndim
    if len(raw) < header_end:
        raise TensorTruncationError(f"{path}: header cut short")
    dims = struct.unpack_from(f"<{ndim}I", raw, 6)
    if any(d == 0 for d in dims):
        raise TensorFormatError(f"{path}: zero-sized dimension in {dims}")
    dtype = _DTYPE_BY_CODE[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - header_end != expected:
        raise TensorTruncationError(
            f"{path}: payload is {len(raw) - header_end} bytes, "
            f"dims {dims} demand {expected}"
        )
    values = np.frombuffer(raw, dtype=dtype, offset=header_end).reshape(dims)
    if code == 0 and not np.isfinite(values).all():
        raise TensorDataError(f"{path}: payload contains NaN/Inf")
    return values.copy()


def write_tensor(tensor: np.ndarray, path: str | Path) -> None:
    """Encode a float32/uint8 tensor as FDT1; read_tensor inverts bit-exactly.

    Floating input of other widths is cast to float32 (the format's only
    float type); integer input must already be uint8.
    """
    arr = np.asarray(tensor)
    if arr.ndim == 0 or arr.ndim > MAX_NDIM:
        raise ValueError(f"ndim must be in [1, {MAX_NDIM}], got {arr.ndim}")
    arr = np.ascontiguousarray(arr)
    if arr.size == 0:
        raise ValueError("zero-sized tensors are not representable")
    if arr.dtype.kind == "f":
        if not np.isfinite(arr).all():
            raise ValueError("tensor contains NaN/Inf")
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype == np.uint8:
        pass
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}; use float or uint8")
    code = _CODE_BY_KIND[arr.dtype.kind]
    path = Path(path)
    header = MAGIC + bytes([code, arr.ndim])
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    path.write_bytes(header + arr.tobytes())


# ---------------------------------------------------------------------------
# dense feature grids


@dataclass
class FeatureGrid:
    """Per-patch dense features: rows x cols x dim, float."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3:
            raise ValueError(f"feature grid must be 3-D, got {self.values.ndim}-D")
        if not np.isfinite(self.values).all():
            raise TensorDataError("feature grid contains NaN/Inf")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def dim(self) -> int:
        return self.values.shape[2]


def load_feature_grid(path: str | Path) -> FeatureGrid:
    values = read_tensor(path)
    if values.dtype != np.float32:
        raise TensorFormatError(f"{path}: feature grid must be float32")
    return FeatureGrid(values)


# ---------------------------------------------------------------------------
# attention stacks


@dataclass
class AttentionEntry:
    t: int
    l: int
    h: int
    token: int
    map: np.ndarray  # h_l x w_l float, values >= 0


@dataclass
class AttentionStack:
    """All cross-attention maps for one generated image.

    entries hold every (timestep, layer, head, token) map; counts are the
    distinct axis sizes. image_hw is the generated image's pixel size,
    the target for attribution upsampling.
    """

    entries: list[AttentionEntry]
    image_hw: tuple[int, int]
    n_tokens: int
    n_steps: int = field(init=False)
    n_layers: int = field(init=False)
    n_heads: int = field(init=False)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("attention stack has no entries")
        steps = sorted({e.t for e in self.entries})
        layers = sorted({e.l for e in self.entries})
        heads = sorted({e.h for e in self.entries})
        self.n_steps, self.n_layers, self.n_heads = (
            len(steps), len(layers), len(heads))
        full = self.n_steps * self.n_layers * self.n_heads
        per_token: dict[int, set] = {}
        for e in self.entries:
            per_token.setdefault(e.token, set()).add((e.t, e.l, e.h))
        for token, triples in per_token.items():
            if len(triples) != full:
                raise TensorDataError(
                    f"token {token} covers {len(triples)} (t,l,h) triples, "
                    f"expected {full}"
                )

    def maps_for_token(self, token: int) -> dict[tuple[int, int, int], np.ndarray]:
        out = {}
        for e in self.entries:
            if e.token == token:
                out[(e.t, e.l, e.h)] = e.map
        if not out:
            raise ValueError(f"token {token} not present in stack")
        return out


def load_attention_stack(sidecar_path: str | Path) -> AttentionStack:
    """Read a sidecar index plus its per-entry FDT1 maps."""
    sidecar_path = Path(sidecar_path)
    try:
        meta = json.loads(sidecar_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{sidecar_path}: unreadable sidecar: {e}") from e
    for key in ("image_hw", "tokens", "entries"):
        if key not in meta:
            raise ManifestError(f"{sidecar_path}: sidecar missing '{key}'")
    base = sidecar_path.parent
    entries = []
    for spec in meta["entries"]:
        grid = read_tensor(base / spec["path"])
        if grid.ndim != 2:
            raise TensorDataError(f"{spec['path']}: attention map must be 2-D")
        if grid.shape != (spec["rows"], spec["cols"]):
            raise ManifestError(
                f"{spec['path']}: sidecar says {spec['rows']}x{spec['cols']}, "
                f"file is {grid.shape[0]}x{grid.shape[1]}"
            )
        if (grid < 0).any():
            raise TensorDataError(f"{spec['path']}: negative attention values")
        entries.append(AttentionEntry(
            t=int(spec["t"]), l=int(spec["l"]), h=int(spec["h"]),
            token=int(spec["token"]), map=grid.astype(np.float64)))
    h, w = meta["image_hw"]
    return AttentionStack(entries=entries, image_hw=(int(h), int(w)),
                          n_tokens=int(meta["tokens"]))


def stack_token_count(sidecar_path: str | Path) -> int:
    """Token-axis size from the sidecar alone (no map files touched)."""
    try:
        meta = json.loads(Path(sidecar_path).read_text())
        return int(meta["tokens"])
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise ManifestError(f"{sidecar_path}: unreadable sidecar: {e}") from e


# ---------------------------------------------------------------------------
# caption manifests


@dataclass
class NounSpan:
    noun: str
    tokens: list[int]


@dataclass
class CaptionRecord:
    caption_id: str
    caption_text: str
    nouns: list[NounSpan]
    attention_stack: Path
    feature_grid: Path
    caption_embed: Path
    template_embeds: dict[str, Path]


_RECORD_FIELDS = ("caption_id", "caption_text", "nouns", "attention_stack",
                  "feature_grid", "caption_embed", "template_embeds")


def load_manifest(path: str | Path) -> list[CaptionRecord]:
    """Parse and validate a caption manifest (one JSON record per line).

    Every referenced file must exist and every noun's token indices must
    be non-empty and inside the stack's token axis.
    """
    path = Path(path)
    base = path.parent
    records: list[CaptionRecord] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: bad JSON: {e}") from e
            missing = [f for f in _RECORD_FIELDS if f not in obj]
            if missing:
                raise ManifestError(
                    f"{path}:{lineno}: record missing fields {missing}")
            cid = obj["caption_id"]
            paths = {
                "attention_stack": base / obj["attention_stack"],
                "feature_grid": base / obj["feature_grid"],
                "caption_embed": base / obj["caption_embed"],
            }
            template_embeds = {
                noun: base / rel for noun, rel in obj["template_embeds"].items()
            }
            for name, p in {**paths, **{f"template_embeds[{n}]": p for n, p
                                        in template_embeds.items()}}.items():
                if not p.exists():
                    raise ManifestError(
                        f"{path}:{lineno}: record '{cid}': missing {name} file {p}")
            n_tokens = stack_token_count(paths["attention_stack"])
            nouns = []
            for nspec in obj["nouns"]:
                toks = [int(t) for t in nspec["tokens"]]
                if not toks:
                    raise ManifestError(
                        f"{path}:{lineno}: record '{cid}': noun "
                        f"'{nspec['noun']}' has no token indices")
                bad = [t for t in toks if t < 0 or t >= n_tokens]
                if bad:
                    raise ManifestError(
                        f"{path}:{lineno}: record '{cid}': noun "
                        f"'{nspec['noun']}' token indices {bad} outside "
                        f"stack token axis [0, {n_tokens})")
                if nspec["noun"] not in template_embeds:
                    raise ManifestError(
                        f"{path}:{lineno}: record '{cid}': no template "
                        f"embedding for noun '{nspec['noun']}'")
                nouns.append(NounSpan(noun=nspec["noun"], tokens=toks))
            records.append(CaptionRecord(
                caption_id=cid,
                caption_text=obj["caption_text"],
                nouns=nouns,
                attention_stack=paths["attention_stack"].resolve(),
                feature_grid=paths["feature_grid"].resolve(),
                caption_embed=paths["caption_embed"].resolve(),
                template_embeds={n: p.resolve()
                                 for n, p in template_embeds.items()},
            ))
    return records


# ---------------------------------------------------------------------------
# inference manifests


@dataclass
class WindowSpec:
    top: int
    left: int
    height: int
    width: int
    grid: Path


@dataclass
class InferenceRecord:
    image_id: str
    image: Path
    image_embed: Path
    windows: list[WindowSpec]


def load_inference_manifest(path: str | Path) -> list[InferenceRecord]:
    path = Path(path)
    base = path.parent
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}:{lineno}: bad JSON: {e}") from e
            for key in ("image_id", "image", "image_embed", "windows"):
                if key not in obj:
                    raise ManifestError(f"{path}:{lineno}: missing '{key}'")
            windows = []
            for w in obj["windows"]:
                gpath = base / w["grid"]
                if not gpath.exists():
                    raise ManifestError(
                        f"{path}:{lineno}: record '{obj['image_id']}': "
                        f"missing grid file {gpath}")
                windows.append(WindowSpec(
                    top=int(w["top"]), left=int(w["left"]),
                    height=int(w["height"]), width=int(w["width"]),
                    grid=gpath.resolve()))
            if not windows:
                raise ManifestError(
                    f"{path}:{lineno}: record '{obj['image_id']}' has no windows")
            for key in ("image", "image_embed"):
                p = base / obj[key]
                if not p.exists():
                    raise ManifestError(
                        f"{path}:{lineno}: record '{obj['image_id']}': "
                        f"missing {key} file {p}")
            records.append(InferenceRecord(
                image_id=obj["image_id"],
                image=(base / obj["image"]).resolve(),
                image_embed=(base / obj["image_embed"]).resolve(),
                windows=windows))
    return records


# ---------------------------------------------------------------------------
# raster ingestion


def load_image(path: str | Path) -> np.ndarray:
    """8-bit RGB pixels from PNG/PPM (or anything Pillow decodes)."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(pixels: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    Image.fromarray(pixels, mode="RGB").save(path)
