"""Key/prototype store with exact and approximate (HNSW) cosine search.

Keys are L2-normalized at build time so cosine search is a dot product;
prototypes stay raw because category representatives average raw
embeddings. Exact search is the default; the HNSW graph is opt-in and
persists alongside the bundle with a versioned binary header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import IndexBuildError, IndexLoadError, IndexStateError
from .prototype import PrototypeBundle

DEFAULT_TOP_K = 350
DEFAULT_M_CONN = 32
DEFAULT_EF_CONSTRUCTION = 200
DEFAULT_EF_SEARCH = 128

_GRAPH_MAGIC = b"PSHG"
_GRAPH_VERSION = 1


@dataclass
class RetrievalResult:
    ids: np.ndarray      # int64, distinct
    scores: np.ndarray   # float64 cosine similarities, descending
    clamped: bool = False  # requested k exceeded the collection size


@dataclass
class HnswGraph:
    m_conn: int
    m0: int
    ef_construction: int
    ef_search_default: int
    seed: int
    levels: np.ndarray   # int32 [N]
    entry: int
    max_level: int
    adj0: np.ndarray     # int32 [N, m0]
    cnt0: np.ndarray     # int32 [N]
    adj_up: np.ndarray   # int32 [L, N, m_conn] (L >= 1, possibly unused)
    cnt_up: np.ndarray   # int32 [L, N]


@dataclass
class PrototypeIndex:
    keys: np.ndarray       # float32 [N, d_t], as stored
    protos: np.ndarray     # float32 [N, d_v], raw
    meta: list[tuple[str, str]]
    keys_unit: np.ndarray = field(repr=False, default=None)  # float64, normalized
    default_top_k: int = DEFAULT_TOP_K
    graph: HnswGraph | None = None

    def __len__(self) -> int:
        return len(self.keys)


def build_index(bundle: PrototypeBundle, default_top_k: int = DEFAULT_TOP_K
                ) -> PrototypeIndex:
    """Normalize keys for dot-product search; exact queries always work."""
    if len(bundle.keys) < 1:
        raise IndexBuildError("bundle is empty")
    keys64 = bundle.keys.astype(np.float64)
    norms = np.sqrt((keys64 * keys64).sum(axis=1))
    bad = np.nonzero(norms == 0.0)[0]
    if bad.size:
        noun, cid = bundle.meta[bad[0]]
        raise IndexBuildError(
            f"zero-norm key at record {bad[0]} (noun='{noun}', "
            f"caption_id='{cid}')")
    return PrototypeIndex(
        keys=bundle.keys,
        protos=bundle.protos,
        meta=list(bundle.meta),
        keys_unit=keys64 / norms[:, None],
        default_top_k=default_top_k,
    )


def _unit_query(query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    norm = np.sqrt((q * q).sum())
    if norm == 0.0:
        raise ValueError("query vector has zero norm")
    return q / norm


def query_exact(index: PrototypeIndex, query: np.ndarray, k: int
                ) -> RetrievalResult:
    """Exact top-k by cosine; ties broken by lower id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = _unit_query(query)
    if q.shape[0] != index.keys_unit.shape[1]:
        raise ValueError(
            f"query dim {q.shape[0]} != key dim {index.keys_unit.shape[1]}")
    n = len(index)
    clamped = k > n
    k_eff = min(k, n)
    scores = index.keys_unit @ q
    order = np.lexsort((np.arange(n), -scores))[:k_eff]
    return RetrievalResult(ids=order.astype(np.int64),
                           scores=scores[order], clamped=clamped)


def build_hnsw(index: PrototypeIndex, m_conn: int = DEFAULT_M_CONN,
               ef_construction: int = DEFAULT_EF_CONSTRUCTION,
               ef_search_default: int = DEFAULT_EF_SEARCH,
               seed: int = 0) -> None:
    """Attach an HNSW graph built over the normalized keys.

    Levels come from one seeded RNG stream, so the graph is a pure
    function of (key order, parameters, seed).
    """
    if m_conn < 2:
        raise ValueError(f"m_conn must be >= 2, got {m_conn}")
    if ef_construction < m_conn:
        raise ValueError("ef_construction must be >= m_conn")
    n = len(index)
    rng = np.random.default_rng(seed)
    u = 1.0 - rng.random(n)  # (0, 1]; avoids log(0)
    ml = 1.0 / np.log(m_conn)
    levels = np.minimum(np.floor(-np.log(u) * ml), 48).astype(np.int32)
    m0 = 2 * m_conn
    lmax = max(1, int(levels.max()))
    adj0 = np.zeros((n, m0), dtype=np.int32)
    cnt0 = np.zeros(n, dtype=np.int32)
    adj_up = np.zeros((lmax, n, m_conn), dtype=np.int32)
    cnt_up = np.zeros((lmax, n), dtype=np.int32)
    entry = kernels.hnsw_build(index.keys_unit, levels, m_conn, m0,
                               ef_construction, adj0, cnt0, adj_up, cnt_up)
    index.graph = HnswGraph(
        m_conn=m_conn, m0=m0, ef_construction=ef_construction,
        ef_search_default=ef_search_default, seed=seed,
        levels=levels, entry=int(entry), max_level=int(levels.max()),
        adj0=adj0, cnt0=cnt0, adj_up=adj_up, cnt_up=cnt_up)


def query_hnsw(index: PrototypeIndex, query: np.ndarray, k: int,
               ef_search: int | None = None) -> RetrievalResult:
    """Approximate top-k via the graph; effective ef is max(ef_search, k)."""
    if index.graph is None:
        raise IndexStateError("no HNSW graph; call build_hnsw first")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    g = index.graph
    ef = g.ef_search_default if ef_search is None else ef_search
    if ef < 1:
        raise ValueError(f"ef_search must be >= 1, got {ef}")
    q = _unit_query(query)
    n = len(index)
    clamped = k > n
    k_eff = min(k, n)
    out_d = np.zeros(max(k_eff, 1), dtype=np.float64)
    out_i = np.zeros(max(k_eff, 1), dtype=np.int32)
    n_out = kernels.hnsw_query(index.keys_unit, g.entry, g.max_level,
                               g.adj0, g.cnt0, g.adj_up, g.cnt_up,
                               q, k_eff, max(ef, k_eff), out_d, out_i)
    ids = out_i[:n_out].astype(np.int64)
    scores = 1.0 - out_d[:n_out]
    return RetrievalResult(ids=ids, scores=scores, clamped=clamped)


# ---------------------------------------------------------------------------
# prototype aggregation


def aggregate_mean_embedding(protos: np.ndarray | list[np.ndarray]) -> np.ndarray:
    """Mean of retrieved prototypes: the category representative."""
    arr = np.asarray(protos, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[0] == 0:
        raise ValueError("no prototypes to aggregate")
    return arr.mean(axis=0)


def aggregate_similarity(protos: np.ndarray | list[np.ndarray],
                         region_embed: np.ndarray, mode: str) -> float:
    """Ablation variants: cosine per prototype, then mean or max."""
    if mode not in ("mean", "max"):
        raise ValueError(f"mode must be 'mean' or 'max', got {mode!r}")
    arr = np.asarray(protos, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[0] == 0:
        raise ValueError("no prototypes to aggregate")
    r = _unit_query(region_embed)
    norms = np.sqrt((arr * arr).sum(axis=1))
    sims = (arr @ r) / np.maximum(norms, 1e-300)
    return float(sims.mean() if mode == "mean" else sims.max())


# ---------------------------------------------------------------------------
# persistence: keys.fdt / protos.fdt / meta.tsv / params.json / graph.bin


def save_index(index: PrototypeIndex, out_dir: str | Path) -> None:
    from .prototype import write_bundle

    out_dir = Path(out_dir)
    write_bundle(PrototypeBundle(keys=index.keys, protos=index.protos,
                                 meta=index.meta), out_dir)
    params = {
        "format_version": 1,
        "default_top_k": index.default_top_k,
        "hnsw": None,
    }
    if index.graph is not None:
        g = index.graph
        params["hnsw"] = {
            "m_conn": g.m_conn, "ef_construction": g.ef_construction,
            "ef_search_default": g.ef_search_default, "seed": g.seed,
        }
        _write_graph(g, out_dir / "graph.bin")
    (out_dir / "params.json").write_text(json.dumps(params, indent=2) + "\n")


def load_index(path: str | Path) -> PrototypeIndex:
    from .prototype import read_bundle

    path = Path(path)
    try:
        params = json.loads((path / "params.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise IndexLoadError(f"{path}: unreadable params.json: {e}") from e
    if params.get("format_version") != 1:
        raise IndexLoadError(
            f"{path}: unsupported index format version "
            f"{params.get('format_version')}")
    bundle = read_bundle(path)
    index = build_index(bundle, default_top_k=params["default_top_k"])
    if params.get("hnsw") is not None:
        index.graph = _read_graph(path / "graph.bin", params["hnsw"])
    return index


def _write_graph(g: HnswGraph, path: Path) -> None:
    n = len(g.levels)
    lmax_arrays = g.adj_up.shape[0]
    head = _GRAPH_MAGIC + struct.pack(
        "<IiiiiqiiII", _GRAPH_VERSION, g.m_conn, g.m0, g.ef_construction,
        g.ef_search_default, g.seed, g.entry, g.max_level, n, lmax_arrays)
    blobs = [head, g.levels.tobytes(), g.cnt0.tobytes(), g.adj0.tobytes(),
             g.cnt_up.tobytes(), g.adj_up.tobytes()]
    path.write_bytes(b"".join(blobs))


def _read_graph(path: Path, params: dict) -> HnswGraph:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IndexLoadError(f"{path}: {e}") from e
    if len(raw) < 4 or raw[:4] != _GRAPH_MAGIC:
        raise IndexLoadError(f"{path}: not an HNSW graph file")
    try:
        (version, m_conn, m0, efc, ef_default, seed, entry, max_level,
         n, lmax) = struct.unpack_from("<IiiiiqiiII", raw, 4)
    except struct.error as e:
        raise IndexLoadError(f"{path}: truncated header") from e
    if version != _GRAPH_VERSION:
        raise IndexLoadError(
            f"{path}: graph version {version}, expected {_GRAPH_VERSION}")
    off = 4 + struct.calcsize("<IiiiiqiiII")
    i4 = np.dtype("<i4")
    sizes = [n, n, n * m0, lmax * n, lmax * n * m_conn]
    total = off + sum(s * 4 for s in sizes)
    if len(raw) != total:
        raise IndexLoadError(
            f"{path}: file is {len(raw)} bytes, layout demands {total}")
    arrays = []
    for s in sizes:
        arrays.append(np.frombuffer(raw, dtype=i4, count=s, offset=off).copy())
        off += s * 4
    levels, cnt0, adj0, cnt_up, adj_up = arrays
    return HnswGraph(
        m_conn=m_conn, m0=m0, ef_construction=efc,
        ef_search_default=ef_default, seed=seed,
        levels=levels, entry=entry, max_level=max_level,
        adj0=adj0.reshape(n, m0), cnt0=cnt0,
        adj_up=adj_up.reshape(lmax, n, m_conn),
        cnt_up=cnt_up.reshape(lmax, n))
