#!/usr/bin/env python3
"""Timings for the hot kernels: compiled (numba) vs pure-Python fallback.

Runs each workload in a subprocess so the PROTOSEG_NUMBA import-time
flag takes effect, and reports both paths side by side. The pure path
runs a scaled-down HNSW workload (same code, fewer items) because the
full build is minutes-slow uncompiled; its timing is extrapolated
per-item, not measured at full size.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import textwrap

WORKLOAD = textwrap.dedent("""
    import json
    import time
    import numpy as np

    from protoseg._accel import NUMBA_ENABLED
    from protoseg.index import build_index, build_hnsw, query_hnsw
    from protoseg.prototype import PrototypeBundle
    from protoseg.superpixel import FelzParams, felzenszwalb

    quick = __QUICK__
    rng = np.random.default_rng(0)

    # warm-up: compile or no-op
    felzenszwalb(np.zeros((8, 8, 3), np.uint8),
                 FelzParams(k=1.0, sigma=0.0, min_size=1))

    felz_hw = (160, 240) if (quick or not NUMBA_ENABLED) else (448, 672)
    img = rng.integers(0, 255, size=(*felz_hw, 3)).astype(np.uint8)
    t0 = time.perf_counter()
    part = felzenszwalb(img, FelzParams(k=20.0, sigma=0.7, min_size=100))
    felz_s = time.perf_counter() - t0

    n = 500 if (quick or not NUMBA_ENABLED) else 10_000
    d = 64
    keys = rng.normal(size=(n, d)).astype(np.float32)
    bundle = PrototypeBundle(
        keys=keys, protos=rng.normal(size=(n, 8)).astype(np.float32),
        meta=[(str(i), str(i)) for i in range(n)])
    idx = build_index(bundle)
    t0 = time.perf_counter()
    build_hnsw(idx, m_conn=16, ef_construction=100, seed=0)
    build_s = time.perf_counter() - t0

    queries = rng.normal(size=(50, d))
    k = min(50, n)
    t0 = time.perf_counter()
    for q in queries:
        query_hnsw(idx, q, k, ef_search=128)
    query_ms = (time.perf_counter() - t0) / len(queries) * 1e3

    print(json.dumps({
        "numba": NUMBA_ENABLED,
        "felz_hw": list(felz_hw), "felz_s": felz_s,
        "felz_regions": part.region_count,
        "hnsw_n": n, "hnsw_build_s": build_s, "hnsw_query_ms": query_ms,
    }))
""")


def run_path(numba_flag: str, quick: bool) -> dict:
    env = dict(os.environ, PROTOSEG_NUMBA=numba_flag)
    out = subprocess.run(
        [sys.executable, "-c", WORKLOAD.replace("__QUICK__", str(quick))],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true",
                    help="small workloads on both paths")
    args = ap.parse_args()

    rows = []
    for flag in ("1", "0"):
        label = "numba" if flag == "1" else "pure"
        print(f"running {label} path ...", flush=True)
        rows.append((label, run_path(flag, args.quick)))

    print()
    print(f"{'path':<7}{'felzenszwalb':<26}{'hnsw build':<22}"
          f"{'hnsw query':<14}")
    for label, r in rows:
        h, w = r["felz_hw"]
        felz = f"{r['felz_s']:.3f}s @ {h}x{w}"
        build = f"{r['hnsw_build_s']:.3f}s @ N={r['hnsw_n']}"
        query = f"{r['hnsw_query_ms']:.2f} ms"
        print(f"{label:<7}{felz:<26}{build:<22}{query:<14}")

    a, b = rows[0][1], rows[1][1]
    felz_x = (b["felz_s"] / (b["felz_hw"][0] * b["felz_hw"][1])) / \
        (a["felz_s"] / (a["felz_hw"][0] * a["felz_hw"][1]))
    build_x = (b["hnsw_build_s"] / b["hnsw_n"]) / \
        (a["hnsw_build_s"] / a["hnsw_n"])
    print(f"\nper-item speedup of compiled path: felzenszwalb ~{felz_x:.0f}x, "
          f"hnsw build ~{build_x:.0f}x, "
          f"hnsw query ~{b['hnsw_query_ms'] / a['hnsw_query_ms']:.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
