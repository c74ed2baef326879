"""Command-line entry point.

Subcommands: masks (attribution pipeline), build-index (pairs + index),
segment (per-image masks), eval (mIoU report). Exit codes: 0 success,
1 stage failure, 2 usage error. Every run that writes outputs also
writes a provenance.json with the hyperparameters and input digests, so
reruns are auditable and byte-identical.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import index as index_mod
from . import inference, prototype, superpixel, tensorio
from .errors import ProtosegError
from .evaluate import ConfusionMatrix, accumulate, miou

logger = logging.getLogger("protoseg")

DEFAULT_GAMMA = 0.45
DEFAULT_ALPHA = 0.9
DEFAULT_BETA = 0.8


def _digest(path: Path) -> str:
    return "sha256:" + hashlib.sha256(path.read_bytes()).hexdigest()


def _write_provenance(out_dir: Path, command: str, params: dict,
                      inputs: dict[str, Path]) -> None:
    record = {
        "command": command,
        "params": params,
        "inputs": {name: _digest(p) for name, p in sorted(inputs.items())},
    }
    (out_dir / "provenance.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n")


def _load_categories(names_path: Path, embeds_path: Path) -> inference.CategorySet:
    names = [ln.strip() for ln in names_path.read_text().splitlines()
             if ln.strip()]
    embeds = tensorio.read_tensor(embeds_path)
    if embeds.ndim != 2 or embeds.shape[0] != len(names):
        raise ProtosegError(
            f"category embeds {embeds.shape} do not match "
            f"{len(names)} names")
    return inference.CategorySet(names=names,
                                 text_embeds=embeds.astype(np.float64))


def _felz_from_args(args) -> tuple[superpixel.FelzParams, str | None]:
    explicit = [args.felz_k, args.felz_sigma, args.felz_min_size]
    if any(v is not None for v in explicit):
        if not all(v is not None for v in explicit):
            raise ProtosegError(
                "--felz-k, --felz-sigma, --felz-min-size must be given together")
        return superpixel.FelzParams(k=args.felz_k, sigma=args.felz_sigma,
                                     min_size=args.felz_min_size), None
    return superpixel.preset(args.preset), args.preset


def _color_palette(n: int) -> np.ndarray:
    # fixed low-discrepancy palette; label 255 renders black
    idx = np.arange(256, dtype=np.int64)
    pal = np.stack([(idx * 67 + 89) % 256,
                    (idx * 97 + 41) % 256,
                    (idx * 151 + 13) % 256], axis=1).astype(np.uint8)
    pal[255] = 0
    return pal


# ---------------------------------------------------------------------------
# subcommands


def cmd_masks(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = tensorio.load_manifest(args.manifest)
    from .attribution import aggregate_attention, binarize
    from .errors import DegenerateMapError

    written = []
    for rec in records:
        stack = tensorio.load_attention_stack(rec.attention_stack)
        for i, span in enumerate(rec.nouns):
            attr = aggregate_attention(stack, span.tokens, *stack.image_hw)
            try:
                mask = binarize(attr, args.gamma)
            except DegenerateMapError as e:
                logger.warning("skipping '%s'/'%s': %s",
                               rec.caption_id, span.noun, e)
                continue
            name = f"{rec.caption_id}__{i}_{span.noun.replace(' ', '_')}.fdt"
            tensorio.write_tensor(mask.values, out_dir / name)
            written.append(name)
    _write_provenance(out_dir, "masks", {"gamma": args.gamma,
                                         "outputs": written},
                      {"manifest": Path(args.manifest)})
    print(f"wrote {len(written)} masks to {out_dir}")
    return 0


def cmd_build_index(args) -> int:
    records = tensorio.load_manifest(args.manifest)
    pairs = prototype.generate_pairs(records, gamma=args.gamma,
                                     alpha=args.alpha, workers=args.threads)
    if not pairs:
        raise ProtosegError("no (key, prototype) pairs were generated")
    bundle = prototype.bundle_from_pairs(pairs)
    idx = index_mod.build_index(bundle, default_top_k=args.topk)
    if args.approx:
        index_mod.build_hnsw(idx, m_conn=args.hnsw_m,
                             ef_construction=args.ef_construction,
                             ef_search_default=args.ef_search,
                             seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index_mod.save_index(idx, out_dir)
    _write_provenance(out_dir, "build-index",
                      {"gamma": args.gamma, "alpha": args.alpha,
                       "topk": args.topk, "approx": args.approx,
                       "pairs": len(pairs)},
                      {"manifest": Path(args.manifest)})
    print(f"indexed {len(pairs)} pairs into {out_dir}"
          + (" (with HNSW graph)" if args.approx else ""))
    return 0


def _segment_one(rec, idx_categories, config, out_dir, save_color,
                 save_regions):
    cats = idx_categories
    image = tensorio.load_image(rec.image)
    image_embed = tensorio.read_tensor(rec.image_embed).astype(np.float64)
    windows = [((w.top, w.left, w.height, w.width),
                tensorio.load_feature_grid(w.grid)) for w in rec.windows]
    mask = inference.segment(image, windows, image_embed, cats, config)
    out_path = out_dir / f"{rec.image_id}.fdt"
    tensorio.write_tensor(mask.labels.astype(np.uint8), out_path)
    if save_color:
        pal = _color_palette(256)
        tensorio.save_image(pal[mask.labels], out_dir / f"{rec.image_id}.png")
    if save_regions:
        hr, wr = inference.resized_dims(*image.shape[:2], config.window)
        part = superpixel.felzenszwalb(
            inference.resize_image(image, hr, wr), config.felz)
        labels = part.labels
        dtype = np.uint8 if part.region_count <= 256 else np.float32
        tensorio.write_tensor(labels.astype(dtype),
                              out_dir / f"{rec.image_id}_regions.fdt")
    return rec.image_id, mask.provenance


def cmd_segment(args) -> int:
    idx = index_mod.load_index(args.index)
    cats = _load_categories(Path(args.categories), Path(args.category_embeds))

    felz, preset_name = _felz_from_args(args)
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
        if "felz" in file_cfg and not any(
                v is not None for v in (args.felz_k, args.felz_sigma,
                                        args.felz_min_size)):
            felz = superpixel.FelzParams(**file_cfg["felz"])
            preset_name = None
        elif "felz_preset" in file_cfg:
            felz = superpixel.preset(file_cfg["felz_preset"])
            preset_name = file_cfg["felz_preset"]
    config = inference.SegmentConfig(
        beta=args.beta if args.beta is not None
        else file_cfg.get("beta", DEFAULT_BETA),
        top_k=args.topk if args.topk is not None
        else file_cfg.get("top_k", index_mod.DEFAULT_TOP_K),
        felz=felz,
        felz_preset=preset_name,
        window=file_cfg.get("window", inference.WINDOW_SIZE),
        stride=file_cfg.get("stride", inference.WINDOW_STRIDE),
        unknown_threshold=args.unknown_threshold
        if args.unknown_threshold is not None
        else file_cfg.get("unknown_threshold"),
        use_hnsw=args.approx,
        ef_search=args.ef_search,
        aggregation=args.aggregation or file_cfg.get("aggregation",
                                                     "mean_embedding"),
    )
    cats = inference.build_representatives(idx, cats, k=config.top_k,
                                           use_hnsw=config.use_hnsw,
                                           ef_search=config.ef_search)
    records = tensorio.load_inference_manifest(args.inputs)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(
                lambda r: _segment_one(r, cats, config, out_dir,
                                       args.save_color, args.save_regions),
                records))
    else:
        results = [_segment_one(r, cats, config, out_dir, args.save_color,
                                args.save_regions)
                   for r in records]

    inputs = {"inputs": Path(args.inputs),
              "categories": Path(args.categories),
              "category_embeds": Path(args.category_embeds),
              "index_params": Path(args.index) / "params.json"}
    if args.config:
        inputs["config"] = Path(args.config)
    _write_provenance(out_dir, "segment",
                      {"beta": config.beta, "top_k": config.top_k,
                       "felz_preset": config.felz_preset,
                       "felz": {"k": config.felz.k, "sigma": config.felz.sigma,
                                "min_size": config.felz.min_size},
                       "unknown_threshold": config.unknown_threshold,
                       "aggregation": config.aggregation,
                       "approx": config.use_hnsw,
                       "images": [r[0] for r in results]},
                      inputs)
    print(f"segmented {len(results)} images into {out_dir}")
    return 0


def _load_label_map(path: Path) -> np.ndarray:
    if path.suffix == ".fdt":
        return tensorio.read_tensor(path)
    img = tensorio.load_image(path)
    if not (img[:, :, 0] == img[:, :, 1]).all() or \
            not (img[:, :, 1] == img[:, :, 2]).all():
        raise ProtosegError(f"{path}: label PNG must be single-channel gray")
    return img[:, :, 0]


def cmd_eval(args) -> int:
    names = [ln.strip() for ln in Path(args.categories).read_text().splitlines()
             if ln.strip()]
    cm = ConfusionMatrix(num_classes=len(names),
                         include_unknown=args.unknown)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    pred_files = sorted(p for p in pred_dir.glob("*.fdt")
                        if not p.name.endswith("_regions.fdt"))
    if not pred_files:
        raise ProtosegError(f"no .fdt predictions in {pred_dir}")
    for pf in pred_files:
        gt_path = gt_dir / pf.name
        if not gt_path.exists():
            gt_path = gt_dir / (pf.stem + ".png")
        if not gt_path.exists():
            raise ProtosegError(f"no ground truth for {pf.name} in {gt_dir}")
        accumulate(cm, tensorio.read_tensor(pf), _load_label_map(gt_path),
                   ignore_label=args.ignore_label)
    mean, per_class = miou(cm)
    all_names = names + (["unknown"] if args.unknown else [])
    width = max(len(n) for n in all_names)
    for name, iou in zip(all_names, per_class):
        shown = "  (absent)" if np.isnan(iou) else f"  {iou:.4f}"
        print(f"{name:<{width}}{shown}")
    print(f"mIoU {mean:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _in_range(kind, lo, hi, lo_open=False, hi_open=False):
    def parse(text):
        v = kind(text)
        if (v < lo or v > hi or (lo_open and v == lo)
                or (hi_open and v == hi)):
            lo_b = "(" if lo_open else "["
            hi_b = ")" if hi_open else "]"
            raise argparse.ArgumentTypeError(
                f"must be in {lo_b}{lo}, {hi}{hi_b}, got {text}")
        return v

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="protoseg",
        description="Open-vocabulary segmentation from retrieved "
                    "key/prototype pairs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("masks", help="write weak localization masks")
    pm.add_argument("--manifest", required=True)
    pm.add_argument("--gamma", type=_in_range(float, 0, 1, True, True),
                    default=DEFAULT_GAMMA)
    pm.add_argument("--out", required=True)
    pm.set_defaults(func=cmd_masks)

    pb = sub.add_parser("build-index", help="generate pairs and index them")
    pb.add_argument("--manifest", required=True)
    pb.add_argument("--gamma", type=_in_range(float, 0, 1, True, True),
                    default=DEFAULT_GAMMA)
    pb.add_argument("--alpha", type=_in_range(float, 0, 1, True, False),
                    default=DEFAULT_ALPHA)
    pb.add_argument("--topk", type=_in_range(int, 1, 10**9),
                    default=index_mod.DEFAULT_TOP_K)
    pb.add_argument("--approx", action="store_true",
                    help="also build the HNSW graph")
    pb.add_argument("--hnsw-m", type=_in_range(int, 2, 4096),
                    default=index_mod.DEFAULT_M_CONN)
    pb.add_argument("--ef-construction", type=_in_range(int, 2, 10**6),
                    default=index_mod.DEFAULT_EF_CONSTRUCTION)
    pb.add_argument("--ef-search", type=_in_range(int, 1, 10**6),
                    default=index_mod.DEFAULT_EF_SEARCH)
    pb.add_argument("--seed", type=int, default=0)
    pb.add_argument("--threads", type=_in_range(int, 1, 256), default=1)
    pb.add_argument("--out", required=True)
    pb.set_defaults(func=cmd_build_index)

    ps = sub.add_parser("segment", help="segment images against an index")
    ps.add_argument("--index", required=True)
    ps.add_argument("--inputs", required=True,
                    help="inference manifest (JSON lines)")
    ps.add_argument("--categories", required=True,
                    help="category names, one per line")
    ps.add_argument("--category-embeds", required=True,
                    help="FDT1 tensor, S x d_t")
    ps.add_argument("--config", help="JSON config file")
    ps.add_argument("--beta", type=_in_range(float, 0, 1))
    ps.add_argument("--topk", type=_in_range(int, 1, 10**9))
    ps.add_argument("--preset", default="ade",
                    choices=sorted(superpixel.PRESETS))
    ps.add_argument("--felz-k", type=float)
    ps.add_argument("--felz-sigma", type=float)
    ps.add_argument("--felz-min-size", type=int)
    ps.add_argument("--unknown-threshold", type=float,
                    help="similarities below this go to the unknown class")
    g = ps.add_mutually_exclusive_group()
    g.add_argument("--exact", dest="approx", action="store_false",
                   help="exact retrieval (default)")
    g.add_argument("--approx", dest="approx", action="store_true",
                   help="HNSW retrieval")
    ps.set_defaults(approx=False)
    ps.add_argument("--ef-search", type=_in_range(int, 1, 10**6))
    ps.add_argument("--aggregation", choices=inference.AGGREGATIONS)
    ps.add_argument("--save-color", action="store_true",
                    help="also write a color-mapped PNG per image")
    ps.add_argument("--save-regions", action="store_true",
                    help="also export the superpixel partition as FDT1")
    ps.add_argument("--threads", type=_in_range(int, 1, 256), default=1)
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_segment)

    pe = sub.add_parser("eval", help="mIoU of predictions vs ground truth")
    pe.add_argument("--pred", required=True)
    pe.add_argument("--gt", required=True)
    pe.add_argument("--categories", required=True)
    pe.add_argument("--ignore-label", type=int)
    pe.add_argument("--unknown", action="store_true",
                    help="score the 255 sentinel as an extra class")
    pe.set_defaults(func=cmd_eval)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ProtosegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
