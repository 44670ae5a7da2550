"""Command-line interface: ``pgft train | encode | decode | eval | weights``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .codec import (BitstreamError, Bitstream, CodecError, ModelMismatchError, bits_per_pixel,
                    classify, decode, encode)
from .images import center_crop, list_images, load_gray, save_gray
from .metrics import RdCurve, bd_rate, ms_ssim, psnr, ssim, write_csv
from .model import MODES, ModelFormatError, TrainConfig, TrainedModel
from .tables import delta_for_quality

log = logging.getLogger("pgft")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MISMATCH = 0, 2, 3, 4
DEFAULT_QUALITIES = (20, 30, 40, 50, 60, 70, 80)


class UsageError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("PGFT_THREADS", "")
    try:
        cap = int(raw) if raw else os.cpu_count() or 1
    except ValueError:
        raise UsageError(f"PGFT_THREADS must be an integer, got {raw!r}") from None
    return max(1, min(cap, os.cpu_count() or 1))


def _apply_thread_cap() -> None:
    import numba

    numba.set_num_threads(min(worker_count(), numba.config.NUMBA_NUM_THREADS))


def _qualities(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad quality list {text!r}") from None
    if not values or any(not 1 <= v <= 100 for v in values):
        raise argparse.ArgumentTypeError("qualities must be integers in 1..100")
    return values


def _load_saliency(path) -> np.ndarray:
    p = Path(path)
    if p.suffix == ".npy":
        s = np.load(p).astype(float)
    else:
        s = load_gray(p).astype(float) / 255.0
    return s


def _check_config(args, model: TrainedModel) -> None:
    """Optional flags given on encode/decode must agree with the model."""
    cfg = model.config
    for flag, value in (("block_side", cfg.block_side), ("classes", cfg.n_c),
                        ("mode", cfg.mode), ("topology", cfg.topology)):
        given = getattr(args, flag, None)
        if given is not None and given != value:
            raise ModelMismatchError(f"--{flag.replace('_', '-')} {given} disagrees with the "
                                     f"model ({value})")


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    try:
        cfg = TrainConfig(block_side=args.block_side, n_c=args.classes, topology=args.topology,
                          mode=args.mode, weight_rule=args.rule, transform=args.transform,
                          seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    from .graphlearn import train_model

    paths = list_images(args.train_dir)
    images, maps = [], []
    for p in paths:
        try:
            img = load_gray(p)
        except (OSError, ValueError) as exc:
            print(f"warning: skipping {p.name}: {exc}", file=sys.stderr)
            continue
        if cfg.weight_rule == "saliency":
            if args.saliency_map is None:
                raise UsageError("--rule saliency needs --saliency-map DIR")
            candidates = sorted(Path(args.saliency_map).glob(p.stem + ".*"))
            if not candidates:
                print(f"warning: skipping {p.name}: no saliency map", file=sys.stderr)
                continue
            maps.append(_load_saliency(candidates[0]))
        images.append(img)
    if not images:
        print(f"error: no usable images in {args.train_dir}", file=sys.stderr)
        return EXIT_DATA
    t0 = time.perf_counter()
    model = train_model(images, cfg, maps if maps else None)
    elapsed = time.perf_counter() - t0
    notes = model.notes
    print(f"trained on {len(images)} images in {elapsed:.2f} s")
    for i, (count, hist) in enumerate(zip(notes["counts"], notes["history"])):
        if i in notes["fallback"]:
            print(f"class {i}: {count} blocks, too few to learn; using the DCT graph")
            continue
        traj = " -> ".join(f"{v:.6g}" for v in _thin(hist))
        print(f"class {i}: {count} blocks, objective {traj} ({len(hist) - 1} steps)")
    model.save(args.out)
    print(f"model written to {args.out} (hash {model.hash:016x})")
    return EXIT_OK


def _thin(hist, keep: int = 6) -> list:
    if len(hist) <= keep:
        return list(hist)
    idx = np.unique(np.linspace(0, len(hist) - 1, keep).round().astype(int))
    return [hist[i] for i in idx]


# ---------------------------------------------------------------- encode / decode


def cmd_encode(args) -> int:
    model = TrainedModel.load(args.model)
    _check_config(args, model)
    img = load_gray(args.image)
    side = model.block_side
    cropped = center_crop(img, side)
    if cropped.shape != img.shape:
        print(f"cropped {img.shape[1]}x{img.shape[0]} to {cropped.shape[1]}x{cropped.shape[0]}")
    sal = None
    if args.saliency_map is not None:
        sal = center_crop(_load_saliency(args.saliency_map), side)
    qualities = args.quality
    if len(qualities) != 1:
        raise UsageError("encode takes a single --quality")
    t0 = time.perf_counter()
    bs = encode(cropped, model, qualities[0], sal, step_from=args.class_step)
    elapsed = time.perf_counter() - t0
    data = bs.to_bytes()
    Path(args.out).write_bytes(data)
    print(f"{args.out}: {len(data)} bytes, {bits_per_pixel(bs):.4f} bpp, "
          f"encode {elapsed:.3f} s")
    return EXIT_OK


def cmd_decode(args) -> int:
    model = TrainedModel.load(args.model)
    _check_config(args, model)
    data = Path(args.input).read_bytes()
    t0 = time.perf_counter()
    img = decode(Bitstream.from_bytes(data), model)
    elapsed = time.perf_counter() - t0
    save_gray(args.out, img)
    print(f"{args.out}: {img.shape[1]}x{img.shape[0]}, "
          f"{8.0 * len(data) / img.size:.4f} bpp, decode {elapsed:.3f} s")
    return EXIT_OK


# ---------------------------------------------------------------- eval


def _eval_image(job):
    name, path, model_bytes, qualities, step_from = job
    model = TrainedModel.from_bytes(model_bytes)
    anchor = TrainedModel.dct_baseline(model.block_side)
    img = center_crop(load_gray(path), model.block_side)
    rows = []
    for codec_name, m in (("jpeg-dct", anchor), ("learned", model)):
        for q in qualities:
            bs = encode(img, m, q, step_from=step_from)
            rec = decode(bs, m)
            rows.append({"image": name, "codec": codec_name, "quality": q,
                         "bpp": bits_per_pixel(bs), "psnr": psnr(img, rec),
                         "ssim": ssim(img, rec), "msssim": ms_ssim(img, rec)})
    return rows


def bd_table(rows, metric: str = "msssim", codec: str = "learned",
             anchor: str = "jpeg-dct") -> dict[str, float]:
    """Per-image BD-rate of ``codec`` against ``anchor`` from CSV-style rows."""
    curves: dict = {}
    for r in rows:
        curves.setdefault((r["image"], r["codec"]), ([], []))
        curves[(r["image"], r["codec"])][0].append(r["bpp"])
        curves[(r["image"], r["codec"])][1].append(r[metric])
    out = {}
    for (image, name), (rates, values) in curves.items():
        if name != codec:
            continue
        a_rates, a_values = curves[(image, anchor)]
        out[image] = bd_rate(RdCurve(a_rates, a_values, metric, image, anchor),
                             RdCurve(rates, values, metric, image, codec))
    return out


def summarize(bd: dict[str, float]) -> dict[str, float]:
    v = np.array(list(bd.values()))
    return {"Avg": float(v.mean()), "STD": float(v.std()), "Min": float(v.min()),
            "Max": float(v.max())}


def cmd_eval(args) -> int:
    model_bytes = Path(args.model).read_bytes()
    TrainedModel.from_bytes(model_bytes)  # fail early on a bad model
    paths = list_images(args.test_dir)
    if not paths:
        print(f"error: no images in {args.test_dir}", file=sys.stderr)
        return EXIT_DATA
    qualities = args.quality or list(DEFAULT_QUALITIES)
    if len(qualities) < 4:
        raise UsageError("BD-rate needs at least 4 qualities")
    jobs = [(p.stem, p, model_bytes, qualities, args.class_step) for p in paths]
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_eval_image, jobs))
    else:
        results = [_eval_image(j) for j in jobs]
    rows = [r for res in results for r in res]
    write_csv(args.out, rows)
    bd = bd_table(rows)
    print(f"MS-SSIM BD-rate vs jpeg-dct (%), {len(bd)} images; RD points in {args.out}")
    width = max(len(k) for k in bd)
    for image, value in bd.items():
        print(f"  {image:<{width}}  {value:8.3f}")
    stats = summarize(bd)
    print("  " + "  ".join(f"{k} {v:.3f}" for k, v in stats.items()))
    return EXIT_OK


# ---------------------------------------------------------------- weights


def cmd_weights(args) -> int:
    from .perceptual import weight_map

    img = load_gray(args.image)
    sal = _load_saliency(args.saliency_map) if args.saliency_map is not None else None
    if args.rule == "saliency" and sal is None:
        raise UsageError("--rule saliency needs --saliency-map PATH")
    quality = args.quality[0] if args.quality else 50
    side = args.block_side or 8
    wm = weight_map(img, args.rule, delta_for_quality(quality, side), sal)
    q = wm.weights
    span = q.max() - q.min()
    norm = np.zeros_like(q) if span <= 0 else (q - q.min()) / span
    out = Path(args.out)
    save_gray(out, np.rint(255 * norm).astype(np.uint8))
    print(f"{out}: weights in [{q.min():.4g}, {q.max():.4g}], mean {q.mean():.4g}, "
          f"{wm.clamped} clamped")
    if args.model is not None:
        model = TrainedModel.load(args.model)
        cropped = center_crop(img, model.block_side)
        sal_c = center_crop(sal, model.block_side) if sal is not None else None
        labels = classify(cropped, model, quality, sal_c).labels
        tiles = np.kron(labels, np.ones((model.block_side, model.block_side)))
        shade = tiles / max(model.n_c - 1, 1)
        overlay = np.rint(0.6 * cropped + 0.4 * 255 * shade).astype(np.uint8)
        over_path = out.with_name(out.stem + "_classes" + out.suffix)
        save_gray(over_path, overlay)
        counts = np.bincount(labels.ravel(), minlength=model.n_c)
        print(f"{over_path}: class counts {counts.tolist()}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgft", description="Perceptual graph transform codec")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="learn a model from a directory of images")
    t.add_argument("train_dir")
    t.add_argument("--block-side", type=int, default=8)
    t.add_argument("--classes", type=int, default=2)
    t.add_argument("--topology", choices=("full", "grid8", "grid4"), default="full")
    t.add_argument("--mode", choices=MODES, default="nonsep")
    t.add_argument("--rule", choices=("ssim", "saliency"), default="ssim")
    t.add_argument("--transform", choices=("iagft", "gft"), default="iagft")
    t.add_argument("--saliency-map", metavar="DIR")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("encode", help="compress one image")
    e.add_argument("image")
    e.add_argument("--model", required=True)
    e.add_argument("--quality", type=_qualities, default=[50])
    e.add_argument("--saliency-map", metavar="PATH")
    e.add_argument("--class-step", choices=("quality", "training"), default="quality",
                   help="quantization step used to classify blocks")
    e.add_argument("--out", required=True)
    d = sub.add_parser("decode", help="decompress a .pgc file")
    d.add_argument("input")
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True)
    for sp, fn in ((e, cmd_encode), (d, cmd_decode)):
        sp.add_argument("--block-side", type=int)
        sp.add_argument("--classes", type=int)
        sp.add_argument("--mode", choices=MODES)
        sp.add_argument("--topology", choices=("full", "grid8", "grid4"))
        sp.set_defaults(func=fn)

    v = sub.add_parser("eval", help="RD sweep and BD-rate against the DCT anchor")
    v.add_argument("test_dir")
    v.add_argument("--model", required=True)
    v.add_argument("--quality", type=_qualities)
    v.add_argument("--class-step", choices=("quality", "training"), default="quality")
    v.add_argument("--out", required=True, help="CSV of RD points")
    v.set_defaults(func=cmd_eval)

    w = sub.add_parser("weights", help="render a perceptual weight map")
    w.add_argument("image")
    w.add_argument("--rule", choices=("ssim", "saliency"), default="ssim")
    w.add_argument("--saliency-map", metavar="PATH")
    w.add_argument("--quality", type=_qualities)
    w.add_argument("--block-side", type=int)
    w.add_argument("--model", help="also write a class-map overlay")
    w.add_argument("--out", required=True)
    w.set_defaults(func=cmd_weights)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_thread_cap()
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (BitstreamError, ModelFormatError, CodecError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
