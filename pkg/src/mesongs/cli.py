"""Command-line interface.

Subcommands: encode, decode, inspect, eval, prune-curve. Exit codes: 0 on
success, 2 for argument errors, 1 for processing errors (unreadable or
corrupt files, pipeline failures).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .container import EncoderConfig, decode, encode, inspect
from .errors import CorruptStreamError, DataError, FormatError, PipelineError
from .gaussian_model import load_cameras, load_ply, ply_nbytes, save_ply
from .metrics import QualityReport, psnr, ssim
from .pruning import compute_importance, quantile_curve
from .renderer import render
from .synthetic import synthetic_scene


def _add_scene_source(p, needs_output=False):
    p.add_argument("--input", help="input checkpoint PLY")
    p.add_argument("--synthetic", type=int, metavar="N",
                   help="use a generated N-Gaussian scene instead of --input")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for the generator and the encoder (default 0)")
    if needs_output:
        p.add_argument("--output", required=True, help="output path")


def _build_parser():
    ap = argparse.ArgumentParser(
        prog="mesongs",
        description="Compression codec for 3D Gaussian splatting scenes.")
    sub = ap.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="compress a scene to a container")
    _add_scene_source(enc, needs_output=True)
    enc.add_argument("--cameras", help="training cameras JSON (needed when tau > 0)")
    enc.add_argument("--tau", type=float, default=0.66,
                     help="prune fraction in [0, 1) (default 0.66)")
    enc.add_argument("--beta", type=float, default=0.1,
                     help="volume-score exponent (default 0.1)")
    enc.add_argument("--depth", type=int, default=12,
                     help="octree depth (default 12)")
    enc.add_argument("--bits", type=int, default=8,
                     help="quantization bit width (default 8)")
    enc.add_argument("--block", type=int, default=8192,
                     help="quantization block length (default 8192)")
    enc.add_argument("--codebook", type=int, default=4096,
                     help="VQ codebook size (default 4096)")
    enc.add_argument("--vq-iters", type=int, default=10,
                     help="VQ training passes (default 10)")
    enc.add_argument("--raht-scales", choices=("auto", "on", "off"),
                     default="auto",
                     help="apply the transform to scale channels (default auto)")
    enc.add_argument("--threads", type=int, default=1,
                     help="worker cap for per-camera scoring (default 1)")

    dec = sub.add_parser("decode", help="decompress a container to PLY")
    dec.add_argument("--input", required=True, help="container file")
    dec.add_argument("--output", required=True, help="output PLY path")

    ins = sub.add_parser("inspect", help="print header and section sizes")
    ins.add_argument("--input", required=True, help="container file")

    ev = sub.add_parser("eval", help="compare renders of original vs decoded")
    _add_scene_source(ev)
    ev.add_argument("--compressed", required=True, help="container file")
    ev.add_argument("--cameras", help="evaluation cameras JSON")
    ev.add_argument("--views", type=int, default=4,
                    help="number of views to evaluate (default 4)")
    ev.add_argument("--dump-images", metavar="DIR",
                    help="write rendered PNG pairs into DIR")
    ev.add_argument("--csv", help="also write the CSV report to this path")
    ev.add_argument("--threads", type=int, default=1)

    pc = sub.add_parser("prune-curve",
                        help="cumulative importance share of the least important x%%")
    _add_scene_source(pc)
    pc.add_argument("--cameras", help="training cameras JSON")
    pc.add_argument("--beta", type=float, default=0.1)
    pc.add_argument("--output", help="CSV path (default: stdout)")
    pc.add_argument("--threads", type=int, default=1)
    return ap


def _load_scene(args, parser, want_cameras):
    """Resolve --input/--synthetic [+ --cameras] to (cloud, cameras, input_bytes)."""
    if (args.input is None) == (args.synthetic is None):
        parser.error("exactly one of --input or --synthetic is required")
    if args.synthetic is not None:
        if args.synthetic < 1:
            parser.error("--synthetic must be a positive Gaussian count")
        cloud, train, test = synthetic_scene(args.synthetic, args.seed)
        cameras = train if want_cameras == "train" else test
        nbytes = ply_nbytes(cloud)
    else:
        cloud = load_ply(args.input)
        cameras = None
        nbytes = os.path.getsize(args.input)
    if getattr(args, "cameras", None):
        cameras = load_cameras(args.cameras)
    return cloud, cameras, nbytes


def _cmd_encode(args, parser):
    cloud, cameras, _ = _load_scene(args, parser, want_cameras="train")
    cfg = EncoderConfig(tau=args.tau, beta=args.beta, depth=args.depth,
                        bit_width=args.bits, block_length=args.block,
                        codebook_size=args.codebook, vq_iters=args.vq_iters,
                        raht_scales=args.raht_scales, seed=args.seed)
    if cfg.tau > 0 and not cameras:
        parser.error("--tau > 0 requires --cameras (or --synthetic)")
    blob = encode(cloud, cameras=cameras, config=cfg, threads=args.threads)
    with open(args.output, "wb") as fh:
        fh.write(blob)
    print(f"encoded {len(cloud)} Gaussians -> {len(blob)} bytes ({args.output})")
    return 0


def _cmd_decode(args):
    with open(args.input, "rb") as fh:
        cloud = decode(fh.read())
    save_ply(cloud, args.output)
    print(f"decoded {len(cloud)} Gaussians -> {args.output}")
    return 0


def _cmd_inspect(args):
    with open(args.input, "rb") as fh:
        print(inspect(fh.read()).to_text())
    return 0


def _dump_png(image, path):
    from PIL import Image
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def _cmd_eval(args, parser):
    cloud, cameras, input_bytes = _load_scene(args, parser, want_cameras="test")
    if not cameras:
        parser.error("eval requires --cameras (or --synthetic)")
    if args.views < 1:
        parser.error("--views must be >= 1")
    cameras = cameras[: args.views]
    with open(args.compressed, "rb") as fh:
        blob = fh.read()
    decoded = decode(blob)

    if args.dump_images:
        os.makedirs(args.dump_images, exist_ok=True)
    view_psnr, view_ssim = [], []
    for i, cam in enumerate(cameras):
        ref = render(cloud, cam).image
        got = render(decoded, cam).image
        view_psnr.append(psnr(ref, got))
        view_ssim.append(ssim(ref, got))
        if args.dump_images:
            _dump_png(ref, os.path.join(args.dump_images, f"view{i:02d}_original.png"))
            _dump_png(got, os.path.join(args.dump_images, f"view{i:02d}_decoded.png"))

    report = QualityReport(view_psnr=tuple(view_psnr), view_ssim=tuple(view_ssim),
                           input_bytes=input_bytes, compressed_bytes=len(blob))
    print(report.to_table())
    print()
    print(report.to_csv(), end="")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    return 0


def _cmd_prune_curve(args, parser):
    cloud, cameras, _ = _load_scene(args, parser, want_cameras="train")
    if not cameras:
        parser.error("prune-curve requires --cameras (or --synthetic)")
    scores = compute_importance(cloud, cameras, beta=args.beta,
                                threads=args.threads)
    x, y = quantile_curve(scores)
    lines = ["x_percent,y_percent"]
    lines += [f"{xi:.6f},{yi:.6f}" for xi, yi in zip(x, y)]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "encode":
            return _cmd_encode(args, parser)
        if args.command == "decode":
            return _cmd_decode(args)
        if args.command == "inspect":
            return _cmd_inspect(args)
        if args.command == "eval":
            return _cmd_eval(args, parser)
        if args.command == "prune-curve":
            return _cmd_prune_curve(args, parser)
        parser.error(f"unknown command {args.command}")
    except (FormatError, DataError, CorruptStreamError, PipelineError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
