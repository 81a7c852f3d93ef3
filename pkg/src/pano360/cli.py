"""``pano360`` command line.

Every subcommand accepts ``--config``, ``--seed``, ``--steps``,
``--guidance``, ``--out-dir`` and ``--checkpoint``; flags override values
read from the config file. ``PANO360_THREADS`` caps torch worker threads.
"""
import argparse
import logging
import math
from pathlib import Path
import sys

from .checkpoint import load_checkpoint
from .data import ingest_perspective, refine_poles
from .edit import EditRequest, inpaint, outpaint
from .errors import DomainError, FormatError
from .geometry import (FACE_NAMES, YawAngle, erp_to_cubemap, perspective_to_erp,
                       yaw_rotate_erp)
from .io import read_mask_png, read_png, write_mask_png, write_png
from .metrics import aggregate, image_report, rotation_consistency
from .model import Condition, make_codec, sample
from .train import load_run_config, run_train, set_threads

log = logging.getLogger("pano360")

IMAGE_SUFFIXES = (".png",)


def _common(p):
    p.add_argument("--config", help="INI run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="optimizer steps (train) or sampling steps")
    p.add_argument("--guidance", type=float)
    p.add_argument("--out-dir", default=".", help="directory for outputs (default: .)")
    p.add_argument("--checkpoint", help="model checkpoint")


def build_parser():
    parser = argparse.ArgumentParser(prog="pano360", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from procedural data")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample panoramas")
    _common(p)
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("project", help="split a panorama into six cube faces")
    _common(p)
    p.add_argument("image")
    p.add_argument("--face-size", type=int)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("rotate", help="yaw-rotate a panorama")
    _common(p)
    p.add_argument("image")
    p.add_argument("--degrees", type=float, required=True)
    p.add_argument("--continuous", action="store_true", help="resample instead of snapping to columns")
    p.set_defaults(func=cmd_rotate)

    p = sub.add_parser("refine", help="re-fill the polar regions of a panorama")
    _common(p)
    p.add_argument("image")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("inpaint", help="regenerate the masked-out region of a panorama")
    _common(p)
    p.add_argument("image")
    p.add_argument("--mask", required=True, help="PNG, nonzero = keep")
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--replace-until", type=float, default=0.4)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("outpaint", help="complete a panorama from a square 90-degree view")
    _common(p)
    p.add_argument("image")
    p.add_argument("--face", default="front", choices=FACE_NAMES[:4])
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--replace-until", type=float, default=0.4)
    p.set_defaults(func=cmd_outpaint)

    p = sub.add_parser("eval", help="metric report for panorama PNGs")
    _common(p)
    p.add_argument("inputs", nargs="+", help="PNG files or directories")
    p.add_argument("--class-id", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    return parser


def _out_dir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model(args):
    if not args.checkpoint:
        raise DomainError("--checkpoint is required for this command")
    path = Path(args.checkpoint)
    if not path.exists():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    model, _ = load_checkpoint(path)
    return model, make_codec(model.config)


def _sampling(args, default_g):
    cfg = load_run_config(args.config, {"seed": args.seed})
    steps = args.steps if args.steps is not None else cfg.sample_steps
    g = args.guidance if args.guidance is not None else default_g(cfg)
    if steps < 1:
        raise DomainError("--steps must be >= 1")
    return cfg, steps, g


def cmd_train(args):
    cfg = load_run_config(args.config, {"seed": args.seed, "steps": args.steps})
    if args.guidance is not None:
        cfg.guidance_train = args.guidance
    out = _out_dir(args)
    ckpt = run_train(cfg, out, progress=lambda step, sums: log.info(
        "step %d total %.5g", step, sums["total"]))
    print(ckpt)


def cmd_generate(args):
    cfg, steps, g = _sampling(args, lambda c: c.guidance_infer)
    model, codec = _model(args)
    out = _out_dir(args)
    for i in range(args.count):
        img = sample(model, codec, Condition(args.class_id), steps, g, seed=cfg.seed + i)
        path = out / f"sample_{i:03d}.png"
        write_png(path, img)
        print(path)


def cmd_project(args):
    img = read_png(args.image)
    size = args.face_size or img.shape[1] // 4
    faces = erp_to_cubemap(img, size)
    out = _out_dir(args)
    for name, face in zip(FACE_NAMES, faces):
        write_png(out / f"face_{name}.png", face)
    print(out)


def cmd_rotate(args):
    img = read_png(args.image)
    w = img.shape[1]
    rad = math.radians(args.degrees)
    a = YawAngle(rad) if args.continuous else YawAngle(rad, w)
    path = _out_dir(args) / "rotated.png"
    write_png(path, yaw_rotate_erp(img, a, quantized=not args.continuous))
    print(path)


def cmd_refine(args):
    path = _out_dir(args) / "refined.png"
    write_png(path, refine_poles(read_png(args.image)))
    print(path)


def cmd_inpaint(args):
    img = read_png(args.image)
    mask = read_mask_png(args.mask)
    cfg, steps, g = _sampling(args, lambda c: c.guidance_train)
    model, codec = _model(args)
    req = EditRequest(img, mask, Condition(args.class_id), args.replace_until)
    path = _out_dir(args) / "inpainted.png"
    write_png(path, inpaint(model, codec, req, steps, g, seed=cfg.seed))
    print(path)


def cmd_outpaint(args):
    view = ingest_perspective(read_png(args.image))
    cfg, steps, g = _sampling(args, lambda c: c.guidance_train)
    model, codec = _model(args)
    partial, footprint = perspective_to_erp(view, args.face, model.config.width, model.config.height)
    out = _out_dir(args)
    result = outpaint(model, codec, partial, footprint, Condition(args.class_id), steps, g,
                      seed=cfg.seed, replace_until=args.replace_until)
    write_png(out / "outpainted.png", result)
    write_mask_png(out / "footprint.png", footprint)
    print(out / "outpainted.png")


def _collect(inputs):
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        elif p.exists():
            files.append(p)
        else:
            raise FileNotFoundError(f"no such file or directory: {p}")
    if not files:
        raise DomainError("no PNG images found in " + ", ".join(map(str, inputs)))
    return files


def cmd_eval(args):
    files = _collect(args.inputs)
    reports = [image_report(read_png(f), name=f.name) for f in files]
    summary = aggregate(reports)
    if args.checkpoint:
        cfg, steps, g = _sampling(args, lambda c: c.guidance_infer)
        model, codec = _model(args)
        w = model.config.token_shape[1]
        summary.rotation_psnr = rotation_consistency(model, codec, args.class_id,
                                                     [w // 4, w // 2], cfg.seed, steps, g)
    lines = [r.to_line() for r in reports] + [summary.to_line()]
    (_out_dir(args) / "metrics.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    set_threads()
    try:
        args.func(args)
    except FileNotFoundError as exc:
        print(f"pano360: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, FormatError) as exc:
        print(f"pano360: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
