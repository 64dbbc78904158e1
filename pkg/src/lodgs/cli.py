"""``lodgs`` command line: generate, train, render, eval, gradcheck.

Exit codes: 0 on success, 1 on usage errors (bad flags or flag values),
2 on data errors (missing/corrupt files, inconsistent inputs).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from .dataset import (DatasetManifest, build_toy_scene, make_multilevel, make_multiscale,
                      orbit_cameras, perturb_scene, write_pfm, write_ppm)
from .errors import LodGSError
from .evaluation import evaluate, training_max_rates, write_eval_csv
from .grad import fd_check, squared_error_loss
from .metrics import IDENTICAL
from .raster import RenderConfig, render, supersample_render
from .scenefile import decode_scene, encode_scene, load_scene, save_scene
from .train import LR_GROUPS, VARIANTS, TrainConfig, train, write_loss_csv

log = logging.getLogger("lodgs")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _number_list(text: str) -> list:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _render_flags(p):
    p.add_argument("--mode2d", choices=("ewa", "dilation", "none"), default="ewa")
    p.add_argument("--mode3d", choices=("lod", "mip_fixed", "none"), default="lod")
    p.add_argument("--supersample", type=int, default=0, metavar="F",
                   help="render unfiltered at F x resolution and box-average (overrides modes)")
    p.add_argument("--workers", type=int, default=1, help="tile-parallel worker threads")


def build_parser() -> _Parser:
    parser = _Parser(prog="lodgs", description="LOD-aware Gaussian splatting toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="synthesize a toy scene and its multi-scale/level dataset")
    g.add_argument("--kind", choices=("checker_plane", "ring", "random"), default="checker_plane")
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--views", type=int, default=8)
    grp = g.add_mutually_exclusive_group()
    grp.add_argument("--scales", type=_number_list, help="downscale factors, e.g. 1,2,4,8")
    grp.add_argument("--levels", type=_number_list,
                     help="camera distances as multiples of the scene extent, e.g. 2,4,8")
    g.add_argument("--resolution", type=int, default=64)
    g.add_argument("--focal", type=float, default=None, help="focal length in pixels (default: resolution)")
    g.add_argument("--radius", type=float, default=3.0,
                   help="multi-scale orbit radius as a multiple of the scene extent")
    g.add_argument("--elevation", type=float, default=30.0)
    g.add_argument("--ss", type=int, default=8, help="supersampling factor of the ground truth")
    g.add_argument("--test-every", type=int, default=8)
    g.add_argument("--l", type=int, default=20, help="LOD basis size")
    g.add_argument("--init-noise", type=float, nargs=2, metavar=("POS", "COLOR"),
                   help="also write init.lodgs, the GT perturbed by this position/color noise")
    g.add_argument("--previews", action="store_true", help="also write 8-bit PPM previews")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="optimize a scene against a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--init", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--iters", type=int, default=2000)
    t.add_argument("--ablation", choices=tuple(VARIANTS), default="full")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--lambda-ssim", type=float, default=0.2)
    t.add_argument("--prune-interval", type=int, default=0)
    t.add_argument("--loss-csv", default=None)
    t.add_argument("--eval-every", type=int, default=0,
                   help="with --loss-csv, record test PSNR every N iterations")
    t.add_argument("--workers", type=int, default=1)
    for group in LR_GROUPS:
        t.add_argument(f"--lr-{group.replace('_', '-')}", type=float, default=None, dest=f"lr_{group}")

    r = sub.add_parser("render", help="render one manifest camera")
    r.add_argument("--scene", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--camera-index", type=int, default=0)
    r.add_argument("--out", required=True, help="output image, .pfm or .ppm")
    _render_flags(r)

    e = sub.add_parser("eval", help="per-scale/per-level PSNR and SSIM table")
    e.add_argument("--scene", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--ablation", choices=tuple(VARIANTS), default=None,
                   help="use the filters of a training variant (overrides --mode2d/--mode3d)")
    e.add_argument("--out", required=True)
    _render_flags(e)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    c.add_argument("--scene", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--camera-index", type=int, default=0)
    c.add_argument("--h", type=float, default=1e-5)
    c.add_argument("--samples", type=int, default=200)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--mode2d", choices=("ewa", "dilation", "none"), default="ewa")
    c.add_argument("--mode3d", choices=("lod", "mip_fixed", "none"), default="lod")
    return parser


def _positive(args, *names):
    for name in names:
        if getattr(args, name) < 1:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 1")


def _nonnegative(args, *names):
    for name in names:
        if getattr(args, name) < 0:
            raise UsageError(f"--{name.replace('_', '-')} must be >= 0")


def _camera(manifest, index: int):
    if not 0 <= index < len(manifest.views):
        raise UsageError(f"--camera-index {index} out of range (manifest has {len(manifest.views)} views)")
    return manifest.views[index]


def _config(args) -> RenderConfig:
    return RenderConfig(mode_2d=args.mode2d, mode_3d=args.mode3d, workers=args.workers)


def cmd_generate(args) -> int:
    _positive(args, "n", "views", "resolution", "ss", "l")
    _nonnegative(args, "test_every")
    # round-trip through the file format so the GT images match the stored scene exactly
    scene = decode_scene(encode_scene(build_toy_scene(args.kind, args.n, args.seed, args.l)))
    extent = max(scene.extent(), 1e-6)
    focal = args.focal or float(args.resolution)
    if args.levels:
        manifest = make_multilevel(scene, [lv * extent for lv in args.levels], focal, args.views,
                                   args.resolution, args.elevation, args.ss, args.test_every)
    else:
        factors = [int(k) for k in (args.scales or [1, 2, 4, 8])]
        if any(k < 1 or args.resolution % k for k in factors):
            raise UsageError(f"--scales must be positive divisors of --resolution {args.resolution}")
        cams = orbit_cameras(args.views, args.radius * extent, focal, args.resolution, args.elevation)
        manifest = make_multiscale(cams, scene, factors, args.ss, args.test_every)
    out = Path(args.out)
    path = manifest.save(out, previews=args.previews)
    scene.nu_ref = manifest.nu_ref
    save_scene(out / "gt.lodgs", scene)
    if args.init_noise:
        pos, col = args.init_noise
        save_scene(out / "init.lodgs", perturb_scene(scene, pos, col, args.seed))
    print(f"wrote {path} ({len(manifest.views)} views) and {out / 'gt.lodgs'} ({len(scene)} primitives)")
    return 0


def cmd_train(args) -> int:
    _nonnegative(args, "iters", "prune_interval", "eval_every")
    _positive(args, "workers")
    manifest = DatasetManifest.load(args.data)
    scene = load_scene(args.init)
    rates = {g: getattr(args, f"lr_{g}") for g in LR_GROUPS if getattr(args, f"lr_{g}") is not None}
    base_rates = TrainConfig(learning_rates={}).learning_rates
    base_rates["position"] *= manifest.scene_extent
    base_rates.update(rates)
    try:
        config = TrainConfig(iterations=args.iters, lambda_ssim=args.lambda_ssim,
                             learning_rates=base_rates, seed=args.seed, ablation=args.ablation,
                             prune_interval=args.prune_interval,
                             render=RenderConfig(workers=args.workers))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    eval_fn = None
    if args.eval_every and manifest.split("test"):
        eval_cfg = RenderConfig(*VARIANTS[args.ablation], workers=args.workers)
        eval_fn = lambda s: evaluate(s, manifest, eval_cfg)[-1].psnr  # noqa: E731
    result = train(scene, manifest, config, eval_every=args.eval_every, eval_fn=eval_fn)
    save_scene(args.out, result.scene)
    if args.loss_csv:
        write_loss_csv(args.loss_csv, result.losses, result.evals)
    final = f", final loss {result.losses[-1]:.6g}" if result.losses else ""
    print(f"trained {args.iters} iterations ({args.ablation}){final}; wrote {args.out}")
    return 0


def cmd_render(args) -> int:
    _nonnegative(args, "supersample")
    _positive(args, "workers")
    manifest = DatasetManifest.load(args.data)
    scene = load_scene(args.scene)
    view = _camera(manifest, args.camera_index)
    suffix = Path(args.out).suffix.lower()
    if suffix not in (".pfm", ".ppm"):
        raise UsageError(f"--out must end in .pfm or .ppm, got {args.out!r}")
    config = _config(args)
    if args.supersample:
        image = supersample_render(scene, view.camera, config, args.supersample).image
    else:
        rates = training_max_rates(scene, manifest) if config.mode_3d == "mip_fixed" else None
        image = render(scene, view.camera, config, max_rates=rates).image
    (write_pfm if suffix == ".pfm" else write_ppm)(args.out, image)
    print(f"wrote {args.out} ({view.camera.width}x{view.camera.height})")
    return 0


def cmd_eval(args) -> int:
    _nonnegative(args, "supersample")
    _positive(args, "workers")
    manifest = DatasetManifest.load(args.data)
    scene = load_scene(args.scene)
    if args.ablation:
        args.mode2d, args.mode3d = VARIANTS[args.ablation]
    if not manifest.split(args.split):
        raise LodGSError(f"{args.data}: no {args.split!r} views")
    rows = evaluate(scene, manifest, _config(args), args.split, args.supersample)
    write_eval_csv(args.out, rows)
    for r in rows:
        psnr = "identical" if r.psnr == IDENTICAL else f"{r.psnr:.3f}"
        ssim = "n/a" if math.isnan(r.ssim) else f"{r.ssim:.4f}"
        print(f"{r.group:>10}  PSNR {psnr:>9}  SSIM {ssim}")
    return 0


def cmd_gradcheck(args) -> int:
    _positive(args, "samples")
    if not args.h > 0:
        raise UsageError("--h must be positive")
    manifest = DatasetManifest.load(args.data)
    scene = load_scene(args.scene)
    view = _camera(manifest, args.camera_index)
    config = RenderConfig(mode_2d=args.mode2d, mode_3d=args.mode3d)
    rates = training_max_rates(scene, manifest) if config.mode_3d == "mip_fixed" else None
    report = fd_check(scene, view.camera, config, squared_error_loss(manifest.image(view)),
                      h=args.h, samples=args.samples, seed=args.seed, tol=args.tol, max_rates=rates)
    print(report.table())
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (LodGSError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
