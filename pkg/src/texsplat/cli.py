"""Command-line surface: render, optimize, paint, retexture, sweep, synth, metrics.

Exit codes: 0 on success, 2 for validation or I/O failures, 3 for numerical
failures (non-finite loss). All commands are deterministic under --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics, sceneio
from .atlas import TextureAtlas, init_from_sh0, reinit_resample, texel_size_for_budget
from .editing import PATTERNS, EditImage, paint, retexture
from .optim import NonFiniteLossError, OptimizeConfig, heldout_psnr, optimize, write_log_csv
from .renderer import Camera, render
from .scene import Scene
from .sceneio import (
    DatasetError,
    PlyFormatError,
    SceneFormatError,
    SynthConfig,
    load_dataset,
    load_split,
    make_synthetic,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _load_scene_file(path: str) -> Scene:
    p = Path(path)
    if not p.exists():
        raise CommandError(f"scene not found: {p}")
    if p.suffix == ".ply":
        return sceneio.import_splat_ply(p)
    return sceneio.load_scene(p)


def _apply_precision(scene: Scene, precision: str) -> Scene:
    if precision == "f32":
        for name in ("positions", "scales", "opacity_logits", "sh_residual", "background"):
            setattr(scene, name, getattr(scene, name).astype(np.float32))
        scene.rotations = scene.rotations.astype(np.float32)
        if scene.atlas is not None:
            scene.atlas.texels = scene.atlas.texels.astype(np.float32)
    return scene


def _camera_from_file(path: str) -> Camera:
    p = Path(path)
    if not p.exists():
        raise CommandError(f"camera file not found: {p}")
    spec = json.loads(p.read_text())
    return sceneio.camera_from_gl(
        np.asarray(spec["transform_matrix"], dtype=np.float64),
        fov_x=float(spec["camera_angle_x"]),
        width=int(spec["width"]), height=int(spec["height"]),
        near=float(spec.get("near", 0.01)), far=float(spec.get("far", 100.0)),
    )


def _view_cameras(args) -> tuple[list[Camera], list[str], sceneio.DatasetManifest | None]:
    if args.camera:
        cam = _camera_from_file(args.camera)
        return [cam], ["view_0"], None
    if not args.dataset:
        raise CommandError("provide --dataset or --camera")
    manifest_path = Path(args.dataset) / f"transforms_{args.split}.json"
    manifest = load_dataset(manifest_path)
    return manifest.cameras, manifest.names, manifest


def _parse_views(spec: str | None, available: int) -> list[int]:
    if spec is None:
        return list(range(available))
    views = [int(v) for v in spec.split(",") if v != ""]
    for v in views:
        if not 0 <= v < available:
            raise CommandError(f"view index {v} out of range (have {available})")
    return views


def cmd_render(args) -> int:
    scene = _apply_precision(_load_scene_file(args.scene), args.precision)
    cameras, names, _ = _view_cameras(args)
    views = _parse_views(args.views, len(cameras))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def one(v: int):
        start = time.perf_counter()
        result = render(scene, cameras[v])
        elapsed = time.perf_counter() - start
        sceneio.write_image(out / f"{names[v]}.png", result.color)
        if args.depth:
            sceneio.write_depth_png(out / f"{names[v]}_depth.png", result.median_depth,
                                    cameras[v].near, cameras[v].far)
        return v, elapsed

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            timings = list(pool.map(one, views))
    else:
        timings = [one(v) for v in views]
    for v, elapsed in timings:
        print(f"view {v} ({names[v]}): {elapsed * 1e3:.1f} ms")
    return EXIT_OK


def cmd_optimize(args) -> int:
    if args.iters < 0:
        raise CommandError("--iters must be non-negative")
    if args.texels < 0:
        raise CommandError("--texels must be non-negative")
    scene = _load_scene_file(args.init_scene)
    root = Path(args.dataset)
    train, test = load_split(root)
    if len(train) < 1:
        raise CommandError("dataset has no training views")
    scene.background = np.asarray(train.background, dtype=np.float64)

    if scene.atlas is None:
        rho = texel_size_for_budget(scene.scales, args.texels)
        scene.atlas = TextureAtlas.allocate(scene.scales, rho)
        init_from_sh0(scene)
    elif args.texels != scene.atlas.total:
        reinit_resample(scene, budget=args.texels)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if test:
        sceneio.write_image(out / "heldout0_before.png", render(scene, test.cameras[0]).color)

    checkpoint = out / "checkpoint.gstx"
    sceneio.save_scene(scene, checkpoint)  # the initialized state is the first fallback

    def save_checkpoint(current, iteration):
        sceneio.save_scene(current, checkpoint)

    cfg = OptimizeConfig(iterations=args.iters, texel_budget=args.texels, seed=args.seed)
    try:
        rows = optimize(
            scene, train.cameras, train.images, cfg,
            heldout_cameras=test.cameras if test else None,
            heldout_targets=test.images if test else None,
            checkpoint_cb=save_checkpoint,
        )
    except NonFiniteLossError as exc:
        print(f"error: {exc}; last good checkpoint: {checkpoint}", file=sys.stderr)
        return EXIT_NUMERICAL

    sceneio.save_scene(scene, out / "scene.gstx")
    write_log_csv(rows, out / "log.csv")
    if test:
        sceneio.write_image(out / "heldout0_after.png", render(scene, test.cameras[0]).color)
        final = heldout_psnr(scene, test.cameras, test.images)
        print(f"held-out PSNR: {final:.2f} dB")
    print(f"scene written to {out / 'scene.gstx'}")
    return EXIT_OK


def cmd_paint(args) -> int:
    scene = _load_scene_file(args.scene)
    cameras, names, _ = _view_cameras(args)
    if not 0 <= args.view < len(cameras):
        raise CommandError(f"view index {args.view} out of range (have {len(cameras)})")
    camera = cameras[args.view]
    edit_path = Path(args.edit)
    if not edit_path.exists():
        raise CommandError(f"edit image not found: {edit_path}")
    img = sceneio.read_image(edit_path)
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise CommandError(f"edit image must be RGB or RGBA, got shape {img.shape}")
    if img.shape[2] == 3:
        img = np.concatenate([img, np.ones(img.shape[:2] + (1,))], axis=2)
    if img.shape[:2] != (camera.height, camera.width):
        raise CommandError(
            f"edit image size {img.shape[:2]} does not match view "
            f"({camera.height}, {camera.width})"
        )
    paint(scene, EditImage(rgba=img, camera=camera), depth_tol=args.depth_tol)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sceneio.save_scene(scene, out / "scene.gstx")
    sceneio.write_image(out / f"repaint_{names[args.view]}.png", render(scene, camera).color)
    print(f"painted scene written to {out / 'scene.gstx'}")
    return EXIT_OK


def cmd_retexture(args) -> int:
    scene = _load_scene_file(args.scene)
    if scene.atlas is None:
        raise CommandError("scene has no texture atlas; optimize or allocate first")
    retexture(scene, PATTERNS[args.pattern], zero_sh=args.zero_sh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sceneio.save_scene(scene, out / "scene.gstx")
    print(f"retextured scene written to {out / 'scene.gstx'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    root = Path(args.dataset)
    train, test = load_split(root)
    if test is None:
        raise CommandError("sweep needs a dataset with a held-out split")
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise CommandError(f"sweep needs meta.json under {root} (produced by synth)")
    meta = json.loads(meta_path.read_text())

    if args.iters < 0:
        raise CommandError("--iters must be non-negative")
    gaussians = [int(v) for v in args.gaussians.split(",")]
    texels = [int(v) for v in args.texels.split(",")]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    rows = [["gaussians", "texels", "psnr", "ssim", "seconds", "status"]]
    for g in gaussians:
        for t in texels:
            start = time.perf_counter()
            try:
                psnr_val, ssim_val = _sweep_cell(g, t, meta, train, test, args)
                status = "ok"
            except Exception as exc:  # record and continue with other cells
                psnr_val = ssim_val = float("nan")
                status = f"error: {exc}"
            seconds = time.perf_counter() - start
            rows.append([g, t, f"{psnr_val:.4f}", f"{ssim_val:.6f}",
                         f"{seconds:.2f}", status])
            print(f"cell gaussians={g} texels={t}: psnr={psnr_val:.2f} "
                  f"ssim={ssim_val:.4f} ({seconds:.1f}s, {status})")
    with open(out_path, "w") as f:
        for row in rows:
            f.write(",".join(str(v) for v in row) + "\n")
    print(f"sweep written to {out_path}")
    return EXIT_OK


def _sweep_cell(gaussians: int, texels: int, meta: dict,
                train: sceneio.DatasetManifest, test: sceneio.DatasetManifest,
                args) -> tuple[float, float]:
    cfg = SynthConfig(
        count=gaussians,
        extent=float(meta.get("extent", 1.0)),
        sh_degree=int(meta.get("sh_degree", 1)),
        opacity_logit=float(meta.get("opacity_logit", 12.0)),
        background=tuple(meta.get("background", (1.0, 1.0, 1.0))),
    )
    scene = sceneio.fit_scene_for_grid(cfg, seed=args.seed)
    scene.background = np.asarray(train.background, dtype=np.float64)
    rho = texel_size_for_budget(scene.scales, texels)
    scene.atlas = TextureAtlas.allocate(scene.scales, rho)
    init_from_sh0(scene)
    opt = OptimizeConfig(iterations=args.iters, texel_budget=texels, seed=args.seed)
    optimize(scene, train.cameras, train.images, opt)
    psnr_vals, ssim_vals = [], []
    for cam, target in zip(test.cameras, test.images):
        rendered = render(scene, cam).color
        psnr_vals.append(metrics.psnr(rendered, target))
        ssim_vals.append(metrics.ssim(rendered, target))
    return float(np.mean(psnr_vals)), float(np.mean(ssim_vals))


def cmd_synth(args) -> int:
    if not 0 <= args.heldout < args.views:
        raise CommandError("--heldout must leave at least one training view")
    texture = None
    if args.texture:
        tex_path = Path(args.texture)
        if not tex_path.exists():
            raise CommandError(f"texture image not found: {tex_path}")
        texture = sceneio.read_image(tex_path)[..., :3]
    cfg = SynthConfig(
        count=args.count, view_count=args.views, heldout_count=args.heldout,
        image_size=args.size, texture=texture,
    )
    scene, manifest = make_synthetic(args.kind, cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_count = cfg.view_count - cfg.heldout_count
    meta = {
        "kind": args.kind,
        "seed": args.seed,
        "count": cfg.count,
        "extent": cfg.extent,
        "sh_degree": cfg.sh_degree,
        "opacity_logit": cfg.opacity_logit,
        "background": list(cfg.background),
        "near": manifest.cameras[0].near,
        "far": manifest.cameras[0].far,
        "image_size": cfg.image_size,
    }
    sceneio.write_dataset(out, manifest, train_count=train_count, meta=meta)
    sceneio.save_scene(scene, out / "gt.gstx")
    sceneio.export_splat_ply(sceneio.strip_textures(scene), out / "init.ply")
    print(f"dataset with {train_count} train / {cfg.heldout_count} held-out views "
          f"written to {out}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    for path in (args.image_a, args.image_b):
        if not Path(path).exists():
            raise CommandError(f"image not found: {path}")
    a = sceneio.read_image(args.image_a)[..., :3]
    b = sceneio.read_image(args.image_b)[..., :3]
    if a.shape != b.shape:
        raise CommandError(f"image shapes differ: {a.shape} vs {b.shape}")
    print(f"psnr: {metrics.psnr(a, b):.4f}")
    print(f"ssim: {metrics.ssim(a, b):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texsplat",
        description="Textured 2D Gaussian splatting toolkit. Scene files use the "
                    "GSTX v1 format; datasets use Blender-style transforms JSON "
                    "manifests; splat imports use binary little-endian PLY.",
    )
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-view rendering")
    parser.add_argument("--precision", choices=["f32", "f64"], default="f64",
                        help="floating-point precision for rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render views of a scene to PNG")
    p.add_argument("scene", help="scene file (.gstx) or splat (.ply)")
    p.add_argument("--dataset", help="dataset directory with transforms manifests")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--camera", help="JSON camera file (camera_angle_x, width, height, transform_matrix)")
    p.add_argument("--views", help="comma-separated view indices (default: all)")
    p.add_argument("--depth", action="store_true", help="also write 16-bit depth PNGs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("optimize", help="fit textures to a posed dataset")
    p.add_argument("init_scene", help="initial scene (.ply import or .gstx)")
    p.add_argument("dataset", help="dataset directory with train/test manifests")
    p.add_argument("--texels", type=int, required=True, help="total texel budget (0 disables texturing)")
    p.add_argument("--iters", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("paint", help="cast an edited view back onto the textures")
    p.add_argument("scene")
    p.add_argument("edit", help="RGBA edit image matching the view size")
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--dataset")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--camera")
    p.add_argument("--depth-tol", type=float, default=1e-2,
                   help="median-depth gate in normalized depth units")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser("retexture", help="apply a procedural texture")
    p.add_argument("scene")
    p.add_argument("--pattern", choices=sorted(PATTERNS), required=True)
    p.add_argument("--zero-sh", action="store_true", help="also clear SH residuals")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retexture)

    p = sub.add_parser("sweep", help="grid sweep over primitive counts and texel budgets")
    p.add_argument("dataset", help="dataset directory produced by synth")
    p.add_argument("--gaussians", required=True, help="comma-separated primitive counts")
    p.add_argument("--texels", required=True, help="comma-separated texel budgets")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth scene and dataset")
    p.add_argument("--kind", choices=["plane", "grid", "random"], default="plane")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--heldout", type=int, default=2)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--texture", help="optional ground-truth texture image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (SceneFormatError, PlyFormatError, DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
