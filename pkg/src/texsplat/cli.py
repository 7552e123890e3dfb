"""Command-line entry points: make-synthetic, transfer, render, metrics, dump-maps."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from . import control_maps as cm
from .imageio import heatmap, read_image, write_float_array, write_png
from .metrics import evaluate
from .rasterizer import CHANNELS, render
from .scene import SceneError, load_cameras, load_scene, save_cameras, save_scene
from .synthetic import KINDS, TEXTURES, default_cameras, make_scene, make_texture
from .texture_loss import build_target_map
from .trainer import (DivergenceError, TransferConfig, config_from_text, config_to_text,
                      history_to_csv, init_state, select_prior, train_step)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_DIVERGED = 4
PROCEDURAL_PREFIX = "procedural:"

log = logging.getLogger("texsplat")


class UsageError(Exception):
    pass


def git_blob_sha1(data: bytes) -> str:
    """Hash of ``data`` the way git names a blob object."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_hash(path):
    with open(path, "rb") as fh:
        return git_blob_sha1(fh.read())


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_manifest(out_dir, command, config, inputs, outputs, seed, extra=None):
    """Manifest with hashes of every input and output; output paths relative to ``out_dir``."""
    doc = {
        "tool": "texsplat",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "inputs": {k: {"path": str(v), "sha1": None if v.startswith(PROCEDURAL_PREFIX) else file_hash(v)}
                   for k, v in sorted(inputs.items())},
        "outputs": {os.path.relpath(p, out_dir).replace(os.sep, "/"): file_hash(p) for p in sorted(outputs)},
    }
    if extra:
        doc.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    _write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_timings(out_dir, timings):
    _write_text(os.path.join(out_dir, "timings.json"), json.dumps(timings, indent=2, sort_keys=True) + "\n")


def load_texture(source):
    if source.startswith(PROCEDURAL_PREFIX):
        body = source[len(PROCEDURAL_PREFIX):]
        kind, _, size = body.partition("@")
        return make_texture(kind, int(size) if size else 128)
    return read_image(source)


def _views(arg, n):
    if arg is None:
        return list(range(n))
    views = sorted({int(v) for v in str(arg).split(",") if v.strip()})
    bad = [v for v in views if not 0 <= v < n]
    if bad:
        raise UsageError(f"view index {bad[0]} out of range for {n} cameras")
    return views


def _makedirs(path):
    os.makedirs(path, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_make_synthetic(args):
    if args.n_gaussians < 1 or args.n_cameras < 1:
        raise UsageError("--n-gaussians and --n-cameras must be >= 1")
    out = _makedirs(args.out)
    rdir = _makedirs(os.path.join(out, "renders"))
    scene = make_scene(args.kind, args.n_gaussians, args.seed)
    cams = default_cameras(args.kind, args.n_cameras, args.width, args.height)
    outputs = [os.path.join(out, "scene.json"), os.path.join(out, "cameras.json")]
    save_scene(scene, outputs[0])
    save_cameras(cams, outputs[1])
    for v, cam in enumerate(cams):
        r = render(scene, cam)
        png = os.path.join(rdir, f"view_{v:03d}.png")
        dep = os.path.join(rdir, f"depth_{v:03d}.tsf")
        write_png(png, r.image)
        write_float_array(dep, r.depth)
        outputs += [png, dep]
    if args.texture:
        tex = os.path.join(out, "texture.png")
        write_png(tex, make_texture(args.texture, args.texture_size, args.seed))
        outputs.append(tex)
    write_manifest(out, "make-synthetic", {"kind": args.kind, "n_gaussians": args.n_gaussians,
                                           "n_cameras": args.n_cameras, "width": args.width,
                                           "height": args.height, "texture": args.texture},
                   {}, outputs, args.seed)
    print(f"wrote {len(cams)} views to {out}")
    return EXIT_OK


def config_from_args(args) -> TransferConfig:
    cfg = TransferConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = config_from_text(fh.read())
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(TransferConfig)
                 if getattr(args, f.name, None) is not None}
    return dataclasses.replace(cfg, **overrides).validate()


def _load_inputs(args):
    scene = load_scene(args.scene)
    cams = load_cameras(args.cameras)
    if not cams:
        raise SceneError(f"{args.cameras}: no cameras")
    for cam in cams:
        cam.validate()
    return scene, cams


def cmd_transfer(args):
    cfg = config_from_args(args)
    t0 = time.perf_counter()
    scene, cams = _load_inputs(args)
    texture = load_texture(args.texture)
    out = _makedirs(args.out)
    rdir = _makedirs(os.path.join(out, "renders"))
    content = None
    if args.content:
        content = [read_image(os.path.join(args.content, f"view_{v:03d}.png")) for v in range(len(cams))]
    state = init_state(scene, cams, texture, cfg, content)
    t1 = time.perf_counter()
    error = None
    try:
        for _ in range(cfg.steps):
            row = train_step(state)
            if args.verbose and row["step"] % 50 == 0:
                log.info("step %d view %d L_tot %.6g", row["step"], row["view"], row["L_tot"])
    except DivergenceError as exc:
        error = exc
    t2 = time.perf_counter()
    outputs = [os.path.join(out, n) for n in ("scene.json", "losses.csv", "config.txt")]
    save_scene(state.scene, outputs[0])
    _write_text(outputs[1], history_to_csv(state.history))
    _write_text(outputs[2], config_to_text(cfg))
    for v, cam in enumerate(cams):
        p = os.path.join(rdir, f"view_{v:03d}.png")
        write_png(p, render(state.scene, cam).image)
        outputs.append(p)
    inputs = {"scene": args.scene, "cameras": args.cameras, "texture": args.texture}
    if args.config:
        inputs["config"] = args.config
    flags = {"lambda_p": cfg.lambda_p, "no_afcm": cfg.no_afcm, "no_gpb": cfg.no_gpb,
             "no_prior": cfg.no_prior, "pseudo_prior_angle": cfg.pseudo_prior_angle}
    extra = {"ablation": flags, "steps_completed": state.step, "n_gaussians": len(state.scene),
             "status": "diverged" if error else "ok"}
    write_manifest(out, "transfer", cfg.to_dict(), inputs, outputs, cfg.seed, extra)
    write_timings(out, {"setup_s": t1 - t0, "train_s": t2 - t1, "write_s": time.perf_counter() - t2})
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"transfer finished: {state.step} steps, {len(state.scene)} Gaussians -> {out}")
    return EXIT_OK


def cmd_render(args):
    scene, cams = _load_inputs(args)
    out = _makedirs(args.out)
    outputs = []
    for v in _views(args.view, len(cams)):
        r = render(scene, cams[v], args.channel)
        p = os.path.join(out, f"view_{v:03d}.png")
        d = os.path.join(out, f"depth_{v:03d}.png")
        write_png(p, r.image)
        write_png(d, heatmap(r.depth))
        outputs += [p, d]
    write_manifest(out, "render", {"channel": args.channel, "view": args.view},
                   {"scene": args.scene, "cameras": args.cameras}, outputs, None)
    print(f"rendered {len(outputs) // 2} views to {out}")
    return EXIT_OK


def cmd_metrics(args):
    before = load_scene(args.before)
    after = load_scene(args.after)
    cams = load_cameras(args.cameras)
    report = evaluate(before, after, cams, args.tau_rel)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    _makedirs(out_dir)
    _write_text(args.out, report.to_csv())
    if len(cams) < 2:
        print("fewer than two cameras: SSIM only", file=sys.stderr)
    ss = [r["value"] for r in report.select("ssim")]
    st = [r["value"] for r in report.select("st_rmse") if np.isfinite(r["value"])]
    print(f"mean SSIM {np.mean(ss):.6f}" + (f", mean ST-RMSE {np.mean(st):.6f}" if st else ""))
    return EXIT_OK


def cmd_dump_maps(args):
    """Walk the views in order (selection only, no optimization) and dump the control maps."""
    cfg = config_from_args(args)
    scene, cams = _load_inputs(args)
    texture = load_texture(args.texture)
    out = _makedirs(args.out)
    wanted = set(_views(args.view, len(cams)))
    state = init_state(scene, cams, texture, dataclasses.replace(cfg, color_transfer=False))
    outputs = []
    for v in range(max(wanted) + 1):
        vc = state.views[v]
        F_r = state.extractor.forward(render(state.scene, cams[v]).image).data
        grid = F_r.shape[:2]
        prior, betas = select_prior(state, v, grid)
        target = build_target_map(F_r, state.bank, prior, betas, cfg.lambda_p, view=v)
        if prior is not None and prior.present.any():
            free = build_target_map(F_r, state.bank, None, None, 0.0, view=v)
            Phi = cm.distortion_map(target, free)
        else:
            Phi = np.zeros(grid)
        state.prev_target = target
        if v not in wanted:
            continue
        W = cm.weight_map(vc.I_d, vc.I_f, Phi, cfg.lambda_d, cfg.lambda_f, cfg.lambda_phi)
        maps = {"depth": vc.depth, "I_d": vc.I_d, "I_f": vc.I_f, "Phi": Phi, "W": W}
        for name, arr in maps.items():
            stem = os.path.join(out, f"{name}_{v:03d}")
            write_float_array(stem + ".tsf", arr)
            vmax = cfg.lambda_d + cfg.lambda_f + cfg.lambda_phi if name == "W" else None
            write_png(stem + ".png", heatmap(arr, 0.0 if name == "W" else None, vmax))
            outputs += [stem + ".tsf", stem + ".png"]
    write_manifest(out, "dump-maps", cfg.to_dict(), {"scene": args.scene, "cameras": args.cameras,
                                                     "texture": args.texture}, outputs, cfg.seed)
    print(f"wrote maps for {len(wanted)} view(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_flags(p):
    p.add_argument("--config", help="key = value run configuration file")
    for f in dataclasses.fields(TransferConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, action="store_const", const=True, default=None)
        else:
            conv = {"float": float, "int": int, "Optional[float]": float, "Optional[int]": int}[f.type]
            p.add_argument(flag, dest=f.name, type=conv, default=None, metavar=f.name.upper())


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="texsplat", description=__doc__)
    parser.add_argument("--version", action="version", version=f"texsplat {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-synthetic", help="write a seeded fixture scene, cameras and renders")
    p.add_argument("--kind", choices=KINDS, default="planes")
    p.add_argument("--n-gaussians", type=int, default=500)
    p.add_argument("--n-cameras", type=int, default=8)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--texture", choices=TEXTURES, help="also write a procedural texture.png")
    p.add_argument("--texture-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("transfer", help="run texture transfer on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--texture", required=True, help=f"image path or {PROCEDURAL_PREFIX}<kind>[@size]")
    p.add_argument("--content", help="directory of view_NNN.png content images (default: renders)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("render", help="render views and depth heatmaps")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--channel", choices=CHANNELS, default="appearance")
    p.add_argument("--view", help="comma-separated view indices (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("metrics", help="consistency and content-preservation report")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--tau-rel", type=float, default=0.05)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("dump-maps", help="write depth, frequency, distortion and weight maps")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--texture", required=True)
    p.add_argument("--view", help="comma-separated view indices (default: all)")
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_dump_maps)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            log.setLevel(logging.INFO)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SceneError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
