"""Command-line entry point.

Subcommands cover the full pipeline: synthesize a dataset, train a foam
scene, render/segment/evaluate it, and edit objects in and out of it.
All randomness is seeded through ``--seed``; errors print a single
``error: ...`` line and exit nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import backend
from .dataset import load_dataset, save_dataset
from .editing import DEFAULT_TAU, Transform, extract, insert, remove
from .errors import SemfoamError
from .geometry import build_delaunay
from .imageio import write_pgm, write_ppm
from .metrics import confusion_matrix, miou_macc, psnr
from .renderer import render_image
from .scene import init_scene
from .sceneio import load_scene, save_scene
from .synth import generate_synthetic
from .training import AdamState, PARAM_GROUPS, TrainConfig, predict_labels, train

STATE_MAGIC = b"ADAM1\n"


def save_adam_state(path, state: AdamState) -> None:
    with open(path, "wb") as f:
        f.write(STATE_MAGIC)
        f.write(f"step {state.step}\n".encode())
        for store in (state.m, state.v):
            for g in PARAM_GROUPS:
                arr = store[g]
                dims = " ".join(str(d) for d in arr.shape)
                f.write(f"{g} {dims}\n".encode())
        f.write(b"\n")
        for store in (state.m, state.v):
            for g in PARAM_GROUPS:
                f.write(np.ascontiguousarray(store[g], dtype="<f8").tobytes())


def _cmd_synth(args) -> int:
    ds, _ = generate_synthetic(
        args.spec,
        seed=args.seed,
        n_train=args.train_views,
        n_val=args.val_views,
        n_test=args.test_views,
        size=args.size,
    )
    save_dataset(args.out, ds)
    print(f"wrote {len(ds.cameras)} views to {args.out}")
    return 0


def _cmd_train(args) -> int:
    ds = load_dataset(args.data)
    if ds.points is None:
        raise SemfoamError("dataset has no points.txt seed cloud")
    from .geometry import BoundingBox

    box = BoundingBox.around(ds.points, fraction=0.05)
    rng = np.random.default_rng(args.seed)
    scene = init_scene(
        box,
        rng,
        n_sites=ds.points.shape[0],
        sh_degree=args.sh_degree,
        id_dim=args.id_dim,
        n_classes=ds.n_classes,
        init_positions=ds.points,
        identity_std=args.identity_std,
    )
    scene.class_names = list(ds.class_names)
    config = TrainConfig(
        iterations=args.iters,
        freeze_positions_last=min(args.freeze_positions_last, args.iters),
        weight_identity=args.identity_weight,
        weight_tv=args.tv_weight,
        densify_start=args.densify_start if args.densify_start >= 0 else args.iters + 1,
        densify_stop=args.densify_stop,
        target_sites=args.target_sites or ds.points.shape[0],
        seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "log.txt")
    with open(log_path, "w") as logf:

        def log(line: str) -> None:
            logf.write(line + "\n")
            logf.flush()
            if not args.quiet:
                print(line)

        final, tri, state, _ = train(scene, ds, config, log=log)
    save_scene(os.path.join(args.out, "final.foam"), final)
    save_adam_state(os.path.join(args.out, "final.adam"), state)
    print(f"wrote {os.path.join(args.out, 'final.foam')}")
    return 0


def _load_scene_tri(path):
    scene = load_scene(path)
    return scene, build_delaunay(scene.positions, scene.box)


def _cmd_render(args) -> int:
    scene, tri = _load_scene_tri(args.scene)
    ds = load_dataset(args.data)
    idx = ds.indices(args.split) if args.split else range(len(ds.cameras))
    os.makedirs(args.out, exist_ok=True)
    for k in idx:
        out, _ = render_image(scene, tri, ds.cameras[k])
        write_ppm(os.path.join(args.out, ds.cameras[k].name + ".ppm"), out.rgb)
    print(f"rendered {len(list(idx))} views to {args.out}")
    return 0


def _cmd_segment(args) -> int:
    scene, tri = _load_scene_tri(args.scene)
    ds = load_dataset(args.data)
    idx = ds.indices(args.split) if args.split else range(len(ds.cameras))
    os.makedirs(args.out, exist_ok=True)
    for k in idx:
        out, _ = render_image(scene, tri, ds.cameras[k])
        pred = predict_labels(scene, out.identity).astype(np.uint8)
        write_pgm(os.path.join(args.out, ds.cameras[k].name + ".pgm"), pred)
    print(f"segmented {len(list(idx))} views to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    scene, tri = _load_scene_tri(args.scene)
    ds = load_dataset(args.data)
    idx = ds.indices(args.split)
    if not idx:
        raise SemfoamError(f"split {args.split!r} has no views")
    psnrs = []
    conf = np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64)
    for k in idx:
        out, _ = render_image(scene, tri, ds.cameras[k])
        psnrs.append(psnr(out.rgb, ds.images[k]))
        conf += confusion_matrix(
            ds.masks[k], predict_labels(scene, out.identity), ds.n_classes
        )
    miou, macc = miou_macc(conf)
    print(f"mIoU={miou:.4f} mAcc={macc:.4f} PSNR={np.mean(psnrs):.3f}")
    return 0


def _cmd_extract(args) -> int:
    scene, tri = _load_scene_tri(args.scene)
    sel, obj = extract(scene, tri, args.class_id, args.tau)
    save_scene(args.out, obj)
    print(f"core={sel.core_cells.size} shell={sel.shell_cells.size}")
    return 0


def _cmd_remove(args) -> int:
    scene, tri = _load_scene_tri(args.scene)
    new_scene, _, sel = remove(scene, tri, args.class_id, args.tau)
    save_scene(args.out, new_scene)
    print(f"removed {sel.all_cells.size} cells, {new_scene.n_sites} remain")
    return 0


def _parse_transform(args) -> Transform:
    if args.transform is None:
        return Transform(np.eye(3), np.zeros(3), args.scale)
    vals = [float(v) for v in args.transform.split()]
    if len(vals) != 12:
        raise SemfoamError("--transform needs 12 numbers (row-major 3x4)")
    m = np.array(vals).reshape(3, 4)
    return Transform(m[:, :3], m[:, 3], args.scale)


def _cmd_insert(args) -> int:
    scene, tri = _load_scene_tri(args.scene)
    obj = load_scene(args.object)
    new_scene, _, info = insert(
        scene, tri, obj, _parse_transform(args), class_name=args.class_name
    )
    save_scene(args.out, new_scene)
    print(
        f"inserted {info['inserted_sites']} cells as class "
        f"{info['new_class']} ({info['class_name']}), "
        f"deleted {info['deleted_host_sites']} host cells"
    )
    return 0


def _cmd_info(args) -> int:
    if args.scene:
        scene = load_scene(args.scene)
        lo = " ".join(f"{v:g}" for v in scene.box.lo)
        hi = " ".join(f"{v:g}" for v in scene.box.hi)
        print(f"sites={scene.n_sites} sh_degree={scene.sh_degree} "
              f"id_dim={scene.id_dim} classes={scene.n_classes}")
        print(f"box=[{lo}] .. [{hi}]")
        if scene.class_names:
            print("names=" + ",".join(scene.class_names))
    if args.data:
        ds = load_dataset(args.data)
        parts = {s: len(ds.indices(s)) for s in ("train", "val", "test")}
        print(f"views={len(ds.cameras)} split={parts} classes={ds.class_names}")
    if not args.scene and not args.data:
        raise SemfoamError("info needs --scene and/or --data")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semfoam", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=int, default=64)
    sp.add_argument("--train-views", type=int, default=30)
    sp.add_argument("--val-views", type=int, default=5)
    sp.add_argument("--test-views", type=int, default=5)
    sp.set_defaults(func=_cmd_synth)

    tp = sub.add_parser("train", help="optimize a foam scene on a dataset")
    tp.add_argument("--data", required=True)
    tp.add_argument("--out", required=True)
    tp.add_argument("--iters", type=int, default=20000)
    tp.add_argument("--seed", type=int, default=0)
    tp.add_argument("--sh-degree", type=int, default=1)
    tp.add_argument("--id-dim", type=int, default=16)
    tp.add_argument("--identity-std", type=float, default=1.0)
    tp.add_argument("--identity-weight", type=float, default=1000.0)
    tp.add_argument("--tv-weight", type=float, default=1.0)
    tp.add_argument("--freeze-positions-last", type=int, default=2000)
    tp.add_argument("--densify-start", type=int, default=-1,
                    help="-1 disables densification")
    tp.add_argument("--densify-stop", type=int, default=1500)
    tp.add_argument("--target-sites", type=int, default=0,
                    help="0 keeps the seed-cloud site count")
    tp.add_argument("--quiet", action="store_true")
    tp.set_defaults(func=_cmd_train)

    rp = sub.add_parser("render", help="render dataset views from a scene")
    rp.add_argument("--scene", required=True)
    rp.add_argument("--data", required=True)
    rp.add_argument("--out", required=True)
    rp.add_argument("--split", default="")
    rp.set_defaults(func=_cmd_render)

    gp = sub.add_parser("segment", help="write predicted class masks")
    gp.add_argument("--scene", required=True)
    gp.add_argument("--data", required=True)
    gp.add_argument("--out", required=True)
    gp.add_argument("--split", default="")
    gp.set_defaults(func=_cmd_segment)

    ep = sub.add_parser("eval", help="PSNR and segmentation metrics on a split")
    ep.add_argument("--scene", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", default="test")
    ep.set_defaults(func=_cmd_eval)

    xp = sub.add_parser("extract", help="lift one labeled object into its own scene")
    xp.add_argument("--scene", required=True)
    xp.add_argument("--class", dest="class_id", type=int, required=True)
    xp.add_argument("--out", required=True)
    xp.add_argument("--tau", type=float, default=DEFAULT_TAU)
    xp.set_defaults(func=_cmd_extract)

    mp = sub.add_parser("remove", help="delete one labeled object from a scene")
    mp.add_argument("--scene", required=True)
    mp.add_argument("--class", dest="class_id", type=int, required=True)
    mp.add_argument("--out", required=True)
    mp.add_argument("--tau", type=float, default=DEFAULT_TAU)
    mp.set_defaults(func=_cmd_remove)

    ip = sub.add_parser("insert", help="place an object scene into a host scene")
    ip.add_argument("--scene", required=True)
    ip.add_argument("--object", required=True)
    ip.add_argument("--out", required=True)
    ip.add_argument("--transform", default=None,
                    help="12 numbers, row-major 3x4 rigid transform")
    ip.add_argument("--scale", type=float, default=1.0)
    ip.add_argument("--class-name", default=None)
    ip.set_defaults(func=_cmd_insert)

    fp = sub.add_parser("info", help="describe a scene file or dataset")
    fp.add_argument("--scene", default="")
    fp.add_argument("--data", default="")
    fp.set_defaults(func=_cmd_info)
    return p


def main(argv=None) -> int:
    backend.configure_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SemfoamError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
