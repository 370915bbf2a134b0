"""Umbrella command line: curate | make-synthetic | train | segment | eval | serve.

Exit codes: 0 on success, 1 on a domain error (bad mesh, empty dataset, ...),
2 on usage errors (argparse default).
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import PartSegError


def _cmd_curate(args):
    from .curation import curate_mesh
    from .mesh_io import load_mesh

    mesh = load_mesh(args.input)
    annotation, report = curate_mesh(mesh, resolution=args.resolution,
                                     merge_threshold=args.merge_threshold)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.input))[0]
    ann_path = os.path.join(args.out, f"{stem}.labels.json")
    rep_path = os.path.join(args.out, f"{stem}.report.json")
    annotation.save(ann_path)
    with open(rep_path, "w") as fh:
        json.dump(report.to_json(), fh, indent=1)
    print(f"{report.verdict} ({report.reason}): {annotation.n_parts} parts "
          f"-> {ann_path}")
    return 0


def _cmd_make_synthetic(args):
    from .synthetic import generate_dataset, save_dataset

    items = generate_dataset(args.n, seed=args.seed)
    save_dataset(items, args.out)
    n_train = sum(1 for item in items if item.split == "train")
    print(f"wrote {len(items)} shapes ({n_train} train / {len(items) - n_train} held out) "
          f"to {args.out}")
    return 0


def _cmd_train(args):
    from .reporting import loss_curve_figure, write_loss_trace
    from .synthetic import load_dataset, to_train_objects
    from .training import TrainConfig, train

    items = [item for item in load_dataset(args.data)
             if args.split == "all" or item.split == args.split]
    config = TrainConfig.preset(
        args.preset, steps=args.steps, seed=args.seed,
        **({} if args.lr is None else {"lr": args.lr}),
        **({} if args.coarse_prob is None else {"coarse_prob": args.coarse_prob}),
    )
    objects = to_train_objects(items, n_points=config.n_points, seed=args.seed)
    print(f"training on {len(objects)} objects, {config.steps} steps "
          f"(preset {args.preset}, d={config.d}, n_points={config.n_points})")
    result = train(objects, config,
                   progress=lambda step, loss: print(f"  step {step}: loss {loss:.4f}"))
    result.weights.save(args.out)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    write_loss_trace(os.path.join(out_dir, "loss_trace.csv"), result.loss_trace)
    loss_curve_figure(os.path.join(out_dir, "loss_curve.png"), result.loss_trace)
    print(f"final loss {result.loss_trace[-1][1]:.4f} in {result.seconds:.0f}s "
          f"-> {args.out} (+ loss_trace.csv, loss_curve.png)")
    return 0


def _cmd_segment(args):
    from .autoseg import AutoSegConfig, auto_segment, hierarchical_segment, multi_prompt_segment
    from .geometry import SampledCloud
    from .mesh_io import load_geometry, save_labeled_cloud_ply
    from .network import SegmentorWeights, extract_features

    weights = SegmentorWeights.load(args.weights)
    geometry = load_geometry(args.input)
    config = AutoSegConfig(n_points=args.n_points,
                           n_prompts=min(args.npp, args.n_points),
                           t_nms=args.tnms, seed=args.seed)
    if args.prompts:
        with open(args.prompts) as fh:
            prompts = np.array(json.load(fh), dtype=np.float64).reshape(-1, 3)
        annotation = multi_prompt_segment(geometry, weights, prompts, config)
    else:
        annotation = auto_segment(geometry, weights, config)
    out = args.out or os.path.splitext(args.input)[0] + ".labels.json"
    annotation.save(out)
    print(f"{annotation.n_parts} parts -> {out}")
    if args.ply_out:
        from .geometry import sample_surface
        if isinstance(geometry, SampledCloud):
            points, labels = geometry.points, annotation.labels
        else:
            cloud = sample_surface(geometry, args.n_points, seed=args.seed)
            points, labels = cloud.points, annotation.labels[cloud.source_face]
        save_labeled_cloud_ply(args.ply_out, points, labels)
        print(f"labeled points -> {args.ply_out}")
    if args.hierarchy:
        if annotation.n_parts < 2:
            print("hierarchy skipped: fewer than 2 parts")
        else:
            if isinstance(geometry, SampledCloud):
                cloud, point_labels = geometry, annotation.labels
            else:
                from .geometry import sample_surface
                cloud = sample_surface(geometry, args.n_points, seed=args.seed)
                point_labels = annotation.labels[cloud.source_face]
            features = extract_features(cloud, weights, dtype=np.float32)
            tree = hierarchical_segment(cloud, features, point_labels)
            hier_out = os.path.splitext(out)[0] + ".hierarchy.json"
            with open(hier_out, "w") as fh:
                json.dump({"n_parts": annotation.n_parts,
                           "merges": [[int(a), int(b), float(d)] for a, b, d in tree.merges]},
                          fh, indent=1)
            print(f"merge tree -> {hier_out}")
    return 0


def _cmd_eval(args):
    from .autoseg import AutoSegConfig
    from .evaluation import full_eval, interactive_eval
    from .network import SegmentorWeights
    from .reporting import write_report_files
    from .synthetic import load_dataset, to_train_objects

    weights = SegmentorWeights.load(args.weights)
    items = [item for item in load_dataset(args.data)
             if args.split == "all" or item.split == args.split]
    if not items:
        raise PartSegError(f"no objects in split {args.split!r}")
    if args.mode == "interactive":
        objects = to_train_objects(items, n_points=args.n_points, seed=args.seed)
        report = interactive_eval(weights, objects, seed=args.seed)
    else:
        config = AutoSegConfig(n_points=args.n_points,
                               n_prompts=min(args.npp, args.n_points),
                               t_nms=args.tnms, seed=args.seed)
        report = full_eval(weights, items, config)
    files = write_report_files(report, args.out, prefix=f"report_{args.mode}")
    print(report.to_text())
    print("wrote:", ", ".join(files))
    return 0


def _cmd_serve(args):
    from .network import SegmentorWeights
    from .service import make_server

    weights_path = args.weights or os.environ.get("SEG_WEIGHTS")
    if not weights_path:
        raise PartSegError("no weights: pass --weights or set SEG_WEIGHTS")
    weights = SegmentorWeights.load(weights_path)
    static_dir = args.static_dir if args.static_dir and os.path.isdir(args.static_dir) else None
    server = make_server(weights, host=args.host, port=args.port,
                         n_points=args.n_points, static_dir=static_dir)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}/v1 (n_points={args.n_points})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="partseg",
                                     description="point-promptable 3D part segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curate", help="decompose a mesh into parts and filter it")
    p.add_argument("input")
    p.add_argument("--out", default=".")
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--merge-threshold", type=float, default=0.01)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("make-synthetic", help="generate a labeled synthetic dataset")
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_synthetic)

    p = sub.add_parser("train", help="train segmentor weights on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--preset", choices=["desk", "paper"], default="desk")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--coarse-prob", type=float, default=None)
    p.add_argument("--split", choices=["train", "heldout", "all"], default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("segment", help="automatically segment a mesh or point cloud")
    p.add_argument("input")
    p.add_argument("--weights", required=True)
    p.add_argument("--npp", type=int, default=400)
    p.add_argument("--tnms", type=float, default=0.9)
    p.add_argument("--n-points", type=int, default=16384)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prompts", help="JSON file with K [x,y,z] prompt points")
    p.add_argument("--hierarchy", action="store_true")
    p.add_argument("--out")
    p.add_argument("--ply-out")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("eval", help="evaluate weights on a dataset directory")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["full", "interactive"], default="full")
    p.add_argument("--split", choices=["train", "heldout", "all"], default="heldout")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, default=4096)
    p.add_argument("--npp", type=int, default=96)
    p.add_argument("--tnms", type=float, default=0.9)
    p.add_argument("--out", default="eval_out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="run the interactive segmentation service")
    p.add_argument("--weights")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--n-points", type=int, default=16384)
    p.add_argument("--static-dir", help="directory of viewer assets to serve at /")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PartSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
