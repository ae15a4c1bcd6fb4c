"""Command-line pipeline: extract, train, generate, fit, evaluate, synth, serve.

Human-readable logs go to stdout; failures produce a single machine-parsable
reason line on stderr and exit status 1, so batch runs over many speakers
stay scriptable.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evalreport, modelfit, phantom, shapespace, templatefit, volume
from .align import gpa
from .config import load_config
from .mesh import (
    Mesh,
    landmark_positions,
    load_landmark_set,
    load_mesh,
    save_colored_ply,
    save_landmark_set,
    save_mesh,
)
from .volume import PointCloud


class CommandError(Exception):
    """Carries the single-line machine-parsable failure reason."""


def _load_cloud(path):
    path = Path(path)
    if not path.exists():
        raise CommandError(f"cloud: not found: {path}")
    rows = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise CommandError(f"cloud: {path.name}:{lineno}: expected 'x y z'")
        rows.append([float(v) for v in parts])
    return PointCloud(points=np.array(rows, dtype=np.float64).reshape(-1, 3))


def _save_cloud(cloud, path):
    lines = [f"{p[0]!r} {p[1]!r} {p[2]!r}" for p in cloud.points.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _print_config(cfg):
    print("resolved configuration:")
    for line in cfg.resolved_text().splitlines():
        print(f"  {line}")


def _segment_and_extract(vol, cfg):
    if cfg.crop is not None:
        vol = volume.crop(vol, cfg.crop)
    mask = volume.segment_tissue(vol, cfg.threshold, largest_component=cfg.largest_component)
    if not mask.bits.any():
        raise CommandError("segmentation empty")
    return volume.extract_surface_points(mask, vol)


def cmd_extract(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    if not Path(args.volume).exists():
        raise CommandError("volume: not found")
    if not Path(args.landmarks).exists():
        raise CommandError("landmarks: not found")
    vol = volume.load_volume(args.volume)
    landmarks = load_landmark_set(args.landmarks)
    template = load_mesh(args.template)
    cloud = _segment_and_extract(vol, cfg)
    print(f"extracted {len(cloud)} surface points at threshold {cfg.threshold:g}")
    if args.save_cloud:
        _save_cloud(cloud, args.save_cloud)
        print(f"wrote {args.save_cloud}")
    fitted = templatefit.fit_template(template, cloud, landmarks, cfg.templatefit)
    save_mesh(fitted, args.output)
    print(f"wrote {args.output}")


def cmd_train(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    mesh_paths = sorted(Path(args.meshes).glob("*.obj"))
    if len(mesh_paths) < 2:
        raise CommandError(f"train: need at least 2 meshes, found {len(mesh_paths)}")
    meshes = [load_mesh(p) for p in mesh_paths]
    print(f"aligning {len(meshes)} meshes")
    result = gpa(meshes, max_iter=cfg.gpa_max_iter, tol=cfg.gpa_tol)
    aligned = [
        Mesh(vertices=v, faces=m.faces, landmark_indices=m.landmark_indices)
        for v, m in zip(result.aligned, meshes)
    ]
    model = shapespace.train(aligned, variance_keep=args.variance_keep)
    shapespace.save_model(model, args.output)
    print(f"trained {model.n_modes} modes from {model.n_train} meshes -> {args.output}")


def cmd_generate(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    model = shapespace.load_model(args.model)
    c = np.zeros(model.n_modes)
    for spec_str in args.coeff or []:
        idx, _, val = spec_str.partition("=")
        i = int(idx)
        if not 0 <= i < model.n_modes:
            raise CommandError(f"generate: coefficient index {i} out of range (d={model.n_modes})")
        c[i] = float(val)
    mesh = shapespace.generate(model, c)
    save_mesh(mesh, args.output)
    print(f"wrote {args.output}")


def cmd_fit(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    model = shapespace.load_model(args.model)
    landmarks = load_landmark_set(args.landmarks)
    if args.landmarks_only:
        result = modelfit.fit_to_landmarks(model, landmarks, cfg.fit)
    else:
        if args.cloud is None:
            raise CommandError("fit: --cloud required unless --landmarks-only")
        cloud = _load_cloud(args.cloud)
        result = modelfit.fit_to_cloud(model, cloud, landmarks, cfg.fit)
    out = Path(args.output)
    modelfit.save_fit_result(result, out.with_suffix(".txt"))
    fitted = shapespace.generate(model, result.coefficients)
    fitted = fitted.with_vertices(result.transform.apply(fitted.vertices))
    save_mesh(fitted, out.with_suffix(".obj"))
    print(
        f"fit: energy {result.final_energy:.6g} mm^2 in {result.iterations} iterations, "
        f"log density {result.log_density:.6g}"
    )
    print(f"wrote {out.with_suffix('.txt')} and {out.with_suffix('.obj')}")


def cmd_evaluate(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    m = load_mesh(args.mesh)
    reference = load_mesh(args.reference)
    if args.align:
        m = evalreport.rigid_align_for_eval(m, reference, trim_fraction=cfg.icp_trim_fraction)
    report = evalreport.per_vertex_errors(
        m, reference, mesh_id=Path(args.mesh).stem, reference_id=Path(args.reference).stem
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    table = evalreport.cumulative_error(report, n_bins=args.bins)
    evalreport.write_cdf_csv(table, out / "cdf.csv")
    evalreport.write_cdf_svg(table, out / "cdf.svg")
    colored_mesh, colors = evalreport.heatmap_mesh(m, report, d_max=args.d_max)
    save_colored_ply(colored_mesh, colors, out / "heatmap.ply")
    print(f"median error {np.median(report.per_vertex_mm):.4g} mm, max {report.sorted_mm[-1]:.4g} mm")
    print(f"fraction below 0.5 mm: {evalreport.fraction_below(report, 0.5):.4f}")
    print(f"fraction below 1.0 mm: {evalreport.fraction_below(report, 1.0):.4f}")
    print(f"wrote {out / 'cdf.csv'}, {out / 'cdf.svg'}, {out / 'heatmap.ply'}")


def cmd_synth(args):
    cfg = load_config(args.config)
    _print_config(cfg)
    params = phantom.PhantomParams(
        grid=(args.grid[0], args.grid[1]),
        width=args.width,
        length=args.length,
        dome_height=args.dome_height,
        asymmetry=args.asymmetry,
        concavity=args.concavity,
        seed=args.seed,
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    template, _ = phantom.synth_palate(params)
    save_mesh(template, out / "template.obj")
    meshes = (
        phantom.synth_population(params, n=args.population, spread=args.spread, seed=args.seed)
        if args.population
        else [phantom.synth_palate(params)[0]]
    )
    for i, m in enumerate(meshes):
        stem = out / f"phantom_{i:03d}"
        save_mesh(m, stem.with_suffix(".obj"))
        save_landmark_set(landmark_positions(m), Path(f"{stem}_landmarks.lmk"))
        if args.volumes:
            geom = phantom.geometry_for_mesh(m)
            vol = phantom.rasterize(m, geom)
            volume.save_volume(vol, stem.with_suffix(".rvh"))
    print(f"wrote {len(meshes)} phantom(s) to {out}")


def cmd_serve(args):
    from .server import serve  # deferred: pulls in the HTTP stack

    cfg = load_config(args.config)
    _print_config(cfg)
    vol = volume.load_volume(args.volume)
    lmk_path = Path(args.volume).with_suffix(".lmk")
    print(f"serving {args.volume} on port {args.port} (landmarks -> {lmk_path})")
    serve(vol, lmk_path, port=args.port)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="palatemodel",
        description="Train, fit, and evaluate a statistical shape space of the palate surface.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="pipeline config file")
        p.set_defaults(fn=fn)
        return p

    p = add("extract", cmd_extract, "volume + landmarks + template -> fitted training mesh")
    p.add_argument("--volume", required=True)
    p.add_argument("--landmarks", required=True, help="world-coordinate .lmk file")
    p.add_argument("--template", required=True, help="template OBJ with .lmk index sidecar")
    p.add_argument("--output", required=True, help="output OBJ path")
    p.add_argument("--save-cloud", default=None, help="also write the extracted point cloud")

    p = add("train", cmd_train, "directory of corresponding meshes -> model file")
    p.add_argument("--meshes", required=True, help="directory of .obj training meshes")
    p.add_argument("--output", required=True, help="output model path")
    p.add_argument("--variance-keep", type=float, default=1.0)

    p = add("generate", cmd_generate, "model + coefficients -> mesh")
    p.add_argument("--model", required=True)
    p.add_argument("--coeff", action="append", metavar="I=V", help="set coefficient I to V (repeatable)")
    p.add_argument("--output", required=True)

    p = add("fit", cmd_fit, "model + cloud or landmarks -> fit result + mesh")
    p.add_argument("--model", required=True)
    p.add_argument("--cloud", default=None, help="point cloud file, one 'x y z' per line")
    p.add_argument("--landmarks", required=True, help="world-coordinate .lmk file")
    p.add_argument("--landmarks-only", action="store_true", help="fit to the 7 landmarks alone")
    p.add_argument("--output", required=True, help="output stem for .txt/.obj")

    p = add("evaluate", cmd_evaluate, "mesh vs reference -> CSV + SVG + heat-map PLY")
    p.add_argument("--mesh", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--align", action="store_true", help="rigidly align (no scaling) before measuring")
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--d-max", type=float, default=2.0, help="heat-map saturation distance, mm")

    p = add("synth", cmd_synth, "emit a phantom bundle (meshes, landmarks, volumes)")
    p.add_argument("--grid", type=int, nargs=2, default=(32, 16))
    p.add_argument("--width", type=float, default=44.0)
    p.add_argument("--length", type=float, default=40.0)
    p.add_argument("--dome-height", type=float, default=12.0)
    p.add_argument("--asymmetry", type=float, default=0.0)
    p.add_argument("--concavity", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--population", type=int, default=0, help="emit N perturbed phantoms")
    p.add_argument("--spread", type=float, default=0.2)
    p.add_argument("--volumes", action="store_true", help="also rasterize RVH/RVD volumes")
    p.add_argument("--output", required=True, help="output directory")

    p = add("serve", cmd_serve, "HTTP slice/landmark service for annotation")
    p.add_argument("--volume", required=True)
    p.add_argument("--port", type=int, default=8080)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except CommandError as e:
        print(e, file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
