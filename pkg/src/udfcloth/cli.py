"""Umbrella command line: sample, gridify, mesh, pairs, train, encode, optimize,
eval, serve, plus an assets helper that materializes the bundled test meshes."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

import numpy as np

log = logging.getLogger("udfcloth")


def _load_config_overrides(path) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _filter_kwargs(cls, overrides: dict) -> dict:
    names = {f.name for f in dc_fields(cls)}
    return {k: v for k, v in overrides.items() if k in names}


def cmd_assets(args) -> int:
    from .assets import bundled_meshes
    from .mesh import normalize_mesh, save_obj

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, mesh in bundled_meshes().items():
        if args.normalize:
            mesh, _ = normalize_mesh(mesh, args.scale)
        save_obj(mesh, out / f"{name}.obj")
        log.info("wrote %s.obj (%d vertices, %d triangles)", name, mesh.n_vertices, mesh.n_triangles)
    return 0


def cmd_sample(args) -> int:
    from .mesh import SurfaceIndex, load_obj, normalize_mesh
    from .sampling import SamplingSpec, sample_udf_training_set, save_sample_set

    mesh = load_obj(args.infile)
    mesh, _ = normalize_mesh(mesh, args.scale)
    spec = SamplingSpec.paper() if args.spec == "paper" else SamplingSpec.desk()
    rng = np.random.default_rng(args.seed)
    sample_set = sample_udf_training_set(mesh, SurfaceIndex(mesh), spec, rng)
    save_sample_set(sample_set, args.out)
    log.info("wrote %d samples to %s", len(sample_set), args.out)
    return 0


def cmd_gridify(args) -> int:
    from .fields import grid_from_mesh, save_grid
    from .mesh import SurfaceIndex, load_obj, normalize_mesh

    mesh = load_obj(args.infile)
    mesh, _ = normalize_mesh(mesh, args.scale)
    grid = grid_from_mesh(SurfaceIndex(mesh), args.res)
    save_grid(grid, args.out)
    log.info("wrote %d^3 grid to %s", args.res, args.out)
    return 0


def cmd_mesh(args) -> int:
    from .fields import load_grid
    from .mesh import save_obj
    from .mesher import MeshingConfig, extract_mesh

    grid = load_grid(args.infile)
    band = None if args.band == "auto" else float(args.band)
    mesh = extract_mesh(grid, MeshingConfig(surface_band=band))
    save_obj(mesh, args.out)
    log.info("extracted %d vertices / %d triangles to %s", mesh.n_vertices, mesh.n_triangles, args.out)
    return 0


def cmd_pairs(args) -> int:
    from .mesh import load_obj, normalize_mesh
    from .sketch import build_pair_dataset

    meshes = []
    for path in sorted(Path(args.meshes).glob("*.obj")):
        mesh = load_obj(path)
        mesh, _ = normalize_mesh(mesh, args.scale)
        mesh.name = mesh.name or path.stem
        meshes.append(mesh)
    if not meshes:
        log.error("no .obj files under %s", args.meshes)
        return 1
    entries = build_pair_dataset(
        meshes,
        n_views=args.views,
        out_dir=args.out,
        width=args.size,
        height=args.size,
        include_depth_edges=args.depth_edges,
    )
    log.info("wrote %d sketches + manifest to %s", len(entries), args.out)
    return 0


def cmd_train(args) -> int:
    from .decoder import DecoderConfig, TrainConfig, save_checkpoint, train_auto_decoder
    from .sampling import load_sample_set

    paths = sorted(Path(args.samples).glob("*.udfs")) if Path(args.samples).is_dir() else [Path(args.samples)]
    if not paths:
        log.error("no .udfs files under %s", args.samples)
        return 1
    sets = [load_sample_set(p, mesh_name=p.stem) for p in paths]
    overrides = _load_config_overrides(args.config)
    tcfg = TrainConfig(
        **{
            "epochs": args.epochs,
            "seed": args.seed,
            **_filter_kwargs(TrainConfig, overrides.get("train", {})),
        }
    )
    dcfg = DecoderConfig(**_filter_kwargs(DecoderConfig, overrides.get("decoder", {})))
    log.info("training on %d shapes for %d epochs", len(sets), tcfg.epochs)
    result = train_auto_decoder(sets, tcfg, dcfg)
    save_checkpoint(args.out, result.decoder, result.latents)
    manifest_path = Path(args.out).with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(result.manifest, indent=2, default=str))
    final = result.history[-1] if result.history else {}
    log.info("saved checkpoint to %s (final losses: %s)", args.out, final)
    return 0


def cmd_encode(args) -> int:
    from .encoder import encode_sketch, load_library
    from .sketch import load_sketch_png

    library = load_library(args.lib)
    sketch = load_sketch_png(args.sketch)
    z, pose, score = encode_sketch(sketch, library)
    out = {
        "latent": z.tolist(),
        "azimuth_deg": float(np.degrees(pose.azimuth)),
        "elevation_deg": float(np.degrees(pose.elevation)),
        "score": score,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(out))
    else:
        json.dump(out, sys.stdout)
        sys.stdout.write("\n")
    return 0


def cmd_optimize(args) -> int:
    from .decoder import load_checkpoint
    from .editor import EditConfig, EditSession, optimize_latent
    from .encoder import encode_sketch, load_library
    from .sketch import CameraPose, load_sketch_png

    decoder, _latents = load_checkpoint(args.ckpt)
    sketch = load_sketch_png(args.sketch)
    if args.z0 == "from-encode":
        if not args.lib:
            log.error("--z0 from-encode requires --lib")
            return 1
        z0, pose, _ = encode_sketch(sketch, load_library(args.lib))
    else:
        state = json.loads(Path(args.z0).read_text())
        z0 = np.array(state["latent"], dtype=np.float64)
        pose = CameraPose(
            azimuth=np.radians(state.get("azimuth_deg", 0.0)),
            elevation=np.radians(state.get("elevation_deg", 0.0)),
            width=sketch.raster.shape[1],
            height=sketch.raster.shape[0],
        )
    overrides = _filter_kwargs(EditConfig, _load_config_overrides(args.config).get("edit", {}))
    cfg = EditConfig(**{"steps": args.steps, "seed": args.seed, **overrides})
    session = EditSession(z=z0, z_init=z0, pose=pose, sketch=sketch, config=cfg)
    result = optimize_latent(session, decoder)
    Path(args.out).write_text(json.dumps({"latent": result.z.tolist(), "diverged": result.diverged}))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("step,chamfer\n")
            for step, value in result.history:
                fh.write(f"{step},{value}\n")
    log.info(
        "optimized %d steps: chamfer %.4g -> %.4g%s",
        len(result.history) - 1,
        result.history[0][1],
        min(c for _, c in result.history),
        " (diverged)" if result.diverged else "",
    )
    return 0


def cmd_eval(args) -> int:
    from .mesh import load_obj
    from .metrics import evaluate_meshes

    out = evaluate_meshes(load_obj(args.pred), load_obj(args.gt), seed=args.seed)
    if args.json:
        json.dump(out, sys.stdout)
        sys.stdout.write("\n")
    else:
        log.info("CD=%.6g (%s) EMD=%.6g (%s)", out["cd"], out["cd_convention"], out["emd"], out["emd_mode"])
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, ServiceRuntime, create_app

    overrides = _filter_kwargs(ServiceConfig, _load_config_overrides(args.config).get("service", {}))
    cfg = ServiceConfig(**overrides) if overrides else ServiceConfig()
    runtime = ServiceRuntime.from_files(args.ckpt, args.lib, cfg)
    if not runtime.ready:
        log.warning("serving without a loaded checkpoint/library: /api/generate will answer 503")
    app = create_app(runtime, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udfcloth", description="Sketch-driven garment reconstruction on UDFs")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON file with config overrides")

    p = sub.add_parser("assets", help="write the bundled procedural test meshes")
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--scale", type=float, default=0.8)
    p.set_defaults(func=cmd_assets)

    p = sub.add_parser("sample", help="draw a banded UDF training set from a mesh")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spec", choices=["paper", "desk"], default="desk")
    p.add_argument("--scale", type=float, default=0.8)
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gridify", help="evaluate exact mesh distances on a regular grid")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=0.8)
    common(p)
    p.set_defaults(func=cmd_gridify)

    p = sub.add_parser("mesh", help="extract a triangle mesh from a distance grid")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--band", default="auto")
    common(p)
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("pairs", help="render the multi-view sketch/mesh pair dataset")
    p.add_argument("--meshes", required=True)
    p.add_argument("--views", type=int, default=36)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=0.8)
    p.add_argument("--depth-edges", action="store_true", help="include interior depth-jump contours")
    common(p)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train", help="fit the auto-decoder on sampled UDF sets")
    p.add_argument("--samples", required=True, help=".udfs file or directory of them")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=300)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="retrieve the nearest latent for a sketch")
    p.add_argument("--sketch", required=True)
    p.add_argument("--lib", required=True)
    p.add_argument("--out", default=None)
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("optimize", help="fit a latent code to a sketch by gradient descent")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sketch", required=True)
    p.add_argument("--z0", default="from-encode", help="'from-encode' or a JSON file with a latent")
    p.add_argument("--lib", default=None)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="CSV of per-step chamfer values")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="chamfer + EMD between two meshes")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--json", action="store_true")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP editing service")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--lib", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", default=None)
    common(p)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
