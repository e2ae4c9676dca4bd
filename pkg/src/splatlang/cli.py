"""Command-line pipeline driver.

Subcommands cover the whole chain over a scene directory:

  synth            generate a synthetic scene directory
  extract-masklets run the proposal-merging loop, write region-id rasters
  build-bank       per-region embeddings + averaged bank (latents pending)
  train-codec      fit the autoencoder, fill in the bank latents
  build-gt         assemble per-frame ground-truth feature rasters
  train-lang       optimize the per-Gaussian language embeddings
  query            answer a text or vector query (two-step by default)
  eval             query every labeled class and write a metrics CSV
  ablate           run the query-variant comparison table

Every subcommand echoes its configuration to stderr for reproducibility
and exits nonzero on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import ablation, fileio
from .codec import LatentCodec, train_codec
from .features import (
    BankEntry,
    RegionFeatureBank,
    assemble_groundtruth,
    compute_region_embeddings,
    weighted_average,
)
from .masklets import (
    FileBackedSegmenter,
    FileBackedTracker,
    extract_masklets,
    masklets_from_id_grids,
    masklets_to_id_grids,
)
from .metrics import EvalRecord, box_from_mask, iou_2d, loc_acc, miou_3d, write_report
from .query import one_step_query, render_query_mask, two_step_query
from .scene import validate_scene
from .synthetic import (
    SyntheticConfig,
    SyntheticEmbedder,
    SyntheticSegmenter,
    SyntheticTracker,
    dominant_instance_grid,
    generate_scene,
)
from .trainer import TrainConfig, train_embeddings


def _echo(args: argparse.Namespace) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    print(f"[splatlang] config: {json.dumps(config, default=str)}", file=sys.stderr)


def _load_synthetic_embedder(manifest: dict) -> SyntheticEmbedder:
    spec = manifest.get("synthetic")
    if spec is None:
        raise SystemExit(
            "scene manifest has no synthetic block; pass --features or a vector query"
        )
    cfg = SyntheticConfig(**spec)
    return SyntheticEmbedder.from_config(cfg)


def cmd_synth(args) -> None:
    cfg = SyntheticConfig(
        n_objects=args.objects,
        gaussians_per_object=args.gaussians,
        n_frames=args.frames,
        resolution=(args.height, args.width),
        noise_level=args.noise,
        scale_skew=args.skew,
        seed=args.seed,
        feature_dim=args.feature_dim,
    )
    bundle, frames = generate_scene(cfg)
    report = validate_scene(bundle, frames)
    if report:
        raise SystemExit(f"generated scene failed validation: {report}")
    fileio.save_scene(
        args.out,
        bundle,
        frames,
        feature_dim=cfg.feature_dim,
        extras={"synthetic": cfg.__dict__ | {"resolution": list(cfg.resolution)}},
    )
    print(f"wrote scene with {bundle.count} Gaussians, {len(frames)} frames to {args.out}")


def cmd_extract_masklets(args) -> None:
    scene_dir = Path(args.scene)
    bundle, frames, manifest = fileio.load_scene(scene_dir)
    if args.from_rids:
        grids = fileio.load_mask_grids(args.from_rids)
        segmenter, tracker = FileBackedSegmenter(grids), FileBackedTracker(grids)
    else:
        if bundle.instance_labels is None:
            raise SystemExit(
                "scene has no instance labels; synthetic segmentation needs them "
                "(use --from-rids for imported masks)"
            )
        segmenter = SyntheticSegmenter(bundle, args.mode, args.seed)
        tracker = SyntheticTracker(bundle)
    masklets = extract_masklets(frames, segmenter, tracker, kappa=args.kappa)
    grids = masklets_to_id_grids(masklets, frames.indices)
    mask_dir = scene_dir / "masks"
    mask_dir.mkdir(exist_ok=True)
    pattern = manifest["files"]["masks"]
    for t, grid in grids.items():
        fileio.write_region_ids(scene_dir / (pattern % t), grid)
    print(f"wrote {len(masklets)} masklets over {len(grids)} frames")


def cmd_build_bank(args) -> None:
    scene_dir = Path(args.scene)
    bundle, frames, manifest = fileio.load_scene(scene_dir)
    masklets = masklets_from_id_grids(fileio.load_mask_grids(scene_dir))
    if args.features_in:
        table = fileio.read_region_features(args.features_in)
        missing = [m.masklet_id for m in masklets if m.masklet_id not in table.entries]
        if missing:
            raise SystemExit(f"feature file lacks region ids {missing}")
    else:
        embedder = _load_synthetic_embedder(manifest)
        table = compute_region_embeddings(masklets, frames, embedder)
    fileio.write_region_features(scene_dir / args.features_out, table)

    # Latents are placeholders until train-codec rewrites them.
    entries = {}
    latent_dim = manifest["latent_dim"]
    for rid, rows in table.entries.items():
        phi_bar = weighted_average([(fe.vector, fe.pixel_count) for fe in rows])
        entries[rid] = BankEntry(
            phi_bar=phi_bar,
            latent=np.zeros(latent_dim),
            total_pixels=sum(fe.pixel_count for fe in rows),
        )
    fileio.write_bank(scene_dir / args.bank_out, RegionFeatureBank(entries=entries))
    print(f"wrote bank with {len(entries)} regions (latents pending train-codec)")


def cmd_train_codec(args) -> None:
    scene_dir = Path(args.scene)
    manifest = fileio.load_manifest(scene_dir)
    table = fileio.read_region_features(scene_dir / args.features_in)
    params, trace = train_codec(
        table.all_vectors(),
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        latent_dim=manifest["latent_dim"],
        seed=args.seed,
    )
    fileio.write_codec(scene_dir / args.codec_out, params)
    codec = LatentCodec.from_params(params)
    bank = fileio.read_bank(scene_dir / args.bank)
    entries = {
        rid: BankEntry(
            phi_bar=e.phi_bar,
            latent=np.asarray(codec.encode(e.phi_bar)),
            total_pixels=e.total_pixels,
        )
        for rid, e in bank.entries.items()
    }
    fileio.write_bank(scene_dir / args.bank, RegionFeatureBank(entries=entries))
    print(
        f"codec trained: epoch loss {trace[0]:.4f} -> {trace[-1]:.4f}; "
        f"bank latents updated"
    )


def cmd_build_gt(args) -> None:
    scene_dir = Path(args.scene)
    bundle, frames, manifest = fileio.load_scene(scene_dir)
    masklets = masklets_from_id_grids(fileio.load_mask_grids(scene_dir))
    bank = fileio.read_bank(scene_dir / args.bank)
    out_dir = scene_dir / args.out_dir
    out_dir.mkdir(exist_ok=True)
    for t in frames.indices:
        raster = assemble_groundtruth(masklets, bank, t)
        fileio.write_feature_raster(out_dir / f"t_{t:04d}.frs", raster)
    print(f"wrote {len(frames)} ground-truth rasters to {out_dir}")


def cmd_train_lang(args) -> None:
    scene_dir = Path(args.scene)
    bundle, frames, manifest = fileio.load_scene(scene_dir)
    gt_dir = scene_dir / args.gt_dir
    targets = [
        fileio.read_feature_raster(gt_dir / f"t_{t:04d}.frs") for t in frames.indices
    ]
    config = TrainConfig(
        steps=args.steps, learning_rate=args.lr, batch=args.batch, seed=args.seed
    )
    trained, trace = train_embeddings(bundle, frames, targets, config)
    fileio.write_gaussians(scene_dir / args.out, trained)
    trace_path = scene_dir / args.trace
    with trace_path.open("w") as fh:
        fh.write("step,loss\n")
        for i, value in enumerate(trace):
            fh.write(f"{i},{value:.8f}\n")
    print(
        f"trained embeddings over {config.steps} steps: "
        f"loss {trace[0]:.4f} -> {trace[-1]:.4f}"
    )


def _query_vector(args, manifest) -> np.ndarray:
    if args.vector:
        values = [float(x) for x in Path(args.vector).read_text().split()]
        return np.array(values)
    if args.text:
        embedder = _load_synthetic_embedder(manifest)
        return embedder.embed_text(args.text)
    raise SystemExit("pass --text or --vector")


def cmd_query(args) -> None:
    scene_dir = Path(args.scene)
    manifest = fileio.load_manifest(scene_dir)
    bundle_path = scene_dir / args.bundle
    if not bundle_path.exists():
        raise SystemExit(
            f"no trained bundle at {bundle_path}; run train-lang first"
        )
    bundle = fileio.read_gaussians(bundle_path)
    _, frames, _ = fileio.load_scene(scene_dir)
    bank = fileio.read_bank(scene_dir / args.bank)
    codec = LatentCodec.from_params(fileio.read_codec(scene_dir / args.codec))
    q = _query_vector(args, manifest)
    camera = frames.frame(args.frame).camera if args.mask_out else None

    if args.mode == "one-step":
        selected = one_step_query(q, codec, bundle, args.threshold)
        result_mask = (
            render_query_mask(selected, bundle, camera, args.alpha_cutoff)
            if camera is not None
            else None
        )
        matched = None
    else:
        result = two_step_query(
            q,
            bundle,
            bank,
            codec,
            threshold=args.threshold,
            use_dbscan=not args.no_dbscan,
            eps=args.eps,
            min_pts=args.min_pts,
            camera=camera,
            alpha_cutoff=args.alpha_cutoff,
        )
        selected, result_mask, matched = result.selected, result.mask, result.matched_region

    Path(args.indices_out).write_text(
        "\n".join(str(int(i)) for i in selected) + ("\n" if len(selected) else "")
    )
    if args.mask_out and result_mask is not None:
        fileio.write_pgm(args.mask_out, result_mask)
    print(
        f"selected {len(selected)} Gaussians"
        + (f" (step-1 region {matched})" if matched is not None else "")
    )


def cmd_eval(args) -> None:
    scene_dir = Path(args.scene)
    bundle_path = scene_dir / args.bundle
    if not bundle_path.exists():
        raise SystemExit(f"no trained bundle at {bundle_path}; run train-lang first")
    bundle = fileio.read_gaussians(bundle_path)
    _, frames, manifest = fileio.load_scene(scene_dir)
    if bundle.instance_labels is None:
        raise SystemExit("eval needs instance labels in the bundle")
    bank = fileio.read_bank(scene_dir / args.bank)
    codec = LatentCodec.from_params(fileio.read_codec(scene_dir / args.codec))
    embedder = _load_synthetic_embedder(manifest)
    camera = frames.frame(args.frame).camera
    grid = dominant_instance_grid(bundle, camera)

    records = []
    classes = sorted(set(int(k) for k in np.unique(bundle.instance_labels) if k >= 0))
    for k in classes:
        name = f"object_{k}"
        result = two_step_query(
            embedder.embed_text(name),
            bundle,
            bank,
            codec,
            threshold=args.threshold,
            use_dbscan=not args.no_dbscan,
            camera=camera,
        )
        iou3d = miou_3d(result.selected, bundle.instance_labels, k)
        gt_mask = grid == k
        loc = (
            loc_acc(result.mask, box_from_mask(gt_mask)) if gt_mask.any() else False
        )
        records.append(
            EvalRecord(query=name, iou=iou3d, macc_hit=iou3d > 0.25, loc_hit=loc)
        )
    write_report(args.out, records)
    mean_iou = float(np.mean([r.iou for r in records]))
    print(f"evaluated {len(records)} queries: mean 3D mIoU {mean_iou:.4f} -> {args.out}")


def cmd_ablate(args) -> None:
    cfg = SyntheticConfig(
        n_objects=args.objects,
        gaussians_per_object=args.gaussians,
        n_frames=args.frames,
        resolution=(args.height, args.width),
        noise_level=args.noise,
        scale_skew=args.skew,
        seed=args.seed,
    )
    art = ablation.run_pipeline(
        cfg,
        codec_epochs=args.codec_epochs,
        train_config=TrainConfig(steps=args.steps, learning_rate=args.lr, seed=args.seed),
    )
    report = ablation.ablation_report(art, threshold=args.threshold)
    lines = ["variant,miou,macc,extra"]
    for variant, row in report.items():
        extra = ";".join(
            f"{k}={v:.4f}" for k, v in row.items() if k not in ("miou", "macc")
        )
        lines.append(f"{variant},{row['miou']:.4f},{row['macc']:.4f},{extra}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatlang",
        description="Language-embedded Gaussian splat pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene directory")
    p.add_argument("--out", required=True)
    p.add_argument("--objects", type=int, default=8)
    p.add_argument("--gaussians", type=int, default=50)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--skew", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feature-dim", type=int, default=512)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract-masklets", help="merge proposals into masklets")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=("perfect", "oversplit", "dropout"), default="perfect")
    p.add_argument("--kappa", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--from-rids", help="directory of precomputed region-id rasters")
    p.set_defaults(func=cmd_extract_masklets)

    p = sub.add_parser("build-bank", help="region embeddings and averaged bank")
    p.add_argument("--scene", required=True)
    p.add_argument("--features-in", help="precomputed per-region embedding file")
    p.add_argument("--features-out", default="features.bin")
    p.add_argument("--bank-out", default="bank.bin")
    p.set_defaults(func=cmd_build_bank)

    p = sub.add_parser("train-codec", help="fit the latent codec")
    p.add_argument("--scene", required=True)
    p.add_argument("--features-in", default="features.bin")
    p.add_argument("--bank", default="bank.bin")
    p.add_argument("--codec-out", default="codec.bin")
    p.add_argument("--lr", type=float, default=0.0006)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("build-gt", help="assemble ground-truth rasters")
    p.add_argument("--scene", required=True)
    p.add_argument("--bank", default="bank.bin")
    p.add_argument("--out-dir", default="gt")
    p.set_defaults(func=cmd_build_gt)

    p = sub.add_parser("train-lang", help="train the language embeddings")
    p.add_argument("--scene", required=True)
    p.add_argument("--gt-dir", default="gt")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=0.0025)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="gaussians_trained.bin")
    p.add_argument("--trace", default="loss_trace.csv")
    p.set_defaults(func=cmd_train_lang)

    p = sub.add_parser("query", help="answer an open-vocabulary query")
    p.add_argument("--scene", required=True)
    p.add_argument("--bundle", default="gaussians_trained.bin")
    p.add_argument("--bank", default="bank.bin")
    p.add_argument("--codec", default="codec.bin")
    p.add_argument("--text")
    p.add_argument("--vector", help="file of whitespace-separated floats")
    p.add_argument("--mode", choices=("two-step", "one-step"), default="two-step")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--no-dbscan", action="store_true")
    p.add_argument("--eps", type=float)
    p.add_argument("--min-pts", type=int, default=8)
    p.add_argument("--alpha-cutoff", type=float, default=0.5)
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--indices-out", default="query_indices.txt")
    p.add_argument("--mask-out")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="query every class and write a CSV report")
    p.add_argument("--scene", required=True)
    p.add_argument("--bundle", default="gaussians_trained.bin")
    p.add_argument("--bank", default="bank.bin")
    p.add_argument("--codec", default="codec.bin")
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--no-dbscan", action="store_true")
    p.add_argument("--frame", type=int, default=1)
    p.add_argument("--out", default="eval_report.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="query-variant comparison on a synthetic scene")
    p.add_argument("--out", default="ablation_report.csv")
    p.add_argument("--objects", type=int, default=12)
    p.add_argument("--gaussians", type=int, default=40)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--skew", action="store_true", default=True)
    p.add_argument("--no-skew", dest="skew", action="store_false")
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--codec-epochs", type=int, default=300)
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--lr", type=float, default=0.0025)
    p.add_argument("--threshold", type=float, default=0.95)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _echo(args)
    try:
        args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # surface module errors with a nonzero exit
        print(f"[splatlang] error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
