"""Acceptance suite: one test per criterion, each printing a PASS line.

Pipeline-level criteria share two module-scoped runs: the clean
8-object retrieval scene and the 12-object scale-skewed ablation scene.
All tolerances are pinned here, none deferred.
"""

import shutil
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from splatlang.ablation import (
    DEFAULT_SWEEP,
    canonical_sweep,
    dbscan_loc_acc_experiment,
    one_step_sweep,
    two_step_miou,
)
from splatlang.features import assemble_groundtruth, weighted_average
from splatlang.masklets import extract_masklets, iou
from splatlang.metrics import iou_2d, loc_acc, macc, miou_3d
from splatlang.rasterizer import render_field
from splatlang.scene import GaussianBundle
from splatlang.synthetic import (
    SyntheticConfig,
    SyntheticSegmenter,
    SyntheticTracker,
    generate_scene,
)
from splatlang.trainer import language_loss

from conftest import make_camera, random_bundle
from oracles import (
    finite_difference,
    iou_brute_force,
    render_brute_force,
    weighted_average_brute_force,
)

def report(name):
    print(f"\nACCEPTANCE {name}: PASS")


def test_renderer_oracle():
    """Tiled renderer == brute-force compositing, 20 scenes, 1e-5, <10 s."""
    rng = np.random.default_rng(101)
    start = time.time()
    worst = 0.0
    for trial in range(20):
        count = int(rng.integers(1, 11))
        # Embeddings in [-0.1, 0.1]: rendering is linear in them, and the
        # scale bounds early-termination truncation (1e-4 floor x max
        # value) strictly under the 1e-5 criterion.
        bundle = random_bundle(
            rng, count=count, embed_scale=0.1, alpha_range=(0.05, 0.95)
        )
        camera = make_camera(resolution=(32, 32), z=3.5)
        ours = render_field(bundle, camera, "embeddings")
        oracle = render_brute_force(bundle, camera, bundle.embeddings)
        worst = max(worst, float(np.abs(ours - oracle).max()))
    elapsed = time.time() - start
    assert worst < 1e-5, f"max-abs deviation {worst:.2e}"
    assert elapsed < 10.0, f"renderer oracle took {elapsed:.1f}s"
    report(f"renderer-oracle (max-abs {worst:.1e}, {elapsed:.1f}s)")


def test_gradient_check():
    """Analytic embedding gradient vs central differences, <1e-3, <30 s."""
    from splatlang.features import FeatureRaster
    from splatlang.rasterizer import compute_contributions

    rng = np.random.default_rng(202)
    start = time.time()
    worst = 0.0
    done = 0
    while done < 10:
        bundle = random_bundle(rng, count=5, alpha_range=(0.3, 0.9))
        camera = make_camera(resolution=(24, 24), z=3.0)
        cont = compute_contributions(bundle, camera)
        coverage = cont.alpha_map() > 0.05
        if coverage.sum() < 10:
            continue
        gt = FeatureRaster(
            frame_index=1,
            data=rng.uniform(-1.0, 1.0, size=(24, 24, 3)),
            coverage=coverage,
        )
        rendered = render_field(bundle, camera, contributions=cont)
        residual = np.abs(rendered - gt.data)[coverage]
        if residual.min() <= 2.5e-4:  # resample: stay clear of the L1 kink
            continue
        _, grad = language_loss(bundle, camera, gt, contributions=cont)
        emb = bundle.embeddings.copy()

        def loss_fn():
            return language_loss(
                bundle.with_embeddings(emb), camera, gt, contributions=cont
            )[0]

        (fd,) = finite_difference(loss_fn, [emb], step=1e-4)
        rel = float(np.abs(grad - fd).max() / max(np.abs(fd).max(), 1e-12))
        worst = max(worst, rel)
        done += 1
    elapsed = time.time() - start
    assert worst < 1e-3, f"relative error {worst:.2e}"
    assert elapsed < 30.0, f"gradient check took {elapsed:.1f}s"
    report(f"gradient-check (rel err {worst:.1e}, {elapsed:.1f}s)")


def test_masklet_dedup():
    """Oversplit+duplicated proposals over 10 frames collapse to the true
    object count in >=95% of 20 seeds, <1 min."""

    class DuplicatingSegmenter:
        def __init__(self, inner):
            self.inner = inner

        def propose(self, frames, t):
            props = self.inner.propose(frames, t)
            return props + list(props)

    start = time.time()
    exact = 0
    for seed in range(20):
        cfg = SyntheticConfig(
            n_objects=5,
            gaussians_per_object=25,
            n_frames=10,
            resolution=(48, 48),
            noise_level=0.05,
            seed=seed,
            feature_dim=32,
        )
        bundle, frames = generate_scene(cfg)
        segmenter = DuplicatingSegmenter(SyntheticSegmenter(bundle, "oversplit", seed))
        mset = extract_masklets(frames, segmenter, SyntheticTracker(bundle), kappa=0.8)
        exact += len(mset) == cfg.n_objects
    elapsed = time.time() - start
    assert exact >= 19, f"only {exact}/20 seeds exact"
    assert elapsed < 60.0, f"dedup check took {elapsed:.1f}s"
    report(f"masklet-dedup ({exact}/20 exact, {elapsed:.1f}s)")


def test_groundtruth_consistency(retrieval_run):
    """Per-masklet ground-truth vectors are bitwise identical across frames."""
    art, _ = retrieval_run
    rasters = {
        t: assemble_groundtruth(art.masklets, art.bank, t)
        for t in art.frames.indices
    }
    checked = 0
    for m in art.masklets:
        reference = None
        for t in m.frame_indices:
            mask = m.per_frame[t]
            values = rasters[t].data[mask]
            assert (values == values[0]).all()  # constant within the region
            if reference is None:
                reference = values[0]
            else:
                assert (values[0] == reference).all()  # bitwise across frames
                checked += 1
    assert checked > 0
    report(f"groundtruth-consistency ({checked} cross-frame comparisons)")


def test_end_to_end_retrieval(retrieval_run):
    """Two-step query at 0.95 + spatial filter: mean 3D mIoU >= 0.90, <5 min."""
    art, pipeline_seconds = retrieval_run
    start = time.time()
    scores = two_step_miou(art, threshold=0.95, use_dbscan=True)
    elapsed = pipeline_seconds + (time.time() - start)
    mean = float(scores.mean())
    assert mean >= 0.90, f"mean 3D mIoU {mean:.3f} (per class {np.round(scores, 2)})"
    assert elapsed < 300.0, f"end-to-end took {elapsed:.0f}s"
    report(f"end-to-end-retrieval (mIoU {mean:.3f}, {elapsed:.0f}s)")


def test_two_step_vs_one_step(ablation_run):
    """Scale-skewed embedder: two-step at its default threshold beats the
    one-step baseline at the baseline's best swept threshold by >=0.10,
    and no single one-step threshold is near-optimal for every query."""
    art = ablation_run
    two = float(two_step_miou(art, threshold=0.95).mean())
    sweep = one_step_sweep(art, DEFAULT_SWEEP)
    best = float(sweep.mean(axis=1).max())
    assert two - best >= 0.10, f"two-step {two:.3f} vs one-step best {best:.3f}"

    per_query_opt = sweep.max(axis=0)
    universal = [
        float(DEFAULT_SWEEP[i])
        for i in range(len(DEFAULT_SWEEP))
        if (per_query_opt - sweep[i] <= 0.05).all()
    ]
    assert not universal, f"universal one-step thresholds exist: {universal}"
    report(
        f"two-step-vs-one-step (two-step {two:.3f}, one-step best {best:.3f}, "
        "no universal threshold)"
    )


def test_canonical_and_dbscan_ablation(ablation_run):
    """Canonical relevancy underperforms two-step strictly; dropping the
    spatial filter after injecting 10 matching far outliers lowers Loc.Acc."""
    art = ablation_run
    two = float(two_step_miou(art, threshold=0.95).mean())
    canonical_best = float(canonical_sweep(art, DEFAULT_SWEEP).mean(axis=1).max())
    assert canonical_best < two, f"canonical {canonical_best:.3f} !< two-step {two:.3f}"

    loc_with, loc_without = dbscan_loc_acc_experiment(
        art, n_outliers=10, threshold=0.95
    )
    assert loc_with > loc_without, f"Loc.Acc {loc_with:.3f} !> {loc_without:.3f}"
    report(
        f"canonical-and-dbscan (canonical {canonical_best:.3f} < two-step {two:.3f}; "
        f"Loc.Acc {loc_with:.2f} > {loc_without:.2f})"
    )


def test_metric_unit_suite():
    """Hand-computed metric examples exact; averages and IoU match
    brute-force oracles to 1e-12 on 1000 random cases."""
    # Hand-computed cases.
    m = np.zeros((4, 4), bool)
    m[0, 0] = True
    assert iou_2d(m, m) == 1.0
    assert iou_2d(np.zeros((4, 4), bool), m) == 0.0
    assert iou_2d(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 1.0
    a = np.zeros((2, 2), bool); a[0, 0] = a[0, 1] = True
    b = np.zeros((2, 2), bool); b[0, 1] = b[1, 1] = True
    assert abs(iou_2d(a, b) - 1.0 / 3.0) < 1e-15
    assert macc([1.0, 1.0]) == 1.0
    assert macc([0.3, 0.2]) == 0.5
    pred = np.zeros((10, 10), bool)
    pred[4:6, 4:6] = True
    assert loc_acc(pred, (3, 3, 6, 6))
    stray = pred.copy(); stray[0, 9] = True
    assert not loc_acc(stray, (4, 4, 5, 5))
    assert not loc_acc(np.zeros((5, 5), bool), (0, 0, 4, 4))
    labels = np.array([0, 0, 1, 1])
    assert miou_3d(np.array([2, 3]), labels, 1) == 1.0
    assert miou_3d(np.array([], dtype=int), labels, 1) == 0.0
    assert miou_3d(np.array([1, 2]), labels, 1) == 1.0 / 3.0

    # Oracle agreement on 1000 random cases each.
    rng = np.random.default_rng(303)
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        vectors = [rng.normal(size=4) for _ in range(n)]
        counts = [int(rng.integers(1, 500)) for _ in range(n)]
        total = sum((v * c for v, c in zip(vectors, counts)), np.zeros(4))
        if np.linalg.norm(total / sum(counts)) < 1e-6:
            continue
        ours = weighted_average(list(zip(vectors, counts)))
        oracle = weighted_average_brute_force(vectors, counts)
        assert np.abs(ours - oracle).max() < 1e-12
    for _ in range(1000):
        a = rng.random((5, 5)) > rng.random()
        b = rng.random((5, 5)) > rng.random()
        assert abs(iou(a, b) - iou_brute_force(a, b)) < 1e-12
    report("metric-unit-suite")


def test_format_roundtrips(tmp_path):
    """Every interchange format round-trips bitwise; corruption rejected."""
    from splatlang import fileio
    from splatlang.codec import init_params
    from splatlang.features import (
        BankEntry,
        FeatureRaster,
        FrameEmbedding,
        RegionEmbeddingTable,
        RegionFeatureBank,
    )

    rng = np.random.default_rng(404)

    def f32(shape):
        return rng.normal(size=shape).astype(np.float32).astype(np.float64)

    for trial in range(5):
        n = int(rng.integers(1, 20))
        d = int(rng.integers(1, 6))
        bundle = GaussianBundle(
            positions=f32((n, 3)),
            covariances=np.abs(f32((n, 6))),
            colors=np.clip(np.abs(f32((n, 3))), 0, 1),
            opacities=np.clip(np.abs(f32(n)), 0, 1),
            embeddings=f32((n, d)),
            instance_labels=rng.integers(0, 4, size=n) if trial % 2 else None,
        )
        path = tmp_path / f"g{trial}.bin"
        fileio.write_gaussians(path, bundle)
        back = fileio.read_gaussians(path)
        for field in ("positions", "covariances", "colors", "opacities", "embeddings"):
            assert (getattr(back, field) == getattr(bundle, field)).all()
        # Bitwise: a second write produces identical bytes.
        path2 = tmp_path / f"g{trial}b.bin"
        fileio.write_gaussians(path2, back)
        assert path.read_bytes() == path2.read_bytes()

        grid = rng.integers(0, 50, size=(int(rng.integers(1, 30)), int(rng.integers(1, 30)))).astype(np.uint16)
        gpath = tmp_path / f"r{trial}.rid"
        fileio.write_region_ids(gpath, grid)
        assert (fileio.read_region_ids(gpath) == grid).all()

        bank = RegionFeatureBank(
            entries={
                int(i): BankEntry(f32(16), f32(3), int(rng.integers(1, 10**6)))
                for i in rng.choice(100, size=int(rng.integers(1, 6)), replace=False)
            }
        )
        bpath = tmp_path / f"b{trial}.bin"
        fileio.write_bank(bpath, bank)
        back_bank = fileio.read_bank(bpath)
        assert back_bank.ids == bank.ids
        for rid in bank.ids:
            assert (back_bank.entries[rid].phi_bar == bank.entries[rid].phi_bar).all()

        h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        coverage = rng.random((h, w)) > 0.5
        raster = FeatureRaster(
            frame_index=trial, data=f32((h, w, 3)) * coverage[:, :, None], coverage=coverage
        )
        rpath = tmp_path / f"f{trial}.frs"
        fileio.write_feature_raster(rpath, raster)
        back_raster = fileio.read_feature_raster(rpath)
        assert (back_raster.data == raster.data).all()
        assert (back_raster.coverage == raster.coverage).all()

        params = init_params(
            feature_dim=16, latent_dim=3, encoder_widths=(8, 3), decoder_widths=(8, 16),
            seed=trial,
        )
        for arrays in (params.encoder_weights, params.encoder_biases,
                       params.decoder_weights, params.decoder_biases):
            for i, arr in enumerate(arrays):
                arrays[i] = arr.astype(np.float32).astype(np.float64)
        cpath = tmp_path / f"c{trial}.bin"
        fileio.write_codec(cpath, params)
        back_params = fileio.read_codec(cpath)
        for x, y in zip(params.all_arrays(), back_params.all_arrays()):
            assert (x == y).all()

        table = RegionEmbeddingTable(
            entries={
                1: [FrameEmbedding(frame_index=t, vector=f32(8), pixel_count=int(rng.integers(1, 999)))
                    for t in range(1, int(rng.integers(2, 5)))]
            }
        )
        tpath = tmp_path / f"t{trial}.bin"
        fileio.write_region_features(tpath, table)
        back_table = fileio.read_region_features(tpath)
        for fe_in, fe_out in zip(table.entries[1], back_table.entries[1]):
            assert (fe_in.vector == fe_out.vector).all()

        mask = rng.random((h, w)) > 0.5
        mpath = tmp_path / f"m{trial}.pgm"
        fileio.write_pgm(mpath, mask)
        assert (fileio.read_pgm(mpath) == mask).all()

    # Corruption cases: bad magic, truncation, trailing bytes, header lies.
    corrupt_cases = 0
    for name in ("g0.bin", "r0.rid", "b0.bin", "f0.frs", "c0.bin", "t0.bin"):
        path = tmp_path / name
        reader = {
            "g0.bin": fileio.read_gaussians,
            "r0.rid": fileio.read_region_ids,
            "b0.bin": fileio.read_bank,
            "f0.frs": fileio.read_feature_raster,
            "c0.bin": fileio.read_codec,
            "t0.bin": fileio.read_region_features,
        }[name]
        raw = path.read_bytes()
        bad_magic = b"XXXX" + raw[4:]
        (tmp_path / "bad").write_bytes(bad_magic)
        with pytest.raises(fileio.FormatError):
            reader(tmp_path / "bad")
        (tmp_path / "bad").write_bytes(raw[:-1])
        with pytest.raises(fileio.FormatError):
            reader(tmp_path / "bad")
        (tmp_path / "bad").write_bytes(raw + b"\x00")
        with pytest.raises(fileio.FormatError):
            reader(tmp_path / "bad")
        corrupt_cases += 3
    report(f"format-roundtrip (5 randomized rounds, {corrupt_cases} corruption cases)")


FRONTEND = Path(__file__).resolve().parents[1] / "frontend"


@pytest.mark.skipif(
    shutil.which("node") is None or not (FRONTEND / "dist" / "cli.js").exists(),
    reason="frontend adapter not built (secondary criterion is skippable)",
)
def test_secondary_adapter_contract(tmp_path):
    """[SECONDARY] The extractor adapter's files pass the primary validator
    and load end-to-end through build-bank."""
    from splatlang import fileio

    clip = tmp_path / "clip"
    clip.mkdir()
    # A 3-frame toy clip: one bright blob moving across a dark background.
    h, w = 32, 32
    for t in range(1, 4):
        rgb = np.zeros((h, w, 3))
        r, c = 10 + 4 * t, 8 + 5 * t
        rgb[r - 4 : r + 4, c - 4 : c + 4] = [0.9, 0.25, 0.2]
        fileio.write_ppm(clip / f"t_{t:04d}.ppm", rgb)

    out = tmp_path / "emitted"
    proc = subprocess.run(
        [
            "node",
            str(FRONTEND / "dist" / "cli.js"),
            "extract",
            "--frames",
            str(clip),
            "--out",
            str(out),
            "--backend",
            "toy",
            "--feature-dim",
            "48",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr

    # Emitted rasters parse, share one tracked id across all 3 frames.
    ids_seen = []
    for t in range(1, 4):
        grid = fileio.read_region_ids(out / "masks" / f"t_{t:04d}.rid")
        assert grid.shape == (h, w)
        nonzero = np.unique(grid[grid > 0])
        assert nonzero.size >= 1
        ids_seen.append(set(int(x) for x in nonzero))
    tracked = set.intersection(*ids_seen)
    assert tracked, "no region id persists across all frames"

    table = fileio.read_region_features(out / "features.bin")
    for rows in table.entries.values():
        for fe in rows:
            assert abs(np.linalg.norm(fe.vector) - 1.0) < 1e-5

    # Load end-to-end through build-bank on a scene assembled around the clip.
    scene = tmp_path / "scene"
    run = subprocess.run(
        [sys.executable, "-m", "splatlang", "synth", "--out", str(scene),
         "--objects", "1", "--gaussians", "4", "--frames", "3",
         "--height", "32", "--width", "32", "--feature-dim", "48", "--seed", "0"],
        capture_output=True, text=True,
    )
    assert run.returncode == 0, run.stderr
    for t in range(1, 4):
        (scene / "masks" / f"t_{t:04d}.rid").write_bytes(
            (out / "masks" / f"t_{t:04d}.rid").read_bytes()
        )
    run = subprocess.run(
        [sys.executable, "-m", "splatlang", "build-bank", "--scene", str(scene),
         "--features-in", str(out / "features.bin")],
        capture_output=True, text=True,
    )
    assert run.returncode == 0, run.stderr
    bank = fileio.read_bank(scene / "bank.bin")
    assert len(bank) >= 1
    report("secondary-adapter-contract")
