"""End-to-end synthetic pipeline runs and ablation experiments.

One entry point builds the whole chain on a synthetic scene (masklets,
region embeddings, codec, bank, ground truth, embedding training); the
experiment helpers then score query variants against the scene's
instance labels:

  * two-step retrieval at its default threshold,
  * the one-step baseline swept over a threshold grid,
  * canonical-phrase relevancy swept over its own grid,
  * spatial filtering on/off with injected far-outlier Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import LatentCodec
from .features import (
    RegionEmbeddingTable,
    RegionFeatureBank,
    assemble_groundtruth,
    build_bank_from_table,
    compute_region_embeddings,
)
from .masklets import MaskletSet, extract_masklets
from .metrics import loc_acc, macc, miou_3d
from .masklets import box_from_mask
from .query import (
    CANONICAL_PHRASES,
    canonical_relevancy,
    dbscan_filter,
    one_step_query,
    render_query_mask,
    step1_retrieve,
    step2_select,
    two_step_query,
)
from .scene import FrameSequence, GaussianBundle
from .synthetic import (
    SyntheticConfig,
    SyntheticEmbedder,
    SyntheticSegmenter,
    SyntheticTracker,
    dominant_instance_grid,
    generate_scene,
)
from .trainer import TrainConfig, train_embeddings

DEFAULT_SWEEP = np.round(np.arange(0.0, 1.0001, 0.05), 2)


@dataclass
class PipelineArtifacts:
    config: SyntheticConfig
    bundle: GaussianBundle  # trained embeddings
    frames: FrameSequence
    masklets: MaskletSet
    table: RegionEmbeddingTable
    codec: LatentCodec
    bank: RegionFeatureBank
    embedder: SyntheticEmbedder
    loss_trace: np.ndarray

    def query_vector(self, k: int) -> np.ndarray:
        return self.embedder.embed_text(f"object_{k}")


def run_pipeline(
    cfg: SyntheticConfig,
    segmenter_mode: str = "perfect",
    codec_epochs: int = 200,
    train_config: TrainConfig | None = None,
) -> PipelineArtifacts:
    """Full chain on a synthetic scene; every stage seeded from cfg."""
    bundle, frames = generate_scene(cfg)
    embedder = SyntheticEmbedder.from_config(cfg)
    masklets = extract_masklets(
        frames,
        SyntheticSegmenter(bundle, segmenter_mode, cfg.seed),
        SyntheticTracker(bundle),
    )
    table = compute_region_embeddings(masklets, frames, embedder)
    codec = LatentCodec(
        latent_dim=cfg.latent_dim, epochs=codec_epochs, seed=cfg.seed
    )
    codec.fit(table.all_vectors())
    bank = build_bank_from_table(table, codec)
    targets = [assemble_groundtruth(masklets, bank, t) for t in frames.indices]
    if train_config is None:
        train_config = TrainConfig(steps=1500, learning_rate=0.01, seed=cfg.seed)
    trained, trace = train_embeddings(bundle, frames, targets, train_config)
    return PipelineArtifacts(
        config=cfg,
        bundle=trained,
        frames=frames,
        masklets=masklets,
        table=table,
        codec=codec,
        bank=bank,
        embedder=embedder,
        loss_trace=trace,
    )


def two_step_miou(
    art: PipelineArtifacts,
    threshold: float = 0.95,
    use_dbscan: bool = True,
) -> np.ndarray:
    """Per-class 3D mIoU of the two-step query."""
    scores = []
    for k in range(art.config.n_objects):
        result = two_step_query(
            art.query_vector(k),
            art.bundle,
            art.bank,
            art.codec,
            threshold=threshold,
            use_dbscan=use_dbscan,
        )
        scores.append(miou_3d(result.selected, art.bundle.instance_labels, k))
    return np.array(scores)


def one_step_sweep(
    art: PipelineArtifacts, thresholds=DEFAULT_SWEEP
) -> np.ndarray:
    """(n_thresholds, n_classes) 3D mIoU matrix for the one-step baseline."""
    out = np.zeros((len(thresholds), art.config.n_objects))
    for i, threshold in enumerate(thresholds):
        for k in range(art.config.n_objects):
            idx = one_step_query(
                art.query_vector(k), art.codec, art.bundle, float(threshold)
            )
            out[i, k] = miou_3d(idx, art.bundle.instance_labels, k)
    return out


def canonical_sweep(
    art: PipelineArtifacts, thresholds=DEFAULT_SWEEP
) -> np.ndarray:
    """(n_thresholds, n_classes) 3D mIoU for canonical-phrase relevancy.

    Canonical phrase embeddings are noise draws unrelated to any class
    prototype, mirroring generic phrases."""
    rng = np.random.default_rng([art.config.seed, 1234])
    canon = rng.standard_normal((len(CANONICAL_PHRASES), art.config.feature_dim))
    canon /= np.linalg.norm(canon, axis=1, keepdims=True)
    out = np.zeros((len(thresholds), art.config.n_objects))
    for k in range(art.config.n_objects):
        scores = canonical_relevancy(
            art.query_vector(k), art.codec, art.bundle, canon
        )
        for i, threshold in enumerate(thresholds):
            idx = np.nonzero(scores >= threshold)[0]
            out[i, k] = miou_3d(idx, art.bundle.instance_labels, k)
    return out


def inject_outliers(
    art: PipelineArtifacts, n_outliers: int = 10, distance: float = 10.0
) -> GaussianBundle:
    """Add far-away Gaussians whose embeddings match real class latents.

    The outliers sit well outside the object cluster but inside the
    camera frustum, so they pollute both 3D selections and rendered
    masks until the spatial filter drops them.
    """
    rng = np.random.default_rng([art.config.seed, 99])
    k = art.config.n_objects
    base = art.bundle
    scale = float(np.abs(base.positions).max()) + distance
    positions = []
    embeddings = []
    labels = []
    for i in range(n_outliers):
        cls = i % k
        angle = 2.0 * np.pi * i / n_outliers
        positions.append(
            [scale * np.cos(angle), scale * np.sin(angle), rng.uniform(-1, 1)]
        )
        embeddings.append(art.bank.entries[sorted(art.bank.entries)[cls]].latent)
        labels.append(-2)  # outliers belong to no instance
    cov = np.zeros((n_outliers, 6))
    cov[:, [0, 3, 5]] = 0.04
    return GaussianBundle(
        positions=np.vstack([base.positions, positions]),
        covariances=np.vstack([base.covariances, cov]),
        colors=np.vstack([base.colors, np.full((n_outliers, 3), 0.5)]),
        opacities=np.concatenate([base.opacities, np.full(n_outliers, 0.9)]),
        embeddings=np.vstack([base.embeddings, embeddings]),
        instance_labels=np.concatenate([base.instance_labels, labels]),
    )


def dbscan_loc_acc_experiment(
    art: PipelineArtifacts,
    n_outliers: int = 10,
    threshold: float = 0.95,
    frame_index: int = 1,
) -> tuple[float, float]:
    """Loc.Acc over classes with and without the spatial filter, on a
    bundle polluted by far outliers that match the queried embeddings."""
    polluted = inject_outliers(art, n_outliers=n_outliers)
    camera = art.frames.frame(frame_index).camera
    grid = dominant_instance_grid(art.bundle, camera)
    hits_with, hits_without = [], []
    for k in range(art.config.n_objects):
        gt_mask = grid == k
        if not gt_mask.any():
            continue
        gt_box = box_from_mask(gt_mask)
        masklet_id, phi_star = step1_retrieve(art.query_vector(k), art.bank)
        raw = step2_select(phi_star, art.codec, polluted, threshold)
        filtered = dbscan_filter(raw, polluted)
        mask_without = render_query_mask(raw, polluted, camera)
        mask_with = render_query_mask(filtered, polluted, camera)
        hits_without.append(loc_acc(mask_without, gt_box))
        hits_with.append(loc_acc(mask_with, gt_box))
    return float(np.mean(hits_with)), float(np.mean(hits_without))


def ablation_report(
    art: PipelineArtifacts, threshold: float = 0.95
) -> dict[str, dict[str, float]]:
    """Summary table: variant -> {miou, macc} (plus loc_acc where defined)."""
    sweep = one_step_sweep(art)
    best_row = int(np.argmax(sweep.mean(axis=1)))
    canonical = canonical_sweep(art)
    best_canon = int(np.argmax(canonical.mean(axis=1)))
    two_step = two_step_miou(art, threshold=threshold)
    two_step_raw = two_step_miou(art, threshold=threshold, use_dbscan=False)
    loc_with, loc_without = dbscan_loc_acc_experiment(art, threshold=threshold)
    return {
        "two_step": {
            "miou": float(two_step.mean()),
            "macc": macc(two_step),
            "loc_acc_outliers": loc_with,
        },
        "two_step_no_dbscan": {
            "miou": float(two_step_raw.mean()),
            "macc": macc(two_step_raw),
            "loc_acc_outliers": loc_without,
        },
        "one_step_best": {
            "miou": float(sweep[best_row].mean()),
            "macc": macc(sweep[best_row]),
            "threshold": float(DEFAULT_SWEEP[best_row]),
        },
        "canonical_best": {
            "miou": float(canonical[best_canon].mean()),
            "macc": macc(canonical[best_canon]),
            "threshold": float(DEFAULT_SWEEP[best_canon]),
        },
    }
