"""Optimizes per-Gaussian language embeddings against ground-truth rasters.

The objective is the mean absolute difference between the rendered
feature image and the ground truth over covered pixels. Rendering is
linear in the embeddings with fixed weights (geometry is frozen), so the
objective is convex and its subgradient is exact:

    d loss / d l_i[d] = mean_p w_i(p) * sign(render[p, d] - gt[p, d])

with sign(0) = 0 and the mean over covered pixels and channels.

Because the compositing weights never change, the per-frame
:class:`~splatlang.rasterizer.PixelContributions` are computed once and
reused for every step — the training loop is just sparse matrix products
and adaptive-moment updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .features import FeatureRaster
from .optim import Adam
from .rasterizer import PixelContributions, compute_contributions
from .scene import CameraPose, FrameSequence, GaussianBundle

DIVERGENCE_CEILING = 1e12


class NoCoverageError(ValueError):
    """A ground-truth raster with no covered pixels cannot supervise."""


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    learning_rate: float = 0.0025
    batch: int = 1  # frames per step, visited in random order
    loss_mask: bool = True  # restrict the loss to covered pixels
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


def _loss_and_grad(
    embeddings: np.ndarray,
    weight_matrix: sp.csr_matrix,
    gt_flat: np.ndarray,
    covered: np.ndarray,
) -> tuple[float, np.ndarray]:
    if covered.size == 0:
        raise NoCoverageError("ground-truth raster covers no pixels")
    rendered = weight_matrix @ embeddings  # (P, D)
    residual = rendered[covered] - gt_flat[covered]
    depth = embeddings.shape[1]
    scale = 1.0 / (covered.size * depth)
    loss = float(np.abs(residual).sum() * scale)
    sign = np.sign(residual) * scale
    grad = (weight_matrix[covered].T @ sign).astype(np.float64)
    return loss, grad


def language_loss(
    bundle: GaussianBundle,
    camera: CameraPose,
    gt: FeatureRaster,
    contributions: PixelContributions | None = None,
) -> tuple[float, np.ndarray]:
    """Mean-abs feature loss and its gradient w.r.t. the embeddings."""
    if gt.depth != bundle.latent_dim:
        raise ValueError(
            f"raster depth {gt.depth} != embedding dim {bundle.latent_dim}"
        )
    if contributions is None:
        contributions = compute_contributions(bundle, camera)
    h, w = contributions.resolution
    covered = np.nonzero(gt.coverage.ravel())[0]
    return _loss_and_grad(
        bundle.embeddings,
        contributions.to_csr(),
        gt.data.reshape(h * w, gt.depth),
        covered,
    )


def train_embeddings(
    bundle: GaussianBundle,
    frames: FrameSequence,
    targets: list[FeatureRaster],
    config: TrainConfig = TrainConfig(),
) -> tuple[GaussianBundle, np.ndarray]:
    """Run the optimization; returns the updated bundle and the loss trace.

    Geometry is untouched; the per-frame compositing weights are computed
    once up front and shared by all steps.
    """
    if len(targets) != len(frames):
        raise ValueError(
            f"need one target per frame: {len(targets)} targets, {len(frames)} frames"
        )
    by_frame = {gt.frame_index: gt for gt in targets}
    prepared = []
    for frame in frames:
        gt = by_frame[frame.index]
        if gt.depth != bundle.latent_dim:
            raise ValueError(
                f"raster depth {gt.depth} != embedding dim {bundle.latent_dim}"
            )
        cont = compute_contributions(bundle, frame.camera)
        h, w = cont.resolution
        if config.loss_mask:
            covered = np.nonzero(gt.coverage.ravel())[0]
        else:
            covered = np.arange(h * w)
        prepared.append(
            (cont.to_csr(), gt.data.reshape(h * w, gt.depth), covered)
        )

    embeddings = bundle.embeddings.copy()
    opt = Adam(config.learning_rate)
    rng = np.random.default_rng(config.seed)
    queue: list[int] = []
    trace = np.zeros(config.steps)
    for step in range(config.steps):
        while len(queue) < config.batch:
            queue.extend(rng.permutation(len(prepared)).tolist())
        picks = [queue.pop(0) for _ in range(config.batch)]
        loss_sum = 0.0
        grad_sum = np.zeros_like(embeddings)
        for k in picks:
            weight_matrix, gt_flat, covered = prepared[k]
            loss, grad = _loss_and_grad(embeddings, weight_matrix, gt_flat, covered)
            loss_sum += loss
            grad_sum += grad
        loss_mean = loss_sum / len(picks)
        if not np.isfinite(loss_mean) or loss_mean > DIVERGENCE_CEILING:
            raise TrainingDivergedError(
                f"embedding training diverged at step {step} (loss={loss_mean:.3e})"
            )
        trace[step] = loss_mean
        opt.step([embeddings], [grad_sum / len(picks)])
    return bundle.with_embeddings(embeddings), trace


class LanguageEmbeddingTrainer(BaseEstimator):
    """Estimator facade over :func:`train_embeddings`."""

    def __init__(
        self,
        steps: int = 3000,
        learning_rate: float = 0.0025,
        batch: int = 1,
        loss_mask: bool = True,
        seed: int = 0,
    ):
        self.steps = steps
        self.learning_rate = learning_rate
        self.batch = batch
        self.loss_mask = loss_mask
        self.seed = seed

    def fit(self, bundle: GaussianBundle, frames: FrameSequence, targets):
        config = TrainConfig(
            steps=self.steps,
            learning_rate=self.learning_rate,
            batch=self.batch,
            loss_mask=self.loss_mask,
            seed=self.seed,
        )
        self.bundle_, self.loss_trace_ = train_embeddings(
            bundle, frames, targets, config
        )
        return self

    def predict(self, frames: FrameSequence) -> list[np.ndarray]:
        """Render the trained embeddings for each frame."""
        if not hasattr(self, "bundle_"):
            raise NotFittedError("LanguageEmbeddingTrainer is not fitted")
        from .rasterizer import render_field

        return [render_field(self.bundle_, f.camera, "embeddings") for f in frames]
