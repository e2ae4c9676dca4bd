import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splatlang.scene import CameraPose, Frame, FrameSequence, GaussianBundle


def make_camera(resolution=(32, 32), focal=50.0, z=4.0):
    """Axis-aligned camera at distance z looking down +z."""
    h, w = resolution
    return CameraPose(
        rotation=np.eye(3),
        translation=np.array([0.0, 0.0, z]),
        focal=(focal, focal),
        principal=((w - 1) / 2.0, (h - 1) / 2.0),
        resolution=resolution,
    )


def random_bundle(rng, count=8, latent_dim=3, spread=0.6, embed_scale=1.0,
                  alpha_range=(0.1, 0.9), with_labels=False):
    """Random splats near the origin, in front of the default camera."""
    positions = rng.uniform(-spread, spread, size=(count, 3))
    scales = rng.uniform(0.02, 0.08, size=count)
    covariances = np.zeros((count, 6))
    covariances[:, 0] = scales**2
    covariances[:, 3] = (scales * rng.uniform(0.7, 1.3, size=count)) ** 2
    covariances[:, 5] = (scales * rng.uniform(0.7, 1.3, size=count)) ** 2
    return GaussianBundle(
        positions=positions,
        covariances=covariances,
        colors=rng.uniform(0, 1, size=(count, 3)),
        opacities=rng.uniform(*alpha_range, size=count),
        embeddings=rng.uniform(-embed_scale, embed_scale, size=(count, latent_dim)),
        instance_labels=np.arange(count) if with_labels else None,
    )


def single_frame_sequence(camera, rgb=None):
    return FrameSequence(frames=(Frame(index=1, camera=camera, rgb=rgb),))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


RETRIEVAL_SEED = 0
ABLATION_SEED = 5


@pytest.fixture(scope="session")
def retrieval_run():
    """The clean 8-object end-to-end pipeline run (shared, ~20 s)."""
    import time

    from splatlang.ablation import run_pipeline
    from splatlang.synthetic import SyntheticConfig
    from splatlang.trainer import TrainConfig

    cfg = SyntheticConfig(
        n_objects=8,
        gaussians_per_object=50,
        n_frames=20,
        resolution=(64, 64),
        noise_level=0.05,
        seed=RETRIEVAL_SEED,
    )
    start = time.time()
    art = run_pipeline(
        cfg,
        codec_epochs=300,
        train_config=TrainConfig(steps=5000, learning_rate=0.0025, seed=RETRIEVAL_SEED),
    )
    return art, time.time() - start


@pytest.fixture(scope="session")
def ablation_run():
    """The 12-object scale-skewed pipeline run (shared, ~15 s)."""
    from splatlang.ablation import run_pipeline
    from splatlang.synthetic import SyntheticConfig
    from splatlang.trainer import TrainConfig

    cfg = SyntheticConfig(
        n_objects=12,
        gaussians_per_object=40,
        n_frames=16,
        resolution=(64, 64),
        noise_level=0.5,
        scale_skew=True,
        seed=ABLATION_SEED,
    )
    return run_pipeline(
        cfg,
        codec_epochs=300,
        train_config=TrainConfig(steps=4000, learning_rate=0.0025, seed=ABLATION_SEED),
    )
