"""Deterministic synthetic scenes and stand-in models for pipeline testing.

Scenes are clusters of Gaussian blobs (one per object, distinct colors)
viewed from an orbiting camera ring. The stand-in segmenter reads the
rendered dominant-instance id per pixel, the stand-in tracker maps a
seed box to the instance that owns most of its pixels, and the stand-in
embedder maps a masked image to its object's class prototype plus
bounded noise. Everything is a pure function of (config, seed), so any
pipeline stage can be verified end to end without real models.

With ``scale_skew`` on, the embedder multiplies class k's image
embeddings by a fixed per-class factor in [0.3, 1.0]. Cosine comparisons
renormalize, so the skew's only channel of influence is the codec's
training distribution — modeling image/text embedders whose norms are
not calibrated across classes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .masklets import Box, Masklet, RegionMask
from .rasterizer import compute_contributions, render_field
from .scene import CameraPose, Frame, FrameSequence, GaussianBundle

BLOB_RADIUS = 0.6
MIN_SEPARATION = 4.0 * BLOB_RADIUS
# A pixel belongs to an instance only when solidly covered; faint
# silhouette-edge pixels (low accumulated opacity) are background. Edge
# pixels cannot be matched by any embedding assignment (rendered norm is
# capped by the accumulated opacity), so including them both poisons the
# supervision and pollutes the evaluation masks.
BACKGROUND_ALPHA = 0.6
OVERSPLIT_PROB = 0.5
DROPOUT_PROB = 0.3
SKEW_RANGE = (0.3, 1.0)


@dataclass(frozen=True)
class SyntheticConfig:
    n_objects: int = 8
    gaussians_per_object: int = 50
    n_frames: int = 20
    resolution: tuple[int, int] = (64, 64)
    noise_level: float = 0.05  # sigma_e, embedding noise magnitude
    scale_skew: bool = False
    seed: int = 0
    feature_dim: int = 512
    latent_dim: int = 3

    def __post_init__(self):
        if min(self.n_objects, self.gaussians_per_object, self.n_frames) < 1:
            raise ValueError("all counts must be >= 1")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        object.__setattr__(self, "resolution", tuple(self.resolution))

    @property
    def class_names(self) -> list[str]:
        return [f"object_{k}" for k in range(self.n_objects)]


def class_colors(n: int) -> np.ndarray:
    """Distinct saturated colors, one per class, via an HSV hue wheel."""
    hues = np.arange(n) / max(n, 1)
    h6 = hues * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    v, s = 0.9, 0.85
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    lut = np.array(
        [
            [np.full(n, v), t, np.full(n, p)],
            [q, np.full(n, v), np.full(n, p)],
            [np.full(n, p), np.full(n, v), t],
            [np.full(n, p), q, np.full(n, v)],
            [t, np.full(n, p), np.full(n, v)],
            [np.full(n, v), np.full(n, p), q],
        ]
    )  # (6, 3, n)
    return lut[i, :, np.arange(n)]


def _orbit_camera(
    angle: float, distance: float, height: float, focal: float, resolution
) -> CameraPose:
    h, w = resolution
    position = np.array(
        [distance * np.cos(angle), distance * np.sin(angle), height]
    )
    forward = -position / np.linalg.norm(position)
    up_world = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up_world)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ position
    return CameraPose(
        rotation=rotation,
        translation=translation,
        focal=(focal, focal),
        principal=((w - 1) / 2.0, (h - 1) / 2.0),
        resolution=(h, w),
    )


def generate_scene(cfg: SyntheticConfig) -> tuple[GaussianBundle, FrameSequence]:
    """Blob objects at separated centers plus an orbiting camera ring."""
    rng = np.random.default_rng(cfg.seed)
    k = cfg.n_objects

    half_width = max(1.8, 1.1 * BLOB_RADIUS * k ** (1 / 3) * 2.0)
    centers: list[np.ndarray] = []
    while len(centers) < k:
        cand = rng.uniform(-half_width, half_width, size=3)
        if all(np.linalg.norm(cand - c) >= MIN_SEPARATION for c in centers):
            centers.append(cand)
        else:
            # Expand slowly so dense configurations terminate.
            half_width *= 1.01
    centers = np.stack(centers)

    g = cfg.gaussians_per_object
    n = k * g
    # Splats sit on a spherical shell around each center (splat scenes
    # model surfaces): every one faces the orbiting camera somewhere, so
    # none is permanently occluded by its own object.
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = BLOB_RADIUS * (1.0 + rng.normal(0.0, 0.05, size=(n, 1)))
    positions = np.repeat(centers, g, axis=0) + directions * radii
    scales = rng.uniform(0.06, 0.12, size=n)
    covariances = np.zeros((n, 6))
    covariances[:, 0] = scales**2
    covariances[:, 3] = scales**2
    covariances[:, 5] = scales**2
    opacities = rng.uniform(0.55, 0.9, size=n)
    palette = class_colors(k)
    colors = np.clip(
        np.repeat(palette, g, axis=0) + rng.uniform(-0.02, 0.02, size=(n, 3)), 0, 1
    )
    labels = np.repeat(np.arange(k), g)
    bundle = GaussianBundle(
        positions=positions,
        covariances=covariances,
        colors=colors,
        opacities=opacities,
        embeddings=np.zeros((n, cfg.latent_dim)),
        instance_labels=labels,
    )

    h, w = cfg.resolution
    scene_radius = float(np.linalg.norm(centers, axis=1).max()) + 1.0
    distance = 3.2 * scene_radius
    height = 0.45 * distance
    dist_to_origin = float(np.hypot(distance, height))
    focal = 0.5 * min(h, w) * (dist_to_origin - scene_radius) / (1.15 * scene_radius)

    frames = []
    for t in range(1, cfg.n_frames + 1):
        angle = 2.0 * np.pi * (t - 1) / cfg.n_frames
        camera = _orbit_camera(angle, distance, height, focal, cfg.resolution)
        rgb = np.clip(render_field(bundle, camera, "colors"), 0.0, 1.0)
        frames.append(Frame(index=t, camera=camera, rgb=rgb))
    return bundle, FrameSequence(frames=tuple(frames))


def dominant_instance_grid(
    bundle: GaussianBundle, camera: CameraPose
) -> np.ndarray:
    """Per-pixel argmax of compositing weight grouped by instance label.

    Background pixels (accumulated opacity below threshold) get -1.
    """
    if bundle.instance_labels is None:
        raise ValueError("bundle has no instance labels")
    cont = compute_contributions(bundle, camera)
    h, w = cont.resolution
    labels = bundle.instance_labels
    k = int(labels.max()) + 1
    onehot = np.zeros((bundle.count, k))
    onehot[np.arange(bundle.count), labels] = 1.0
    per_label = np.asarray(cont.to_csr() @ onehot)  # (P, K)
    grid = per_label.argmax(axis=1).astype(np.int64)
    grid[per_label.sum(axis=1) < BACKGROUND_ALPHA] = -1
    return grid.reshape(h, w)


class SyntheticSegmenter:
    """Per-frame proposals from the dominant-instance rendering.

    Modes: "perfect" (one mask per visible instance), "oversplit" (each
    mask split along its box's long axis with probability 0.5) and
    "dropout" (each mask dropped with probability 0.3).
    """

    MODES = ("perfect", "oversplit", "dropout")

    def __init__(self, bundle: GaussianBundle, mode: str = "perfect", seed: int = 0):
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}, got {mode!r}")
        self.bundle = bundle
        self.mode = mode
        self.seed = seed
        self._grids: dict[int, np.ndarray] = {}

    def _grid(self, frames: FrameSequence, t: int) -> np.ndarray:
        if t not in self._grids:
            self._grids[t] = dominant_instance_grid(
                self.bundle, frames.frame(t).camera
            )
        return self._grids[t]

    def propose(self, frames: FrameSequence, t: int) -> list[RegionMask]:
        grid = self._grid(frames, t)
        masks = [
            grid == inst for inst in np.unique(grid) if inst >= 0
        ]
        rng = np.random.default_rng(
            [self.seed, t, self.MODES.index(self.mode)]
        )
        out: list[RegionMask] = []
        for mask in masks:
            if self.mode == "dropout" and rng.random() < DROPOUT_PROB:
                continue
            if self.mode == "oversplit" and rng.random() < OVERSPLIT_PROB:
                r0, c0, r1, c1 = _mask_box(mask)
                first = np.zeros_like(mask)
                if (r1 - r0) >= (c1 - c0):
                    mid = (r0 + r1 + 1) // 2
                    first[:mid, :] = True
                else:
                    mid = (c0 + c1 + 1) // 2
                    first[:, :mid] = True
                parts = [mask & first, mask & ~first]
                for part in parts:
                    if part.any():
                        out.append(RegionMask.from_mask(t, part))
                continue
            out.append(RegionMask.from_mask(t, mask))
        return out


def _mask_box(mask: np.ndarray) -> Box:
    rows, cols = np.nonzero(mask)
    return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())


class SyntheticTracker:
    """Associates each seed box with the dominant instance inside it and
    emits that instance's mask in every frame where it is visible."""

    def __init__(self, bundle: GaussianBundle):
        self.bundle = bundle
        self._grids: dict[int, np.ndarray] = {}

    def _grid(self, frames: FrameSequence, t: int) -> np.ndarray:
        if t not in self._grids:
            self._grids[t] = dominant_instance_grid(
                self.bundle, frames.frame(t).camera
            )
        return self._grids[t]

    def track(
        self, frames: FrameSequence, boxes: list[Box], seed_frame: int
    ) -> list[Masklet]:
        grid = self._grid(frames, seed_frame)
        instances: list[int] = []
        for (r0, c0, r1, c1) in boxes:
            window = grid[r0 : r1 + 1, c0 : c1 + 1]
            ids, counts = np.unique(window[window >= 0], return_counts=True)
            if ids.size == 0:
                raise ValueError(
                    f"seed box {(r0, c0, r1, c1)} covers only background"
                )
            instances.append(int(ids[np.argmax(counts)]))
        out = []
        for inst in instances:
            per_frame = {}
            for frame in frames:
                mask = self._grid(frames, frame.index) == inst
                if mask.any():
                    per_frame[frame.index] = mask
            out.append(
                Masklet(masklet_id=inst + 1, per_frame=per_frame, origin_frame=seed_frame)
            )
        return out


def _content_rng(seed: int, payload: bytes) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(payload)])


def _unit_noise(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def farthest_point_prototypes(
    n: int, dim: int, seed: int = 0, pool_factor: int = 16
) -> np.ndarray:
    """Mutually distant unit vectors by greedy farthest-point selection."""
    rng = np.random.default_rng([seed, 7])
    pool = rng.standard_normal((max(64, pool_factor * n), dim))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    chosen = [0]
    for _ in range(1, n):
        cos = pool @ pool[chosen].T  # (pool, chosen)
        worst = cos.max(axis=1)
        worst[chosen] = np.inf
        chosen.append(int(np.argmin(worst)))
    return pool[chosen]


class SyntheticEmbedder:
    """Class-prototype embedder keyed by the masked image's mean color.

    Image embeddings are the dominant class's prototype plus bounded
    noise (unit noise direction scaled by sigma_e, then renormalized, so
    cosine to the prototype is at least sqrt(1 - sigma_e^2)); text
    embeddings use an independent per-class noise draw. With skew on,
    image embeddings of class k are returned scaled by the class factor.
    """

    def __init__(
        self,
        n_classes: int,
        colors: np.ndarray,
        noise_level: float = 0.05,
        scale_skew: bool = False,
        seed: int = 0,
        feature_dim: int = 512,
        class_names: list[str] | None = None,
    ):
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        self.noise_level = noise_level
        self.scale_skew = scale_skew
        self.seed = seed
        self.colors = np.asarray(colors, dtype=np.float64)
        self.class_names = class_names or [f"object_{k}" for k in range(n_classes)]
        self.prototypes = farthest_point_prototypes(n_classes, feature_dim, seed)
        self.multipliers = (
            np.linspace(SKEW_RANGE[0], SKEW_RANGE[1], n_classes)
            if scale_skew
            else np.ones(n_classes)
        )

    @classmethod
    def from_config(cls, cfg: SyntheticConfig) -> "SyntheticEmbedder":
        return cls(
            n_classes=cfg.n_objects,
            colors=class_colors(cfg.n_objects),
            noise_level=cfg.noise_level,
            scale_skew=cfg.scale_skew,
            seed=cfg.seed,
            feature_dim=cfg.feature_dim,
            class_names=cfg.class_names,
        )

    def _noisy_prototype(self, k: int, rng: np.random.Generator) -> np.ndarray:
        proto = self.prototypes[k]
        if self.noise_level == 0.0:
            return proto.copy()
        v = proto + self.noise_level * _unit_noise(rng, self.feature_dim)
        return v / np.linalg.norm(v)

    def classify_color(self, mean_color: np.ndarray) -> int:
        """Nearest class by color direction."""
        norm = np.linalg.norm(mean_color)
        if norm < 1e-9:
            raise ValueError("masked image is black; no class evidence")
        direction = mean_color / norm
        refs = self.colors / np.linalg.norm(self.colors, axis=1, keepdims=True)
        return int(np.argmax(refs @ direction))

    def embed_image(self, masked_rgb: np.ndarray) -> np.ndarray:
        img = np.asarray(masked_rgb, dtype=np.float64)
        lit = img.reshape(-1, 3)
        lit = lit[(lit > 1e-9).any(axis=1)]
        if lit.shape[0] == 0:
            raise ValueError("masked image has no lit pixels")
        k = self.classify_color(lit.mean(axis=0))
        rng = _content_rng(self.seed, np.ascontiguousarray(img).tobytes())
        return self.multipliers[k] * self._noisy_prototype(k, rng)

    def embed_text(self, text: str) -> np.ndarray:
        try:
            k = self.class_names.index(text)
        except ValueError:
            raise KeyError(
                f"unknown class {text!r}; known: {self.class_names}"
            ) from None
        rng = _content_rng(self.seed + 1, text.encode("utf-8"))
        return self._noisy_prototype(k, rng)
