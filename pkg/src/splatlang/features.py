"""Region embeddings, the per-masklet feature bank, and ground-truth rasters.

The bank assigns every masklet one feature vector: the pixel-count
weighted average of its per-frame masked-image embeddings, renormalized
to unit length. Averaging over views suppresses per-frame embedding
noise, and the pixel weighting discounts frames where the region is
barely visible. Ground-truth rasters place each masklet's *latent*
bank vector at its pixels, so a region receives the identical
supervision in every frame it appears in. The per-frame baseline
assembler skips tracking and averaging entirely (each frame's own
region embeddings, mutually inconsistent across views) and exists for
ablation comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from .codec import LatentCodec
from .masklets import MaskletSet, RegionMask
from .scene import FrameSequence
from .validation import check_same_resolution

DEFAULT_FEATURE_DIM = 512


class DegenerateAverageError(ValueError):
    """The weighted average cancelled to (near-)zero norm."""


@runtime_checkable
class ImageTextEmbedder(Protocol):
    """Joint image/text embedding model; outputs are unit-norm vectors."""

    feature_dim: int

    def embed_image(self, masked_rgb: np.ndarray) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class FeatureRaster:
    """An (H, W, D) per-pixel feature image with a coverage mask.

    Uncovered pixels carry the zero vector and are excluded from losses.
    """

    frame_index: int
    data: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        coverage = np.asarray(self.coverage, dtype=bool)
        if data.ndim != 3:
            raise ValueError(f"data must be (H, W, D), got {data.shape}")
        if coverage.shape != data.shape[:2]:
            raise ValueError(
                f"coverage shape {coverage.shape} != raster {data.shape[:2]}"
            )
        data = data.copy()
        data[~coverage] = 0.0
        data.flags.writeable = False
        coverage = coverage.copy()
        coverage.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "coverage", coverage)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def depth(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BankEntry:
    phi_bar: np.ndarray  # (D_feat,) unit-norm averaged embedding
    latent: np.ndarray  # (D_lat,) encoded phi_bar
    total_pixels: int


@dataclass
class RegionFeatureBank:
    """masklet_id -> (phi_bar, latent, total_pixels); the Step-1 index."""

    entries: dict[int, BankEntry]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> list[int]:
        return sorted(self.entries)

    @property
    def feature_dim(self) -> int:
        return next(iter(self.entries.values())).phi_bar.shape[0]

    @property
    def latent_dim(self) -> int:
        return next(iter(self.entries.values())).latent.shape[0]

    def phi_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, (R, D_feat) matrix) in sorted-id order."""
        ids = np.array(self.ids, dtype=np.int64)
        mat = np.stack([self.entries[int(i)].phi_bar for i in ids])
        return ids, mat


@dataclass(frozen=True)
class FrameEmbedding:
    frame_index: int
    vector: np.ndarray  # (D_feat,)
    pixel_count: int


@dataclass
class RegionEmbeddingTable:
    """Per-(masklet, frame) embeddings, the codec's training corpus."""

    entries: dict[int, list[FrameEmbedding]]

    def all_vectors(self) -> np.ndarray:
        rows = [fe.vector for fes in self.entries.values() for fe in fes]
        return np.stack(rows) if rows else np.zeros((0, DEFAULT_FEATURE_DIM))


def region_embedding(
    frame_rgb: np.ndarray,
    region: RegionMask | np.ndarray,
    embedder: ImageTextEmbedder,
) -> np.ndarray:
    """Embed a frame with everything outside the region zeroed out."""
    mask = region.mask if isinstance(region, RegionMask) else np.asarray(region, bool)
    if not mask.any():
        raise ValueError("region mask is empty")
    rgb = np.asarray(frame_rgb, dtype=np.float64)
    check_same_resolution(rgb, mask, "frame and mask")
    return np.asarray(embedder.embed_image(rgb * mask[:, :, None]), dtype=np.float64)


def weighted_average(per_frame: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """Pixel-count weighted average of per-frame vectors, unit-normalized.

    Raises :class:`DegenerateAverageError` when the average cancels to
    zero norm (antipodal inputs).
    """
    if len(per_frame) == 0:
        raise ValueError("weighted_average needs at least one vector")
    counts = np.array([float(n) for _, n in per_frame])
    if (counts < 1).any():
        raise ValueError("pixel counts must be >= 1")
    vecs = np.stack([np.asarray(v, dtype=np.float64) for v, _ in per_frame])
    weights = counts / counts.sum()
    avg = weights @ vecs
    norm = float(np.linalg.norm(avg))
    if norm < 1e-12:
        raise DegenerateAverageError("weighted average cancelled to zero norm")
    return avg / norm


def compute_region_embeddings(
    masklets: MaskletSet,
    frames: FrameSequence,
    embedder: ImageTextEmbedder,
) -> RegionEmbeddingTable:
    """Embed every (masklet, visible frame) pair."""
    table: dict[int, list[FrameEmbedding]] = {}
    for m in masklets:
        rows: list[FrameEmbedding] = []
        for t in m.frame_indices:
            frame = frames.frame(t)
            if frame.rgb is None:
                raise ValueError(f"frame {t} carries no RGB data to embed")
            mask = m.per_frame[t]
            vec = region_embedding(frame.rgb, mask, embedder)
            rows.append(
                FrameEmbedding(
                    frame_index=t, vector=vec, pixel_count=int(np.count_nonzero(mask))
                )
            )
        if not rows:
            raise ValueError(f"masklet {m.masklet_id} is visible in no frame")
        table[m.masklet_id] = rows
    return RegionEmbeddingTable(entries=table)


def build_bank_from_table(
    table: RegionEmbeddingTable, codec: LatentCodec
) -> RegionFeatureBank:
    entries: dict[int, BankEntry] = {}
    for masklet_id, rows in table.entries.items():
        phi_bar = weighted_average([(fe.vector, fe.pixel_count) for fe in rows])
        entries[masklet_id] = BankEntry(
            phi_bar=phi_bar,
            latent=np.asarray(codec.encode(phi_bar), dtype=np.float64),
            total_pixels=sum(fe.pixel_count for fe in rows),
        )
    return RegionFeatureBank(entries=entries)


def build_feature_bank(
    masklets: MaskletSet,
    frames: FrameSequence,
    embedder: ImageTextEmbedder,
    codec: LatentCodec,
) -> RegionFeatureBank:
    """Averaged embedding and latent code for every masklet."""
    return build_bank_from_table(
        compute_region_embeddings(masklets, frames, embedder), codec
    )


def assemble_groundtruth(
    masklets: MaskletSet, bank: RegionFeatureBank, t: int
) -> FeatureRaster:
    """Latent-space ground-truth raster for frame ``t``.

    Each pixel of a masklet carries that masklet's bank latent; pixels
    no masklet claims stay uncovered. Because the latent is a property
    of the masklet, not the frame, the written vector is identical in
    every frame — consistency by construction.
    """
    h, w = masklets.resolution
    missing = [m.masklet_id for m in masklets if m.masklet_id not in bank.entries]
    if missing:
        raise KeyError(f"bank is missing masklet ids {missing}")
    depth = bank.latent_dim
    data = np.zeros((h, w, depth), dtype=np.float64)
    coverage = np.zeros((h, w), dtype=bool)
    for m in masklets:
        mask = m.mask_at(t)
        if mask is None:
            continue
        if (coverage & mask).any():
            raise ValueError(
                f"masklet {m.masklet_id} overlaps an earlier masklet at frame {t}"
            )
        data[mask] = bank.entries[m.masklet_id].latent
        coverage |= mask
    return FeatureRaster(frame_index=t, data=data, coverage=coverage)


def assemble_groundtruth_baseline(
    proposals: Sequence[RegionMask],
    frames: FrameSequence,
    embedder: ImageTextEmbedder,
    codec: LatentCodec,
    t: int,
) -> FeatureRaster:
    """Per-frame baseline raster: each frame's own region embeddings, no
    tracking and no averaging, so the same object can receive different
    supervision in different frames."""
    h, w = frames.resolution
    frame = frames.frame(t)
    latent_dim = codec._require_fitted().latent_dim
    data = np.zeros((h, w, latent_dim), dtype=np.float64)
    coverage = np.zeros((h, w), dtype=bool)
    for prop in proposals:
        if prop.frame_index != t:
            continue
        if frame.rgb is None:
            raise ValueError(f"frame {t} carries no RGB data to embed")
        vec = region_embedding(frame.rgb, prop, embedder)
        latent = np.asarray(codec.encode(vec), dtype=np.float64)
        write = prop.mask & ~coverage
        data[write] = latent
        coverage |= write
    return FeatureRaster(frame_index=t, data=data, coverage=coverage)
