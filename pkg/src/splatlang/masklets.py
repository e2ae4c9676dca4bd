"""Space-time region masks ("masklets") and the proposal-merging loop.

A masklet is one region tracked across frames as a set of per-frame
binary masks. The extraction loop walks the sequence frame by frame:
each frame's segmenter proposals are compared against the masks of
already-tracked masklets; proposals whose IoU with a tracked mask
exceeds the threshold ``kappa`` are considered already tracked and
dropped, the rest are handed to the tracker (seeded by their bounding
boxes) and the resulting masklets join the tracked set. Finally the set
is made pairwise disjoint per frame, earlier masklets keeping contested
pixels.

The IoU against a tracked masklet is taken at the current frame when the
masklet has a mask there, falling back to the previous frame otherwise;
the tracker runs over the whole sequence, so the current frame is
normally available and is the more accurate comparison point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator

from .scene import FrameSequence
from .validation import as_bool_mask, check_same_resolution

DEFAULT_KAPPA = 0.8

Box = tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max), inclusive


class EmptyMaskError(ValueError):
    """A region mask with no true pixels where one is required."""


class MaskletExtractionError(RuntimeError):
    """Segmenter or tracker failure, annotated with the frame index."""

    def __init__(self, message: str, frame_index: int):
        super().__init__(message)
        self.frame_index = frame_index


@dataclass(frozen=True)
class RegionMask:
    """A single-frame segmentation proposal."""

    frame_index: int
    mask: np.ndarray  # (H, W) bool
    pixel_count: int

    def __post_init__(self):
        mask = as_bool_mask(self.mask)
        count = int(mask.sum())
        if count < 1:
            raise EmptyMaskError(f"region mask at frame {self.frame_index} is empty")
        if count != self.pixel_count:
            raise ValueError(
                f"cached pixel_count {self.pixel_count} != actual {count}"
            )
        mask = mask.copy()
        mask.flags.writeable = False
        object.__setattr__(self, "mask", mask)

    @classmethod
    def from_mask(cls, frame_index: int, mask) -> "RegionMask":
        mask = as_bool_mask(mask)
        return cls(frame_index=frame_index, mask=mask, pixel_count=int(mask.sum()))


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two boolean masks; 0 when both are empty."""
    a = as_bool_mask(a, "a")
    b = as_bool_mask(b, "b")
    check_same_resolution(a, b)
    inter = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return inter / union


def box_from_mask(mask: np.ndarray | RegionMask) -> Box:
    """Tightest axis-aligned box containing all true pixels (inclusive)."""
    if isinstance(mask, RegionMask):
        mask = mask.mask
    mask = as_bool_mask(mask)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EmptyMaskError("cannot compute a box from an empty mask")
    return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())


@dataclass
class Masklet:
    """One region's per-frame masks; frames where it is invisible are absent."""

    masklet_id: int
    per_frame: dict[int, np.ndarray]
    origin_frame: int

    def mask_at(self, t: int) -> np.ndarray | None:
        return self.per_frame.get(t)

    @property
    def frame_indices(self) -> list[int]:
        return sorted(self.per_frame)

    def pixel_count(self, t: int) -> int:
        m = self.per_frame.get(t)
        return 0 if m is None else int(np.count_nonzero(m))

    def total_pixels(self) -> int:
        return sum(int(np.count_nonzero(m)) for m in self.per_frame.values())


@dataclass
class MaskletSet:
    masklets: list[Masklet]
    resolution: tuple[int, int]

    def __len__(self) -> int:
        return len(self.masklets)

    def __iter__(self):
        return iter(self.masklets)

    @property
    def ids(self) -> list[int]:
        return [m.masklet_id for m in self.masklets]

    def get(self, masklet_id: int) -> Masklet:
        for m in self.masklets:
            if m.masklet_id == masklet_id:
                return m
        raise KeyError(f"no masklet with id {masklet_id}")


@runtime_checkable
class Segmenter(Protocol):
    """Per-frame region proposer; proposals within a frame are disjoint."""

    def propose(self, frames: FrameSequence, t: int) -> list[RegionMask]: ...


@runtime_checkable
class Tracker(Protocol):
    """Tracks seed boxes from one frame across the whole sequence."""

    def track(
        self, frames: FrameSequence, boxes: list[Box], seed_frame: int
    ) -> list[Masklet]: ...


def _enforce_disjoint(masklets: list[Masklet]) -> list[Masklet]:
    """Make masks pairwise disjoint per frame; earlier masklets win pixels.

    Frames emptied by the subtraction are removed; masklets emptied in
    every frame are dropped entirely (they were duplicates).
    """
    occupied: dict[int, np.ndarray] = {}
    survivors: list[Masklet] = []
    for m in masklets:
        kept: dict[int, np.ndarray] = {}
        for t, mask in m.per_frame.items():
            occ = occupied.get(t)
            if occ is None:
                occ = np.zeros_like(mask)
                occupied[t] = occ
            free = mask & ~occ
            if free.any():
                kept[t] = free
                occ |= free
        if kept:
            survivors.append(
                Masklet(masklet_id=m.masklet_id, per_frame=kept, origin_frame=m.origin_frame)
            )
    return survivors


def extract_masklets(
    frames: FrameSequence,
    segmenter: Segmenter,
    tracker: Tracker,
    kappa: float = DEFAULT_KAPPA,
) -> MaskletSet:
    """Merge per-frame proposals into a deduplicated set of masklets."""
    if len(frames) == 0:
        raise ValueError("frames must be nonempty")
    if not (0.0 < kappa < 1.0):
        raise ValueError(f"kappa must be in (0, 1), got {kappa}")

    tracked: list[Masklet] = []
    next_id = 1
    for frame in frames:
        t = frame.index
        try:
            proposals = segmenter.propose(frames, t)
        except Exception as exc:
            raise MaskletExtractionError(
                f"segmenter failed at frame {t}: {exc}", frame_index=t
            ) from exc

        untracked: list[RegionMask] = []
        for prop in proposals:
            matched = False
            for masklet in tracked:
                cmp_mask = masklet.mask_at(t)
                if cmp_mask is None:
                    cmp_mask = masklet.mask_at(t - 1)
                if cmp_mask is None:
                    continue
                if iou(cmp_mask, prop.mask) > kappa:
                    matched = True
                    break
            if not matched:
                untracked.append(prop)

        if not untracked:
            continue
        boxes = [box_from_mask(p) for p in untracked]
        try:
            new_masklets = tracker.track(frames, boxes, seed_frame=t)
        except Exception as exc:
            raise MaskletExtractionError(
                f"tracker failed at frame {t}: {exc}", frame_index=t
            ) from exc
        for m in new_masklets:
            tracked.append(
                Masklet(masklet_id=next_id, per_frame=dict(m.per_frame), origin_frame=t)
            )
            next_id += 1

    return MaskletSet(
        masklets=_enforce_disjoint(tracked), resolution=frames.resolution
    )


def masklets_to_id_grids(
    mset: MaskletSet, frame_indices: list[int]
) -> dict[int, np.ndarray]:
    """Rasterize a masklet set to per-frame uint16 id grids (0 = unassigned)."""
    h, w = mset.resolution
    grids = {t: np.zeros((h, w), dtype=np.uint16) for t in frame_indices}
    for m in mset:
        if not (1 <= m.masklet_id <= 0xFFFF):
            raise ValueError(f"masklet id {m.masklet_id} does not fit in uint16")
        for t, mask in m.per_frame.items():
            if t in grids:
                grids[t][mask] = m.masklet_id
    return grids


def masklets_from_id_grids(grids: dict[int, np.ndarray]) -> MaskletSet:
    """Rebuild a masklet set from per-frame id grids (equal ids = one masklet)."""
    if not grids:
        raise ValueError("no id grids given")
    resolutions = {g.shape for g in grids.values()}
    if len(resolutions) > 1:
        raise ValueError(f"id grids do not share one resolution: {resolutions}")
    per_id: dict[int, dict[int, np.ndarray]] = {}
    for t in sorted(grids):
        grid = grids[t]
        for rid in np.unique(grid):
            if rid == 0:
                continue
            per_id.setdefault(int(rid), {})[t] = grid == rid
    masklets = [
        Masklet(masklet_id=rid, per_frame=frames, origin_frame=min(frames))
        for rid, frames in sorted(per_id.items())
    ]
    return MaskletSet(masklets=masklets, resolution=next(iter(resolutions)))


class FileBackedSegmenter:
    """Segmenter over precomputed per-frame region-id grids."""

    def __init__(self, grids: dict[int, np.ndarray]):
        self.grids = grids

    def propose(self, frames: FrameSequence, t: int) -> list[RegionMask]:
        grid = self.grids[t]
        out = []
        for rid in np.unique(grid):
            if rid == 0:
                continue
            out.append(RegionMask.from_mask(t, grid == rid))
        return out


class FileBackedTracker:
    """Tracker over precomputed id grids: a seed box selects the id with the
    most pixels inside it, and equal ids across frames form the masklet."""

    def __init__(self, grids: dict[int, np.ndarray]):
        self.grids = grids

    def track(
        self, frames: FrameSequence, boxes: list[Box], seed_frame: int
    ) -> list[Masklet]:
        grid = self.grids[seed_frame]
        chosen: list[int] = []
        for (r0, c0, r1, c1) in boxes:
            window = grid[r0 : r1 + 1, c0 : c1 + 1]
            ids, counts = np.unique(window[window > 0], return_counts=True)
            if ids.size == 0:
                raise ValueError(f"seed box {(r0, c0, r1, c1)} covers no region")
            rid = int(ids[np.argmax(counts)])
            if rid not in chosen:
                chosen.append(rid)
        out = []
        for rid in chosen:
            per_frame = {
                t: g == rid for t, g in self.grids.items() if np.any(g == rid)
            }
            out.append(Masklet(masklet_id=rid, per_frame=per_frame, origin_frame=seed_frame))
        return out


class MaskletExtractor(BaseEstimator):
    """Estimator-style wrapper around :func:`extract_masklets`."""

    def __init__(self, segmenter=None, tracker=None, kappa: float = DEFAULT_KAPPA):
        self.segmenter = segmenter
        self.tracker = tracker
        self.kappa = kappa

    def fit(self, frames: FrameSequence, y=None):
        return self

    def transform(self, frames: FrameSequence) -> MaskletSet:
        if self.segmenter is None or self.tracker is None:
            raise ValueError("MaskletExtractor needs both a segmenter and a tracker")
        return extract_masklets(frames, self.segmenter, self.tracker, self.kappa)
