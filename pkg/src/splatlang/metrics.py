"""Evaluation metrics: 2D/3D IoU, mIoU accuracy and localization accuracy."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .masklets import Box, box_from_mask
from .validation import as_bool_mask, check_same_resolution

MACC_CUTOFF = 0.25


def iou_2d(pred: np.ndarray, gt: np.ndarray) -> float:
    """Pixel IoU; 1.0 when both masks are empty, 0.0 when exactly one is."""
    pred = as_bool_mask(pred, "pred")
    gt = as_bool_mask(gt, "gt")
    check_same_resolution(pred, gt)
    union = int(np.count_nonzero(pred | gt))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(pred & gt)) / union


def macc(ious, cutoff: float = MACC_CUTOFF) -> float:
    """Fraction of queries whose IoU exceeds the cutoff."""
    ious = np.asarray(list(ious), dtype=np.float64)
    if ious.size == 0:
        raise ValueError("macc needs at least one IoU value")
    return float(np.mean(ious > cutoff))


def loc_acc(pred_mask: np.ndarray, gt_box: Box) -> bool:
    """Whether the center of the prediction's exterior box lies in gt_box.

    The box bounds are inclusive; an empty prediction fails.
    """
    pred_mask = as_bool_mask(pred_mask, "pred_mask")
    if not pred_mask.any():
        return False
    r0, c0, r1, c1 = box_from_mask(pred_mask)
    center_r = 0.5 * (r0 + r1)
    center_c = 0.5 * (c0 + c1)
    g0, gc0, g1, gc1 = gt_box
    return g0 <= center_r <= g1 and gc0 <= center_c <= gc1


def miou_3d(
    selected: np.ndarray, instance_labels: np.ndarray, target_label: int
) -> float:
    """Set IoU between selected Gaussian indices and a label's index set."""
    if instance_labels is None:
        raise ValueError("bundle has no instance labels")
    selected = set(int(i) for i in np.asarray(selected).ravel())
    target = set(np.nonzero(np.asarray(instance_labels) == target_label)[0].tolist())
    union = selected | target
    if not union:
        return 1.0
    return len(selected & target) / len(union)


@dataclass(frozen=True)
class EvalRecord:
    query: str
    iou: float
    macc_hit: bool
    loc_hit: bool


def write_report(path: str | Path, records: list[EvalRecord]) -> None:
    """CSV report: one row per query plus a mean summary row."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "iou", "macc_hit", "loc_hit"])
        for rec in records:
            writer.writerow(
                [rec.query, f"{rec.iou:.6f}", int(rec.macc_hit), int(rec.loc_hit)]
            )
        if records:
            writer.writerow(
                [
                    "mean",
                    f"{np.mean([r.iou for r in records]):.6f}",
                    f"{np.mean([r.macc_hit for r in records]):.6f}",
                    f"{np.mean([r.loc_hit for r in records]):.6f}",
                ]
            )
