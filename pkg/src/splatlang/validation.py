"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


class ResolutionMismatchError(ValueError):
    """Two rasters/masks that must share a resolution do not."""


def as_float_array(x, name: str, shape: tuple | None = None) -> np.ndarray:
    """Coerce to a float64 array, optionally checking the shape.

    A shape entry of -1 matches any extent.
    """
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name}: expected {len(shape)}-d array, got {arr.ndim}-d")
        for axis, want in enumerate(shape):
            if want != -1 and arr.shape[axis] != want:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def as_bool_mask(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-d mask, got {arr.ndim}-d")
    if arr.dtype != np.bool_:
        arr = arr.astype(bool)
    return arr


def check_same_resolution(a: np.ndarray, b: np.ndarray, what: str = "masks") -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ResolutionMismatchError(
            f"{what} have different resolutions: {a.shape[:2]} vs {b.shape[:2]}"
        )


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def check_unit_norm(v: np.ndarray, name: str = "vector", tol: float = 1e-6) -> None:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        raise ValueError(f"{name} is not unit-norm (|v| = {norm:.8f})")


def unit(v: np.ndarray, name: str = "vector") -> np.ndarray:
    """Normalize to unit length, rejecting (near-)zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ValueError(f"{name} has zero norm, cannot normalize")
    return v / norm
