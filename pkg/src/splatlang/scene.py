"""Scene containers: Gaussian bundles, camera poses and frame sequences.

A scene is a set of 3D Gaussians, each carrying position, covariance,
color, opacity and a low-dimensional language embedding, plus the camera
trajectory it was captured from. Geometry is imported as-is and never
optimized here; only the embeddings are trainable downstream.

All types are immutable after construction (arrays are frozen), so they
can be shared freely across parallel workers. Constructors enforce
structural consistency (shapes, dtypes); value-level invariants such as
covariance positive semi-definiteness are checked by
:func:`validate_scene`, which reports violations instead of raising so
that intentionally broken inputs can be inspected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Packing order of the 6 upper-triangular entries of a symmetric 3x3
# covariance: (xx, xy, xz, yy, yz, zz).
TRIU_ROWS = np.array([0, 0, 0, 1, 1, 2])
TRIU_COLS = np.array([0, 1, 2, 1, 2, 2])

DEFAULT_LATENT_DIM = 3

PSD_EIGENVALUE_FLOOR = -1e-9
ROTATION_TOL = 1e-6


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def pack_covariance(mat: np.ndarray) -> np.ndarray:
    """Pack a symmetric 3x3 (or batch of them) into 6 upper-tri values."""
    mat = np.asarray(mat, dtype=np.float64)
    return mat[..., TRIU_ROWS, TRIU_COLS]


def unpack_covariance(six: np.ndarray) -> np.ndarray:
    """Expand (..., 6) packed values into full symmetric (..., 3, 3) matrices."""
    six = np.asarray(six, dtype=np.float64)
    out = np.zeros(six.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., TRIU_ROWS, TRIU_COLS] = six
    out[..., TRIU_COLS, TRIU_ROWS] = six
    return out


@dataclass(frozen=True)
class GaussianBundle:
    """A splat scene: per-Gaussian position, covariance, color, opacity and
    language embedding, with optional synthetic instance labels."""

    positions: np.ndarray  # (N, 3) world units
    covariances: np.ndarray  # (N, 6) upper-triangular packing
    colors: np.ndarray  # (N, 3) in [0, 1]
    opacities: np.ndarray  # (N,) in [0, 1]
    embeddings: np.ndarray  # (N, D_lat)
    instance_labels: np.ndarray | None = None  # (N,) int

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {pos.shape}")
        n = pos.shape[0]
        cov = np.asarray(self.covariances, dtype=np.float64)
        if cov.shape != (n, 6):
            raise ValueError(f"covariances must be ({n}, 6), got {cov.shape}")
        col = np.asarray(self.colors, dtype=np.float64)
        if col.shape != (n, 3):
            raise ValueError(f"colors must be ({n}, 3), got {col.shape}")
        opa = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        if opa.shape != (n,):
            raise ValueError(f"opacities must be ({n},), got {opa.shape}")
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != n:
            raise ValueError(f"embeddings must be ({n}, D), got {emb.shape}")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "covariances", _frozen(cov))
        object.__setattr__(self, "colors", _frozen(col))
        object.__setattr__(self, "opacities", _frozen(opa))
        object.__setattr__(self, "embeddings", _frozen(emb))
        if self.instance_labels is not None:
            lab = np.asarray(self.instance_labels, dtype=np.int64).reshape(-1)
            if lab.shape != (n,):
                raise ValueError(f"instance_labels must be ({n},), got {lab.shape}")
            object.__setattr__(self, "instance_labels", _frozen(lab))

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.embeddings.shape[1]

    def covariance_matrices(self) -> np.ndarray:
        """Reconstructed full (N, 3, 3) covariance matrices."""
        return unpack_covariance(self.covariances)

    def with_embeddings(self, embeddings: np.ndarray) -> "GaussianBundle":
        emb = np.asarray(embeddings, dtype=np.float64)
        if emb.shape[0] != self.count:
            raise ValueError(
                f"embeddings rows ({emb.shape[0]}) must match count ({self.count})"
            )
        return replace(self, embeddings=emb)


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera pose plus pinhole intrinsics.

    Camera-space point: ``x_cam = rotation @ x_world + translation``; the
    camera looks down +z, x maps to image columns and y to image rows.
    """

    rotation: np.ndarray  # (3, 3) orthonormal
    translation: np.ndarray  # (3,)
    focal: tuple[float, float]  # (fx, fy) pixels
    principal: tuple[float, float]  # (cx, cy) pixels
    resolution: tuple[int, int]  # (H, W) pixels

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be (3, 3), got {rot.shape}")
        tra = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if tra.shape != (3,):
            raise ValueError(f"translation must be (3,), got {tra.shape}")
        object.__setattr__(self, "rotation", _frozen(rot))
        object.__setattr__(self, "translation", _frozen(tra))
        object.__setattr__(self, "focal", (float(self.focal[0]), float(self.focal[1])))
        object.__setattr__(
            self, "principal", (float(self.principal[0]), float(self.principal[1]))
        )
        object.__setattr__(
            self, "resolution", (int(self.resolution[0]), int(self.resolution[1]))
        )

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Frame:
    """One observation: index (1-based), pose and optional RGB raster."""

    index: int
    camera: CameraPose
    rgb: np.ndarray | None = None  # (H, W, 3) in [0, 1]

    def __post_init__(self):
        if self.rgb is not None:
            rgb = np.asarray(self.rgb, dtype=np.float64)
            if rgb.ndim != 3 or rgb.shape[2] != 3:
                raise ValueError(f"rgb must be (H, W, 3), got {rgb.shape}")
            object.__setattr__(self, "rgb", _frozen(rgb))


@dataclass(frozen=True)
class FrameSequence:
    frames: tuple[Frame, ...]

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def frame(self, index: int) -> Frame:
        for f in self.frames:
            if f.index == index:
                return f
        raise KeyError(f"no frame with index {index}")

    @property
    def indices(self) -> list[int]:
        return [f.index for f in self.frames]

    @property
    def resolution(self) -> tuple[int, int]:
        if not self.frames:
            raise ValueError("empty frame sequence has no resolution")
        return self.frames[0].camera.resolution


def validate_scene(bundle: GaussianBundle, frames: FrameSequence) -> list[str]:
    """Check value-level invariants; returns a list of violation messages.

    An empty list means the scene is valid. Never mutates its inputs.
    """
    report: list[str] = []

    eigvals = np.linalg.eigvalsh(bundle.covariance_matrices())
    bad = np.where(eigvals.min(axis=1) < PSD_EIGENVALUE_FLOOR)[0]
    for i in bad:
        report.append(
            f"covariance[{i}] is not positive semi-definite "
            f"(min eigenvalue {eigvals[i].min():.3e})"
        )

    out = np.where((bundle.opacities < 0.0) | (bundle.opacities > 1.0))[0]
    for i in out:
        report.append(f"opacity[{i}] = {bundle.opacities[i]:.6g} outside [0, 1]")

    nonfinite = np.where(~np.isfinite(bundle.embeddings).all(axis=1))[0]
    for i in nonfinite:
        report.append(f"embedding[{i}] contains non-finite values")

    resolutions = {f.camera.resolution for f in frames}
    if len(resolutions) > 1:
        report.append(f"frames do not share one resolution: {sorted(resolutions)}")
    indices = [f.index for f in frames]
    if indices != list(range(1, len(indices) + 1)):
        report.append(f"frame indices are not contiguous 1..T: {indices}")

    for f in frames:
        rot = f.camera.rotation
        if np.abs(rot @ rot.T - np.eye(3)).max() > ROTATION_TOL:
            report.append(f"frame {f.index}: rotation is not orthonormal")
        h, w = f.camera.resolution
        if h < 1 or w < 1:
            report.append(f"frame {f.index}: resolution {h}x{w} is not positive")
        fx, fy = f.camera.focal
        if fx <= 0 or fy <= 0:
            report.append(f"frame {f.index}: focal ({fx}, {fy}) is not positive")

    return report
