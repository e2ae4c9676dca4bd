"""Tile-based alpha-compositing rasterizer for Gaussian splat scenes.

Each 3D Gaussian is projected to a 2D footprint: the mean by the pinhole
model, the covariance by the first-order (Jacobian) approximation

    cov2d = J W Sigma W^T J^T + 0.3 I,

with W the world-to-camera rotation and J the perspective Jacobian at
the camera-space mean. The 0.3-pixel regularizer, the 3-sigma footprint
radius, the 0.99 opacity clamp and the 1e-4 transmittance floor are
fixed constants so renders are deterministic.

A pixel's value composites footprints front to back:

    out[p] = sum_i value_i * w_i(p),   w_i(p) = f_i(p) * prod_{j<i} (1 - f_j(p)),

where f_i(p) = min(alpha_i * exp(-0.5 d^T cov2d^{-1} d), 0.99) inside the
footprint radius and 0 outside. Compositing weights depend only on
geometry, which is frozen, so :class:`PixelContributions` is computed
once per camera and reused: rendering any per-Gaussian channel (and the
training gradients downstream) is then a sparse matrix product.

The screen is processed in 16x16 tiles; footprints are binned to the
tiles their radius touches, and a tile stops compositing once every one
of its pixels has dropped below the transmittance floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .scene import CameraPose, GaussianBundle, unpack_covariance

TILE_SIZE = 16
COV2D_REGULARIZER = 0.3
ALPHA_CLAMP = 0.99
TRANSMITTANCE_FLOOR = 1e-4
RADIUS_SIGMAS = 3.0
NEAR_PLANE = 0.01


@dataclass(frozen=True)
class SplatFootprint:
    """Projected 2D contribution of one Gaussian."""

    gaussian_index: int
    mean2d: tuple[float, float]  # (x, y) pixels; x = column, y = row
    cov2d: np.ndarray  # (2, 2) SPD after regularization
    depth: float  # camera-space z
    radius: float  # pixel cutoff


@dataclass(frozen=True)
class PixelContributions:
    """Per-pixel front-to-back compositing weights in CSR layout.

    Row p (row-major pixel index) holds that pixel's (gaussian, weight)
    entries ordered front to back.
    """

    resolution: tuple[int, int]
    num_gaussians: int
    offsets: np.ndarray  # (H*W + 1,) int64
    indices: np.ndarray  # (nnz,) int32 gaussian indices
    weights: np.ndarray  # (nnz,) float64

    def entries_at(self, row: int, col: int) -> list[tuple[int, float]]:
        h, w = self.resolution
        p = row * w + col
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return [
            (int(i), float(v))
            for i, v in zip(self.indices[lo:hi], self.weights[lo:hi])
        ]

    def to_csr(self) -> sp.csr_matrix:
        """(H*W, N) sparse weight matrix; duplicates cannot occur."""
        h, w = self.resolution
        return sp.csr_matrix(
            (self.weights, self.indices, self.offsets),
            shape=(h * w, self.num_gaussians),
        )

    def alpha_map(self) -> np.ndarray:
        """Accumulated opacity per pixel (sum of weights)."""
        h, w = self.resolution
        sums = np.add.reduceat(
            np.concatenate([self.weights, [0.0]]), self.offsets[:-1]
        )
        sums[self.offsets[:-1] == self.offsets[1:]] = 0.0
        return sums.reshape(h, w)


def _project_arrays(bundle: GaussianBundle, camera: CameraPose):
    """Vectorized projection of every Gaussian.

    Returns (mean2d (N,2), cov2d (N,2,2), depth (N,), radius (N,), valid (N,)).
    """
    h, w = camera.resolution
    fx, fy = camera.focal
    cx, cy = camera.principal
    rot = camera.rotation

    cam = bundle.positions @ rot.T + camera.translation  # (N, 3)
    tx, ty, tz = cam[:, 0], cam[:, 1], cam[:, 2]
    valid = tz > NEAR_PLANE
    tz_safe = np.where(valid, tz, 1.0)

    mean2d = np.stack([fx * tx / tz_safe + cx, fy * ty / tz_safe + cy], axis=1)

    # cov2d = J (W Sigma W^T) J^T with J the 2x3 perspective Jacobian.
    sigma_cam = np.einsum("ij,njk,lk->nil", rot, unpack_covariance(bundle.covariances), rot)
    zeros = np.zeros_like(tx)
    jac = np.stack(
        [
            np.stack([fx / tz_safe, zeros, -fx * tx / tz_safe**2], axis=1),
            np.stack([zeros, fy / tz_safe, -fy * ty / tz_safe**2], axis=1),
        ],
        axis=1,
    )  # (N, 2, 3)
    cov2d = np.einsum("nij,njk,nlk->nil", jac, sigma_cam, jac)
    cov2d[:, 0, 0] += COV2D_REGULARIZER
    cov2d[:, 1, 1] += COV2D_REGULARIZER

    # Largest eigenvalue of the 2x2 in closed form.
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0))
    radius = RADIUS_SIGMAS * np.sqrt(np.maximum(lam_max, 0.0))

    x, y = mean2d[:, 0], mean2d[:, 1]
    on_screen = (
        (x + radius >= 0.0)
        & (x - radius <= w - 1.0)
        & (y + radius >= 0.0)
        & (y - radius <= h - 1.0)
    )
    valid &= on_screen & np.isfinite(mean2d).all(axis=1)
    return mean2d, cov2d, tz, radius, valid


def project_gaussian(
    bundle: GaussianBundle, index: int, camera: CameraPose
) -> SplatFootprint | None:
    """Project one Gaussian; returns None when it is culled."""
    mean2d, cov2d, depth, radius, valid = _project_arrays(bundle, camera)
    if not valid[index]:
        return None
    return SplatFootprint(
        gaussian_index=index,
        mean2d=(float(mean2d[index, 0]), float(mean2d[index, 1])),
        cov2d=cov2d[index],
        depth=float(depth[index]),
        radius=float(radius[index]),
    )


def project_all(bundle: GaussianBundle, camera: CameraPose) -> list[SplatFootprint]:
    """All surviving footprints, sorted by depth (ties by index)."""
    mean2d, cov2d, depth, radius, valid = _project_arrays(bundle, camera)
    live = np.nonzero(valid)[0]
    order = live[np.lexsort((live, depth[live]))]
    return [
        SplatFootprint(
            gaussian_index=int(i),
            mean2d=(float(mean2d[i, 0]), float(mean2d[i, 1])),
            cov2d=cov2d[i],
            depth=float(depth[i]),
            radius=float(radius[i]),
        )
        for i in order
    ]


def compute_contributions(
    bundle: GaussianBundle, camera: CameraPose
) -> PixelContributions:
    """Composite all footprints and record per-pixel weights."""
    h, w = camera.resolution
    mean2d, cov2d, depth, radius, valid = _project_arrays(bundle, camera)

    live = np.nonzero(valid)[0]
    # Depth-ascending, stable in index: front-to-back compositing order.
    order = live[np.lexsort((live, depth[live]))]

    n_tiles_y = (h + TILE_SIZE - 1) // TILE_SIZE
    n_tiles_x = (w + TILE_SIZE - 1) // TILE_SIZE
    tile_bins: list[list[int]] = [[] for _ in range(n_tiles_y * n_tiles_x)]
    for rank, i in enumerate(order):
        x, y = mean2d[i]
        r = radius[i]
        tx0 = max(int((x - r) // TILE_SIZE), 0)
        tx1 = min(int((x + r) // TILE_SIZE), n_tiles_x - 1)
        ty0 = max(int((y - r) // TILE_SIZE), 0)
        ty1 = min(int((y + r) // TILE_SIZE), n_tiles_y - 1)
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                tile_bins[ty * n_tiles_x + tx].append(rank)

    # Precompute inverse covariances for the live set.
    a = cov2d[order, 0, 0]
    b = cov2d[order, 0, 1]
    c = cov2d[order, 1, 1]
    det = a * c - b * b
    inv_a = c / det
    inv_b = -b / det
    inv_c = a / det

    pix_chunks: list[np.ndarray] = []
    rank_chunks: list[np.ndarray] = []
    gauss_chunks: list[np.ndarray] = []
    weight_chunks: list[np.ndarray] = []

    opacities = bundle.opacities
    for ty in range(n_tiles_y):
        for tx in range(n_tiles_x):
            ranks = tile_bins[ty * n_tiles_x + tx]
            if not ranks:
                continue
            y0, y1 = ty * TILE_SIZE, min((ty + 1) * TILE_SIZE, h)
            x0, x1 = tx * TILE_SIZE, min((tx + 1) * TILE_SIZE, w)
            ys, xs = np.mgrid[y0:y1, x0:x1]
            ys = ys.ravel().astype(np.float64)
            xs = xs.ravel().astype(np.float64)
            flat = (ys * w + xs).astype(np.int64)

            trans = np.ones(flat.size, dtype=np.float64)
            for rank in ranks:
                alive = trans >= TRANSMITTANCE_FLOOR
                if not alive.any():
                    break
                i = order[rank]
                dx = xs - mean2d[i, 0]
                dy = ys - mean2d[i, 1]
                inside = dx * dx + dy * dy <= radius[i] * radius[i]
                power = 0.5 * (
                    inv_a[rank] * dx * dx
                    + 2.0 * inv_b[rank] * dx * dy
                    + inv_c[rank] * dy * dy
                )
                f = np.minimum(opacities[i] * np.exp(-power), ALPHA_CLAMP)
                f = np.where(inside, f, 0.0)
                hit = alive & (f > 0.0)
                if hit.any():
                    weight = f[hit] * trans[hit]
                    pix_chunks.append(flat[hit])
                    rank_chunks.append(np.full(hit.sum(), rank, dtype=np.int64))
                    gauss_chunks.append(np.full(hit.sum(), i, dtype=np.int32))
                    weight_chunks.append(weight)
                    trans[hit] *= 1.0 - f[hit]

    if pix_chunks:
        pix = np.concatenate(pix_chunks)
        ranks_flat = np.concatenate(rank_chunks)
        gauss = np.concatenate(gauss_chunks)
        weights = np.concatenate(weight_chunks)
        perm = np.lexsort((ranks_flat, pix))
        pix, gauss, weights = pix[perm], gauss[perm], weights[perm]
        offsets = np.zeros(h * w + 1, dtype=np.int64)
        np.add.at(offsets, pix + 1, 1)
        offsets = np.cumsum(offsets)
    else:
        gauss = np.zeros(0, dtype=np.int32)
        weights = np.zeros(0, dtype=np.float64)
        offsets = np.zeros(h * w + 1, dtype=np.int64)

    return PixelContributions(
        resolution=(h, w),
        num_gaussians=bundle.count,
        offsets=offsets,
        indices=gauss,
        weights=weights,
    )


def render_field(
    bundle: GaussianBundle,
    camera: CameraPose,
    channel: str = "embeddings",
    contributions: PixelContributions | None = None,
) -> np.ndarray:
    """Render a per-Gaussian channel to an (H, W, D) image.

    ``channel`` is "embeddings" or "colors". The operation is linear in
    the channel values: out[p] = sum_i w_i(p) * channel_i.
    """
    if channel == "embeddings":
        values = bundle.embeddings
    elif channel == "colors":
        values = bundle.colors
    else:
        raise ValueError(f"unknown channel {channel!r}")
    if contributions is None:
        contributions = compute_contributions(bundle, camera)
    h, w = contributions.resolution
    flat = contributions.to_csr() @ values
    return np.asarray(flat).reshape(h, w, values.shape[1])


def render_alpha(
    bundle: GaussianBundle,
    camera: CameraPose,
    selected: np.ndarray | None = None,
) -> np.ndarray:
    """Accumulated opacity image, optionally compositing only a subset.

    The subset keeps its own front-to-back order; deselected Gaussians do
    not occlude.
    """
    if selected is not None:
        selected = np.asarray(selected, dtype=np.int64)
        if selected.size == 0:
            h, w = camera.resolution
            return np.zeros((h, w), dtype=np.float64)
        sub = GaussianBundle(
            positions=bundle.positions[selected],
            covariances=bundle.covariances[selected],
            colors=bundle.colors[selected],
            opacities=bundle.opacities[selected],
            embeddings=bundle.embeddings[selected],
        )
        bundle = sub
    return compute_contributions(bundle, camera).alpha_map()
