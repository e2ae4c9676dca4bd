"""Independent brute-force oracles the tests check the package against.

Everything here is deliberately naive and written straight from the
definitions: per-pixel loops, full sorts, no tiles, no early termination,
pairwise-distance DBSCAN, plain finite differences. None of it imports
the package's rasterizer/query internals.
"""

import numpy as np

# Shared semantic constants (part of the render definition, not the
# tiling strategy): footprint regularizer, opacity clamp, 3-sigma cutoff.
REGULARIZER = 0.3
ALPHA_CLAMP = 0.99
RADIUS_SIGMAS = 3.0
NEAR_PLANE = 0.01


def project_naive(position, cov6, camera):
    """Straight-line projection of one Gaussian; None when culled."""
    r = np.asarray(camera.rotation)
    cam = r @ np.asarray(position) + np.asarray(camera.translation)
    x, y, z = cam
    if z <= NEAR_PLANE:
        return None
    fx, fy = camera.focal
    cx, cy = camera.principal
    mean2d = np.array([fx * x / z + cx, fy * y / z + cy])

    sigma = np.zeros((3, 3))
    sigma[0, 0], sigma[0, 1], sigma[0, 2] = cov6[0], cov6[1], cov6[2]
    sigma[1, 0], sigma[1, 1], sigma[1, 2] = cov6[1], cov6[3], cov6[4]
    sigma[2, 0], sigma[2, 1], sigma[2, 2] = cov6[2], cov6[4], cov6[5]
    jac = np.array(
        [[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]]
    )
    cov2d = jac @ (r @ sigma @ r.T) @ jac.T + REGULARIZER * np.eye(2)
    radius = RADIUS_SIGMAS * np.sqrt(float(np.linalg.eigvalsh(cov2d).max()))

    h, w = camera.resolution
    if (
        mean2d[0] + radius < 0
        or mean2d[0] - radius > w - 1
        or mean2d[1] + radius < 0
        or mean2d[1] - radius > h - 1
    ):
        return None
    return mean2d, cov2d, float(z), radius


def render_brute_force(bundle, camera, values):
    """Full-sort, per-pixel compositing with zero termination threshold.

    ``values`` is the (N, D) channel to composite.
    """
    h, w = camera.resolution
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((h, w, values.shape[1]))

    projected = []
    for i in range(bundle.count):
        proj = project_naive(
            bundle.positions[i], bundle.covariances[i], camera
        )
        if proj is not None:
            mean2d, cov2d, depth, radius = proj
            projected.append((depth, i, mean2d, np.linalg.inv(cov2d), radius))
    projected.sort(key=lambda rec: (rec[0], rec[1]))

    for row in range(h):
        for col in range(w):
            p = np.array([float(col), float(row)])
            trans = 1.0
            acc = np.zeros(values.shape[1])
            for depth, i, mean2d, inv_cov, radius in projected:
                d = p - mean2d
                if d @ d > radius * radius:
                    continue
                f = min(
                    bundle.opacities[i] * np.exp(-0.5 * d @ inv_cov @ d),
                    ALPHA_CLAMP,
                )
                acc += values[i] * f * trans
                trans *= 1.0 - f
            out[row, col] = acc
    return out


def weighted_average_brute_force(vectors, counts):
    """Element-by-element loop version of the pixel-weighted average."""
    total = float(sum(counts))
    acc = np.zeros_like(np.asarray(vectors[0], dtype=np.float64))
    for v, n in zip(vectors, counts):
        acc = acc + (float(n) / total) * np.asarray(v, dtype=np.float64)
    return acc / np.linalg.norm(acc)


def iou_brute_force(a, b):
    inter = union = 0
    for x, y in zip(np.asarray(a).ravel(), np.asarray(b).ravel()):
        if x and y:
            inter += 1
        if x or y:
            union += 1
    return inter / union if union else 0.0


def dbscan_brute_force(points, eps, min_pts):
    """Textbook DBSCAN by neighborhood counting; returns labels (-1 noise)."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    neighbors = [np.nonzero(dist[i] <= eps)[0].tolist() for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbors]
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = list(neighbors[i])
        while queue:
            j = queue.pop()
            if labels[j] == -1:
                labels[j] = cluster
                if core[j]:
                    queue.extend(neighbors[j])
        cluster += 1
    return labels


def finite_difference(fun, params, step=1e-4):
    """Central differences of a scalar function over a list of arrays."""
    grads = []
    for arr in params:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            hi = fun()
            flat[idx] = orig - step
            lo = fun()
            flat[idx] = orig
            gflat[idx] = (hi - lo) / (2.0 * step)
        grads.append(g)
    return grads
