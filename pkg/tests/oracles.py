"""Independent reference implementations used only by tests.

Everything here is written as plain loops over scalars (math module only,
no vectorization) so the package's optimized paths can be checked against
a structurally different computation.
"""

from __future__ import annotations

import math

import numpy as np


def naive_informativeness(
    voxels: np.ndarray, patch_size: int, masked, bins: int
) -> list[float]:
    """Triple-loop orientation-histogram weights over the masked patches."""
    t_dim, h_dim, w_dim = voxels.shape
    s = patch_size
    tn, hn, wn = t_dim // s, h_dim // s, w_dim // s
    binwidth = math.pi / bins

    def val(z, y, x):
        z = min(max(z, 0), t_dim - 1)
        y = min(max(y, 0), h_dim - 1)
        x = min(max(x, 0), w_dim - 1)
        return float(voxels[z, y, x])

    means = []
    for p in range(tn * hn * wn):
        pt, rem = divmod(p, hn * wn)
        ph, pw = divmod(rem, wn)
        hist = [[0.0] * bins for _ in range(bins)]
        for z in range(pt * s, (pt + 1) * s):
            for y in range(ph * s, (ph + 1) * s):
                for x in range(pw * s, (pw + 1) * s):
                    gz = val(z + 1, y, x) - val(z - 1, y, x)
                    gy = val(z, y + 1, x) - val(z, y - 1, x)
                    gx = val(z, y, x + 1) - val(z, y, x - 1)
                    mag = math.sqrt(gx * gx + gy * gy + gz * gz)
                    if mag == 0.0:
                        continue
                    theta = math.acos(gz / mag)
                    phi = abs(math.atan2(gy, gx))
                    r = min(int(math.floor(theta / binwidth)), bins - 1)
                    c = min(int(math.floor(phi / binwidth)), bins - 1)
                    hist[r][c] += mag
        norm_sq = 0.0
        for r in range(bins):
            for c in range(bins):
                norm_sq += hist[r][c] * hist[r][c]
        norm = math.sqrt(norm_sq)
        if norm > 0.0:
            for r in range(bins):
                for c in range(bins):
                    hist[r][c] /= norm
        mean = 0.0
        for r in range(bins):
            for c in range(bins):
                mean += hist[r][c]
        mean /= bins * bins
        means.append(mean)

    total = 0.0
    for i in masked:
        total += means[i]
    if total < 1e-12:
        return [1.0 / len(masked)] * len(masked)
    return [means[i] / total for i in masked]


def naive_dice(pred: np.ndarray, ref: np.ndarray, cls: int) -> float:
    """Voxel-count Dice; both sides empty scores 1."""
    inter = 0
    p_count = 0
    r_count = 0
    t_dim, h_dim, w_dim = pred.shape
    for z in range(t_dim):
        for y in range(h_dim):
            for x in range(w_dim):
                p = pred[z, y, x] == cls
                r = ref[z, y, x] == cls
                p_count += p
                r_count += r
                inter += p and r
    if p_count + r_count == 0:
        return 1.0
    return (2.0 * inter) / (p_count + r_count)


def _naive_surface(mask: np.ndarray) -> list[tuple[int, int, int]]:
    """Six-connected surface voxels; out-of-volume counts as background."""
    t_dim, h_dim, w_dim = mask.shape
    out = []
    for z in range(t_dim):
        for y in range(h_dim):
            for x in range(w_dim):
                if not mask[z, y, x]:
                    continue
                for dz, dy, dx in (
                    (1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1),
                ):
                    nz, ny, nx = z + dz, y + dy, x + dx
                    if not (0 <= nz < t_dim and 0 <= ny < h_dim and 0 <= nx < w_dim):
                        out.append((z, y, x))
                        break
                    if not mask[nz, ny, nx]:
                        out.append((z, y, x))
                        break
    return out


def naive_hd95(pred: np.ndarray, ref: np.ndarray, cls: int) -> float:
    """Brute-force 95th-percentile (nearest-rank) symmetric surface distance."""
    a = _naive_surface(pred == cls)
    b = _naive_surface(ref == cls)
    if not a and not b:
        return 0.0
    if not a or not b:
        return math.inf

    def directed(src, dst):
        dists = []
        for p in src:
            best = math.inf
            for q in dst:
                d = math.sqrt(
                    (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2
                )
                best = min(best, d)
            dists.append(best)
        dists.sort()
        rank = math.ceil(0.95 * len(dists))
        return dists[rank - 1]

    return max(directed(a, b), directed(b, a))


def naive_masked_mse(recon: np.ndarray, target: np.ndarray, masked) -> float:
    """Plain MSE over the masked patches' voxels (uniform weighting)."""
    total = 0.0
    count = 0
    for i in masked:
        for j in range(recon.shape[1]):
            diff = float(recon[i, j]) - float(target[i, j])
            total += diff * diff
            count += 1
    return total / count
