"""Pure-numpy implementations of the hot kernels.

Same contracts as ``numba_impl``; used when numba is unavailable or when
``VOXMIX_BACKEND=numpy`` is set.
"""
from __future__ import annotations

import numpy as np


def affine_trilinear(src, mat, offset, fill):
    """Resample ``src`` on its own grid through an affine coordinate map.

    For every output voxel p the source is sampled at ``mat @ p + offset``
    with trilinear interpolation; samples outside the grid give ``fill``.
    """
    D, W, H = src.shape
    grid = np.indices((D, W, H), dtype=np.float64).reshape(3, -1)
    s = mat @ grid + offset[:, None]

    inside = (
        (s[0] >= 0.0) & (s[0] <= D - 1)
        & (s[1] >= 0.0) & (s[1] <= W - 1)
        & (s[2] >= 0.0) & (s[2] <= H - 1)
    )
    sd, sw, sh = s[0], s[1], s[2]
    i0 = np.floor(sd).astype(np.int64)
    j0 = np.floor(sw).astype(np.int64)
    k0 = np.floor(sh).astype(np.int64)
    np.clip(i0, 0, max(D - 2, 0), out=i0)
    np.clip(j0, 0, max(W - 2, 0), out=j0)
    np.clip(k0, 0, max(H - 2, 0), out=k0)
    fd = sd - i0
    fw = sw - j0
    fh = sh - k0
    # out-of-grid samples land on voxel (0,0,0); they are overwritten below
    i0[~inside] = 0
    j0[~inside] = 0
    k0[~inside] = 0
    fd[~inside] = 0.0
    fw[~inside] = 0.0
    fh[~inside] = 0.0

    i1 = np.minimum(i0 + 1, D - 1)
    j1 = np.minimum(j0 + 1, W - 1)
    k1 = np.minimum(k0 + 1, H - 1)

    v = src.astype(np.float64, copy=False)
    c000 = v[i0, j0, k0]
    c001 = v[i0, j0, k1]
    c010 = v[i0, j1, k0]
    c011 = v[i0, j1, k1]
    c100 = v[i1, j0, k0]
    c101 = v[i1, j0, k1]
    c110 = v[i1, j1, k0]
    c111 = v[i1, j1, k1]

    gd, gw, gh = 1.0 - fd, 1.0 - fw, 1.0 - fh
    out = (
        c000 * gd * gw * gh
        + c001 * gd * gw * fh
        + c010 * gd * fw * gh
        + c011 * gd * fw * fh
        + c100 * fd * gw * gh
        + c101 * fd * gw * fh
        + c110 * fd * fw * gh
        + c111 * fd * fw * fh
    )
    out[~inside] = fill
    return out.reshape(D, W, H).astype(np.float32)


def affine_nearest(src, mat, offset, fill):
    """Nearest-neighbor variant of :func:`affine_trilinear` for label data."""
    D, W, H = src.shape
    grid = np.indices((D, W, H), dtype=np.float64).reshape(3, -1)
    s = mat @ grid + offset[:, None]
    si = np.rint(s[0]).astype(np.int64)
    sj = np.rint(s[1]).astype(np.int64)
    sk = np.rint(s[2]).astype(np.int64)
    inside = (
        (si >= 0) & (si < D) & (sj >= 0) & (sj < W) & (sk >= 0) & (sk < H)
    )
    si[~inside] = 0
    sj[~inside] = 0
    sk[~inside] = 0
    out = src[si, sj, sk]
    out[~inside] = fill
    return out.reshape(D, W, H)


def jacobi_fill(flat, hole_idx, nbr_idx, max_iters, eps):
    """Fill ``flat[hole_idx]`` by iterative 6-neighbor (Jacobi) averaging.

    ``nbr_idx`` holds flat neighbor indices per hole voxel, -1 where the
    neighbor falls outside the grid.  Returns the number of sweeps run.
    """
    valid = nbr_idx >= 0
    counts = valid.sum(axis=1).astype(np.float64)
    safe = np.maximum(nbr_idx, 0)
    it = 0
    while it < max_iters:
        vals = flat[safe]
        vals[~valid] = 0.0
        new = vals.sum(axis=1) / counts
        delta = np.max(np.abs(new - flat[hole_idx])) if hole_idx.size else 0.0
        flat[hole_idx] = new
        it += 1
        if delta < eps:
            break
    return it
