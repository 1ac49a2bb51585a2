"""numba-compiled hot kernels (see ``numpy_impl`` for the fallback twin).

Loops are written out explicitly; @njit(cache=True) persists the compiled
artifacts so pipeline worker processes pay the compile cost once per host.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def affine_trilinear(src, mat, offset, fill):
    D, W, H = src.shape
    out = np.empty((D, W, H), dtype=np.float32)
    m00, m01, m02 = mat[0, 0], mat[0, 1], mat[0, 2]
    m10, m11, m12 = mat[1, 0], mat[1, 1], mat[1, 2]
    m20, m21, m22 = mat[2, 0], mat[2, 1], mat[2, 2]
    o0, o1, o2 = offset[0], offset[1], offset[2]
    for d in range(D):
        for w in range(W):
            for h in range(H):
                sd = m00 * d + m01 * w + m02 * h + o0
                sw = m10 * d + m11 * w + m12 * h + o1
                sh = m20 * d + m21 * w + m22 * h + o2
                if (
                    sd < 0.0 or sd > D - 1
                    or sw < 0.0 or sw > W - 1
                    or sh < 0.0 or sh > H - 1
                ):
                    out[d, w, h] = fill
                    continue
                i0 = int(np.floor(sd))
                j0 = int(np.floor(sw))
                k0 = int(np.floor(sh))
                if i0 > D - 2:
                    i0 = max(D - 2, 0)
                if j0 > W - 2:
                    j0 = max(W - 2, 0)
                if k0 > H - 2:
                    k0 = max(H - 2, 0)
                fd = sd - i0
                fw = sw - j0
                fh = sh - k0
                i1 = min(i0 + 1, D - 1)
                j1 = min(j0 + 1, W - 1)
                k1 = min(k0 + 1, H - 1)
                gd = 1.0 - fd
                gw = 1.0 - fw
                gh = 1.0 - fh
                acc = (
                    src[i0, j0, k0] * gd * gw * gh
                    + src[i0, j0, k1] * gd * gw * fh
                    + src[i0, j1, k0] * gd * fw * gh
                    + src[i0, j1, k1] * gd * fw * fh
                    + src[i1, j0, k0] * fd * gw * gh
                    + src[i1, j0, k1] * fd * gw * fh
                    + src[i1, j1, k0] * fd * fw * gh
                    + src[i1, j1, k1] * fd * fw * fh
                )
                out[d, w, h] = acc
    return out


@njit(cache=True)
def affine_nearest(src, mat, offset, fill):
    D, W, H = src.shape
    out = np.empty((D, W, H), dtype=src.dtype)
    m00, m01, m02 = mat[0, 0], mat[0, 1], mat[0, 2]
    m10, m11, m12 = mat[1, 0], mat[1, 1], mat[1, 2]
    m20, m21, m22 = mat[2, 0], mat[2, 1], mat[2, 2]
    o0, o1, o2 = offset[0], offset[1], offset[2]
    for d in range(D):
        for w in range(W):
            for h in range(H):
                sd = m00 * d + m01 * w + m02 * h + o0
                sw = m10 * d + m11 * w + m12 * h + o1
                sh = m20 * d + m21 * w + m22 * h + o2
                si = int(np.rint(sd))
                sj = int(np.rint(sw))
                sk = int(np.rint(sh))
                if 0 <= si < D and 0 <= sj < W and 0 <= sk < H:
                    out[d, w, h] = src[si, sj, sk]
                else:
                    out[d, w, h] = fill
    return out


@njit(cache=True)
def jacobi_fill(flat, hole_idx, nbr_idx, max_iters, eps):
    n = hole_idx.shape[0]
    if n == 0:
        return 0
    new = np.empty(n, dtype=np.float64)
    it = 0
    while it < max_iters:
        delta = 0.0
        for k in range(n):
            s = 0.0
            c = 0
            for t in range(6):
                j = nbr_idx[k, t]
                if j >= 0:
                    s += flat[j]
                    c += 1
            new[k] = s / c
            diff = abs(new[k] - flat[hole_idx[k]])
            if diff > delta:
                delta = diff
        for k in range(n):
            flat[hole_idx[k]] = new[k]
        it += 1
        if delta < eps:
            break
    return it
