"""Background inpainting: iterative 6-neighbor diffusion fill.

The fill is a Jacobi relaxation with hole voxels seeded from the mean of
the hole's boundary ring, so filled values always stay inside the range of
the surrounding intensities (discrete maximum principle).  The module is
the default implementation behind a pluggable inpainter callable, letting
a learned model be swapped in later.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import UnfillableError
from .model import Case, Volume

_OFFSETS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


@dataclass(frozen=True)
class InpaintParams:
    max_iters: int = 500
    epsilon: float = 0.1

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def _neighbor_table(shape, hole: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coords = np.argwhere(hole)
    hole_idx = np.ravel_multi_index(coords.T, shape)
    n = coords.shape[0]
    nbrs = np.full((n, 6), -1, dtype=np.int64)
    for t, off in enumerate(_OFFSETS):
        nb = coords + off
        ok = np.all((nb >= 0) & (nb < np.asarray(shape)), axis=1)
        nbrs[ok, t] = np.ravel_multi_index(nb[ok].T, shape)
    return hole_idx.astype(np.int64), nbrs


def inpaint(volume: Volume, hole: np.ndarray, params: InpaintParams = InpaintParams()) -> Volume:
    """Replace hole voxels by diffusion from their surroundings.

    Voxels outside the hole are preserved bit-exactly; an empty hole
    returns the input unchanged.
    """
    hole = np.asarray(hole, dtype=bool)
    if hole.shape != volume.shape:
        raise ValueError(f"hole shape {hole.shape} != volume shape {volume.shape}")
    if not hole.any():
        return volume
    if hole.all():
        raise UnfillableError("hole covers the entire grid")

    hole_idx, nbrs = _neighbor_table(volume.shape, hole)
    ring = np.zeros(volume.shape, dtype=bool)
    valid = nbrs >= 0
    ring.ravel()[nbrs[valid]] = True
    ring &= ~hole

    out = np.array(volume.data, copy=True)
    for ch in range(volume.channels):
        flat = out[ch].astype(np.float64).ravel()
        seed = float(flat[ring.ravel()].mean()) if ring.any() else 0.0
        flat[hole_idx] = seed
        _kernels.jacobi_fill(flat, hole_idx, nbrs, int(params.max_iters), float(params.epsilon))
        out[ch].ravel()[hole_idx] = flat[hole_idx].astype(np.float32)
    return volume.with_data(out)


def erase_organs(case: Case, inpainter=None, params: InpaintParams = InpaintParams()) -> Volume:
    """Organ-free background image: every organ voxel becomes inpainted fill."""
    hole = case.labels.data > 0
    if not hole.any():
        return case.volume
    fill = inpainter if inpainter is not None else inpaint
    return fill(case.volume, hole, params)
