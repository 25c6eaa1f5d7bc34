"""Patchification of two-plane CSI matrices into token vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class PatchGrid:
    """Geometry of the non-overlapping patch grid over an (A, K) matrix."""

    grid_rows: int
    grid_cols: int
    patch_rows: int
    patch_cols: int

    @property
    def num_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def patch_dim(self) -> int:
        # real block + imaginary block
        return 2 * self.patch_rows * self.patch_cols


def make_grid(a: int, k: int, patch_rows: int, patch_cols: int) -> PatchGrid:
    if patch_rows <= 0 or patch_cols <= 0 or a % patch_rows or k % patch_cols:
        raise ShapeError(
            f"patch shape ({patch_rows}, {patch_cols}) must divide matrix shape ({a}, {k})"
        )
    return PatchGrid(a // patch_rows, k // patch_cols, patch_rows, patch_cols)


def to_planes(h: np.ndarray) -> np.ndarray:
    """Complex (A, K) -> float64 (2, A, K); float input passes through."""
    if np.iscomplexobj(h):
        return np.stack([h.real, h.imag]).astype(np.float64)
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 2:
        raise ShapeError(f"expected complex (A, K) or real (2, A, K), got {arr.shape}")
    return arr


def planes_to_complex(planes: np.ndarray) -> np.ndarray:
    return planes[0] + 1j * planes[1]


def patchify(h: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Split into (P, patch_dim) vectors: row-major over the grid, each
    vector concatenating the real block then the imaginary block, row-major."""
    planes = to_planes(h)
    _, a, k = planes.shape
    if a != grid.grid_rows * grid.patch_rows or k != grid.grid_cols * grid.patch_cols:
        raise ShapeError(f"matrix shape ({a}, {k}) does not match grid {grid}")
    # (2, gr, pr, gc, pc) -> (gr, gc, 2, pr, pc) -> (P, patch_dim)
    blocks = planes.reshape(2, grid.grid_rows, grid.patch_rows, grid.grid_cols, grid.patch_cols)
    blocks = blocks.transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(blocks.reshape(grid.num_patches, grid.patch_dim))


def unpatchify(patches: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Exact inverse of :func:`patchify`; returns float64 planes (2, A, K)."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.shape != (grid.num_patches, grid.patch_dim):
        raise ShapeError(
            f"expected {grid.num_patches} patches of length {grid.patch_dim}, got {patches.shape}"
        )
    blocks = patches.reshape(grid.grid_rows, grid.grid_cols, 2, grid.patch_rows, grid.patch_cols)
    planes = blocks.transpose(2, 0, 3, 1, 4)
    a = grid.grid_rows * grid.patch_rows
    k = grid.grid_cols * grid.patch_cols
    return np.ascontiguousarray(planes.reshape(2, a, k))
