"""Fixed 2D sine-cosine positional tables for the patch grid.

For each grid axis, position ``pos`` fills column pair (2j, 2j+1) of that
axis's half of the embedding with sin and cos of
``pos / 10000**(2j / d_axis)``; the row-axis half and column-axis half are
concatenated per patch.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def axis_encoding(positions: np.ndarray, d_axis: int) -> np.ndarray:
    """1D sin/cos table: (len(positions), d_axis), sin in even columns."""
    if d_axis % 2:
        raise ShapeError(f"per-axis embedding width must be even, got {d_axis}")
    j = np.arange(d_axis // 2)
    denom = 10000.0 ** (2.0 * j / d_axis)
    angles = positions[:, None] / denom[None, :]
    out = np.empty((positions.shape[0], d_axis))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def build_posemb(grid_rows: int, grid_cols: int, dim: int) -> np.ndarray:
    """(P, dim) table, patches row-major over the grid; first dim/2 columns
    encode the grid-row index, the rest the grid-column index."""
    if dim % 4:
        raise ShapeError(f"embedding dim must be divisible by 4, got {dim}")
    half = dim // 2
    rows = np.repeat(np.arange(grid_rows, dtype=np.float64), grid_cols)
    cols = np.tile(np.arange(grid_cols, dtype=np.float64), grid_rows)
    return np.concatenate([axis_encoding(rows, half), axis_encoding(cols, half)], axis=1)
