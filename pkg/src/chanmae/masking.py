"""Visible/masked partitions of the patch grid."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .patching import PatchGrid


@dataclass
class MaskPlan:
    """A partition of patch indices 0..P-1 into visible and masked sets.

    ``visible`` is the first P-M of ``permutation`` sorted ascending (the
    encoder consumes patches in index order); ``masked`` is the remainder,
    also sorted.
    """

    permutation: np.ndarray
    num_masked: int
    visible: np.ndarray
    masked: np.ndarray

    @property
    def num_patches(self) -> int:
        return self.permutation.shape[0]

    @property
    def num_visible(self) -> int:
        return self.num_patches - self.num_masked


def _plan_from_permutation(perm: np.ndarray, num_masked: int) -> MaskPlan:
    visible = np.sort(perm[: perm.shape[0] - num_masked])
    masked = np.sort(perm[perm.shape[0] - num_masked :])
    return MaskPlan(permutation=perm, num_masked=num_masked, visible=visible, masked=masked)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def random_mask(num_patches: int, mask_ratio: float, rng: np.random.Generator) -> MaskPlan:
    """Uniformly random plan masking round(mask_ratio * P) patches (half-up)."""
    if not 0.0 <= mask_ratio < 1.0:
        raise ContractError(f"mask_ratio must be in [0, 1), got {mask_ratio}")
    perm = rng.permutation(num_patches)
    return _plan_from_permutation(perm, round_half_up(mask_ratio * num_patches))


def all_visible_plan(num_patches: int) -> MaskPlan:
    return _plan_from_permutation(np.arange(num_patches), 0)


def structured_mask(grid: PatchGrid, domain: str, pattern: str) -> MaskPlan:
    """Mask half the grid rows (antenna domain) or half the grid columns
    (subcarrier domain): ``interleaved`` masks odd indices along the axis,
    ``contiguous`` masks its upper half."""
    if domain not in ("antenna", "subcarrier"):
        raise ContractError(f"domain must be 'antenna' or 'subcarrier', got {domain!r}")
    if pattern not in ("interleaved", "contiguous"):
        raise ContractError(f"pattern must be 'interleaved' or 'contiguous', got {pattern!r}")
    axis_len = grid.grid_rows if domain == "antenna" else grid.grid_cols
    if axis_len % 2:
        raise ContractError(f"{domain} grid axis length {axis_len} must be even for 50% masking")
    if pattern == "interleaved":
        masked_axis = np.arange(1, axis_len, 2)
    else:
        masked_axis = np.arange(axis_len // 2, axis_len)
    index = np.arange(grid.num_patches).reshape(grid.grid_rows, grid.grid_cols)
    masked = (index[masked_axis, :] if domain == "antenna" else index[:, masked_axis]).reshape(-1)
    masked = np.sort(masked)
    visible = np.setdiff1d(index.reshape(-1), masked)
    perm = np.concatenate([visible, masked])
    return _plan_from_permutation(perm, masked.shape[0])
