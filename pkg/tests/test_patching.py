import numpy as np
import pytest

from chanmae.errors import ShapeError
from chanmae.patching import make_grid, patchify, planes_to_complex, to_planes, unpatchify


def random_h(rng, a=4, k=8):
    return rng.normal(size=(a, k)) + 1j * rng.normal(size=(a, k))


class TestGrid:
    def test_dims(self):
        grid = make_grid(4, 8, 2, 4)
        assert (grid.grid_rows, grid.grid_cols) == (2, 2)
        assert grid.num_patches == 4
        assert grid.patch_dim == 16

    def test_non_divisible_rejected(self):
        with pytest.raises(ShapeError):
            make_grid(4, 8, 3, 4)


class TestPatchify:
    def test_single_patch_is_whole_matrix(self):
        rng = np.random.default_rng(0)
        h = random_h(rng, 2, 3)
        grid = make_grid(2, 3, 2, 3)
        patches = patchify(h, grid)
        assert patches.shape == (1, 12)
        expected = np.concatenate([h.real.reshape(-1), h.imag.reshape(-1)])
        assert np.array_equal(patches[0], expected)

    def test_round_trip_identity(self):
        rng = np.random.default_rng(1)
        h = random_h(rng)
        grid = make_grid(4, 8, 2, 4)
        back = unpatchify(patchify(h, grid), grid)
        assert np.array_equal(back, to_planes(h))
        assert np.array_equal(planes_to_complex(back), h)

    def test_element_index_oracle(self):
        # A=4, K=8, patch 2x4: element (0, 4) lands in patch 1 at position 0
        rng = np.random.default_rng(2)
        h = random_h(rng)
        grid = make_grid(4, 8, 2, 4)
        patches = patchify(h, grid)
        assert patches.shape == (4, 16)
        assert patches[1][0] == h[0, 4].real
        assert patches[1][8] == h[0, 4].imag

    def test_single_nonzero_maps_to_analytic_position(self):
        grid = make_grid(4, 8, 2, 4)
        pr, pc = grid.patch_rows, grid.patch_cols
        for patch_idx, flat in [(0, 0), (2, 5), (3, 13), (1, 8)]:
            patches = np.zeros((grid.num_patches, grid.patch_dim))
            patches[patch_idx, flat] = 1.0
            planes = unpatchify(patches, grid)
            plane = flat // (pr * pc)
            rem = flat % (pr * pc)
            row = (patch_idx // grid.grid_cols) * pr + rem // pc
            col = (patch_idx % grid.grid_cols) * pc + rem % pc
            assert planes[plane, row, col] == 1.0
            assert planes.sum() == 1.0

    def test_zero_patches_give_zero_matrix(self):
        grid = make_grid(4, 8, 2, 4)
        planes = unpatchify(np.zeros((4, 16)), grid)
        assert not planes.any()

    def test_wrong_patch_count_rejected(self):
        grid = make_grid(4, 8, 2, 4)
        with pytest.raises(ShapeError):
            unpatchify(np.zeros((3, 16)), grid)
        with pytest.raises(ShapeError):
            unpatchify(np.zeros((4, 15)), grid)

    def test_wrong_matrix_shape_rejected(self):
        grid = make_grid(4, 8, 2, 4)
        with pytest.raises(ShapeError):
            patchify(np.zeros((6, 8), dtype=complex), grid)
