"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def check_csi_array(x, a: int | None = None, k: int | None = None) -> np.ndarray:
    """Coerce to float64 (n, 2, A, K): accepts complex (n, A, K) or real
    two-plane (n, 2, A, K) input; rejects non-finite values."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        if x.ndim != 3:
            raise ShapeError(f"complex CSI input must be (n, A, K), got {x.shape}")
        x = np.stack([x.real, x.imag], axis=1).astype(np.float64)
    else:
        x = x.astype(np.float64)
        if x.ndim != 4 or x.shape[1] != 2:
            raise ShapeError(f"real CSI input must be (n, 2, A, K), got {x.shape}")
    if a is not None and x.shape[2] != a:
        raise ShapeError(f"expected {a} antennas, got {x.shape[2]}")
    if k is not None and x.shape[3] != k:
        raise ShapeError(f"expected {k} subcarriers, got {x.shape[3]}")
    if not np.isfinite(x).all():
        raise ShapeError("CSI input contains non-finite values")
    return x


def check_positions(y, n: int) -> np.ndarray:
    """Coerce to float64 (n, 2) position labels in meters."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (n, 2):
        raise ShapeError(f"positions must be ({n}, 2), got {y.shape}")
    if not np.isfinite(y).all():
        raise ShapeError("positions contain non-finite values")
    return y
