"""Small linear-algebra helpers shared across modules."""

from __future__ import annotations

import numpy as np


def orthonormal_columns(A: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of the column space of ``A``.

    Modified Gram-Schmidt with a second orthogonalization pass.  Columns
    whose residual norm falls below ``tol * max(1, ||a_k||)`` are dropped,
    so rank-deficient input yields a basis of the true column space; a
    zero matrix yields an (n, 0) array.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a 2-d array")
    basis: list[np.ndarray] = []
    for k in range(A.shape[1]):
        v = A[:, k].astype(float, copy=True)
        scale = max(1.0, float(np.linalg.norm(v)))
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        nv = float(np.linalg.norm(v))
        if nv > tol * scale:
            basis.append(v / nv)
    if not basis:
        return np.zeros((A.shape[0], 0))
    return np.column_stack(basis)
