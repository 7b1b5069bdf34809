"""
Kernel functions for FormulaHunter
Polynomial, Gaussian and Laplacian kernels and their Gram matrices
"""

from typing import Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

from app.models.domain import GramMatrix, KernelFamily, KernelSpec
from app.models.errors import KernelError

ArrayLike = Union[np.ndarray, Sequence[Sequence[float]]]


def _as_rows(X: ArrayLike, name: str) -> np.ndarray:
    rows = np.asarray(X, dtype=float)
    if rows.ndim == 1:
        rows = rows.reshape(1, -1)
    if rows.ndim != 2:
        raise KernelError(f"{name} must be a list of vectors, got shape {rows.shape}")
    return rows


class KernelService:
    """Evaluates kernels on descriptor vectors"""

    def kernel_eval(self, spec: KernelSpec, x: Sequence[float], z: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if x.shape != z.shape or x.ndim != 1:
            raise KernelError(f"kernel inputs differ in length: {x.shape} vs {z.shape}")
        return float(self._block(spec, x.reshape(1, -1), z.reshape(1, -1))[0, 0])

    def gram(self, spec: KernelSpec, X: ArrayLike) -> GramMatrix:
        """Symmetric K_ij = k(x_i, x_j); the upper triangle is mirrored"""
        rows = _as_rows(X, "X")
        if len(rows) == 0:
            raise KernelError("cannot build a Gram matrix of zero points")
        K = self._block(spec, rows, rows)
        K = np.triu(K) + np.triu(K, 1).T
        return GramMatrix(K, spec)

    def cross_gram(self, spec: KernelSpec, X_train: ArrayLike, X_new: ArrayLike) -> np.ndarray:
        """K'_ij = k(x_i, x'_j) with training points on the rows"""
        train = _as_rows(X_train, "X_train")
        new = np.asarray(X_new, dtype=float)
        if new.size == 0:
            return np.zeros((len(train), 0))
        new = _as_rows(new, "X_new")
        return self._block(spec, train, new)

    def _block(self, spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if A.shape[1] != B.shape[1]:
            raise KernelError(f"descriptor length mismatch: {A.shape[1]} vs {B.shape[1]}")
        if spec.family is KernelFamily.POLYNOMIAL:
            return (spec.gamma * (A @ B.T) + spec.c) ** spec.degree
        if spec.family is KernelFamily.GAUSSIAN:
            return np.exp(-spec.gamma * cdist(A, B, "sqeuclidean"))
        return np.exp(-spec.gamma * cdist(A, B, "cityblock"))


# Global instance
kernel_service = KernelService()
