"""Principal components via cyclic Jacobi eigendecomposition of the covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class PCADegeneracyError(ValueError):
    pass


def jacobi_eigh(C: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and column eigenvectors of a symmetric matrix."""
    A = np.array(C, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt((np.triu(A, 1) ** 2).sum())
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                R = np.array([[c, s], [-s, c]])
                idx = [p, q]
                A[:, idx] = A[:, idx] @ R
                A[idx, :] = R.T @ A[idx, :]
                A[p, q] = A[q, p] = 0.0
                V[:, idx] = V[:, idx] @ R
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray         # (k, d), rows ordered by descending variance
    explained_variance: np.ndarray
    explained_ratio: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X) - self.mean) @ self.components.T

    def inverse(self, Y: np.ndarray) -> np.ndarray:
        return Y @ self.components + self.mean


def fit_pca(X: np.ndarray, k: int = 2) -> PCAResult:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise PCADegeneracyError("PCA needs a 2-D array with at least two rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / (X.shape[0] - 1)
    total = float(np.trace(C))
    if not total > 0:
        raise PCADegeneracyError("PCA: latents have zero variance")
    w, V = jacobi_eigh(C)
    w = np.clip(w, 0.0, None)
    k = min(k, X.shape[1])
    comps = V[:, :k].T.copy()
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PCAResult(mean, comps, w[:k], w[:k] / w.sum())
