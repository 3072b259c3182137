"""Multi-output ridge regression: SVD closed form, per-voxel standardization,
and k-fold cross-validated regularization strength.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Rng

DEFAULT_GRID = tuple(np.logspace(-4, 4, 9))


@dataclass(frozen=True)
class StandardizeStats:
    mean: np.ndarray
    std: np.ndarray  # constant columns stored with std 1


def standardize_fit(X: np.ndarray) -> StandardizeStats:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        raise ValueError("need at least two rows to standardize")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return StandardizeStats(mean=mean, std=std)


def standardize_apply(stats: StandardizeStats, X: np.ndarray) -> np.ndarray:
    return (np.asarray(X, dtype=np.float64) - stats.mean) / stats.std


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray        # (p, q) on standardized inputs
    intercept: np.ndarray      # (q,)
    lam: float
    stats: StandardizeStats

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.shape[0]:
            raise ValueError(f"expected {self.weights.shape[0]} columns, got {X.shape[1]}")
        return standardize_apply(self.stats, X) @ self.weights + self.intercept


def _svd_solve(Xs: np.ndarray, Yc: np.ndarray, lam: float,
               svd=None) -> np.ndarray:
    u, s, vt = np.linalg.svd(Xs, full_matrices=False) if svd is None else svd
    shrink = s / (s**2 + lam)
    return vt.T @ (shrink[:, None] * (u.T @ Yc))


def ridge_fit(X: np.ndarray, Y: np.ndarray, lam: float,
              stats: StandardizeStats | None = None) -> RidgeModel:
    """Minimize ||Y - Xs W||^2 + lam ||W||^2 per output column via thin SVD.

    Inputs are standardized per column; targets are centered, with the column
    means kept as the intercept.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ValueError("X and Y row counts disagree")
    if X.shape[0] < 2:
        raise ValueError("need at least two rows")
    if lam <= 0:
        raise ValueError("lam must be positive")
    if stats is None:
        stats = standardize_fit(X)
    Xs = standardize_apply(stats, X)
    intercept = Y.mean(axis=0)
    W = _svd_solve(Xs, Y - intercept, lam)
    return RidgeModel(weights=W, intercept=intercept, lam=float(lam), stats=stats)


def ridge_predict(model: RidgeModel, X: np.ndarray) -> np.ndarray:
    return model.predict(X)


def fold_assignment(n: int, k: int, seed) -> np.ndarray:
    """Deterministic fold label per row from a seeded shuffle."""
    order = Rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.int64)
    for fold, chunk in enumerate(np.array_split(order, k)):
        labels[chunk] = fold
    return labels


def cv_select_lambda(X: np.ndarray, Y: np.ndarray, grid=DEFAULT_GRID, k: int = 5,
                     seed=0, folds: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Pick the grid value minimizing mean held-fold MSE; ties take the
    smaller lambda. Returns (lam, per-lambda mean MSE)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("lambda grid is empty")
    if k < 2:
        raise ValueError("need at least two folds")
    n = X.shape[0]
    if n < k:
        raise ValueError(f"not enough rows ({n}) for {k} folds")
    if folds is None:
        folds = fold_assignment(n, k, seed)

    sq_err = np.zeros(len(grid))
    count = 0
    for fold in range(k):
        hold = folds == fold
        keep = ~hold
        stats = standardize_fit(X[keep])
        Xs = standardize_apply(stats, X[keep])
        intercept = Y[keep].mean(axis=0)
        Yc = Y[keep] - intercept
        svd = np.linalg.svd(Xs, full_matrices=False)
        Xh = standardize_apply(stats, X[hold])
        for i, lam in enumerate(grid):
            W = _svd_solve(Xs, Yc, lam, svd=svd)
            resid = Y[hold] - (Xh @ W + intercept)
            sq_err[i] += float(np.sum(resid**2))
        count += int(hold.sum()) * Y.shape[1]
    mse = sq_err / count
    best = int(np.argmin(mse))  # argmin takes the first (smallest lam) on ties
    return grid[best], mse


def r2_score(Y: np.ndarray, Y_pred: np.ndarray) -> float:
    """Variance-weighted multi-output R^2."""
    Y = np.asarray(Y, dtype=np.float64)
    Y_pred = np.asarray(Y_pred, dtype=np.float64)
    ss_res = float(np.sum((Y - Y_pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean(axis=0)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot
