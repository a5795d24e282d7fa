"""Generalized (kernel Fisher) discriminant analysis with an RBF kernel.

The centered training kernel is first diagonalised; in the span of its
leading eigenvectors the problem reduces to ordinary multi-class LDA on the
kernel-PCA coordinates, which avoids the ill-conditioned n x n generalized
eigenproblem while giving the same discriminant directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..io import derive_seed
from .ensemble import stratified_folds

__all__ = ["GdaEmbedding", "gda_embed", "rbf_kernel", "centroid_score", "tune_gamma", "GAMMA_GRID"]

GAMMA_GRID = tuple(2.0 ** k for k in range(-10, 11))


def rbf_kernel(A, B, gamma):
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass(eq=False)
class GdaEmbedding:
    gamma: float
    anchors: np.ndarray      # standardized training inputs
    coef: np.ndarray         # (n_anchors, out_dims)
    mean: np.ndarray
    scale: np.ndarray
    kernel_col_mean: np.ndarray
    kernel_mean: float
    classes: tuple

    @property
    def out_dims(self):
        return self.coef.shape[1]

    def transform(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean) / self.scale
        k = rbf_kernel(Z, self.anchors, self.gamma)
        kc = k - k.mean(axis=1, keepdims=True) - self.kernel_col_mean + self.kernel_mean
        return kc @ self.coef


def gda_embed(X, labels, gamma: float = 1.0, out_dims: int | None = None, ridge: float = 1e-8,
              rank_tol: float = 1e-10):
    """Fit the embedding and return ``(embedding, projected training points)``.

    ``out_dims`` defaults to ``K - 1`` for ``K`` classes and may not exceed it.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels)
    classes = tuple(sorted(set(labels.tolist())))
    K = len(classes)
    if K < 2:
        raise ValueError("GDA needs at least two classes")
    out_dims = K - 1 if out_dims is None else out_dims
    if not 1 <= out_dims <= K - 1:
        raise ValueError(f"out_dims must be in [1, {K - 1}] for {K} classes, got {out_dims}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")

    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    Kmat = rbf_kernel(Z, Z, gamma)
    col_mean = Kmat.mean(axis=0)
    k_mean = float(Kmat.mean())
    Kc = Kmat - col_mean[None, :] - col_mean[:, None] + k_mean

    evals, evecs = linalg.eigh(Kc)
    keep = evals > rank_tol * max(evals[-1], 1e-300)
    if keep.sum() < out_dims:
        raise ValueError("kernel matrix rank too low for the requested dimensions")
    evals, evecs = evals[keep], evecs[:, keep]
    coords = evecs * np.sqrt(evals)  # kernel-PCA coordinates of the training points (centered)

    Sw = np.zeros((coords.shape[1],) * 2)
    Sb = np.zeros_like(Sw)
    for c in classes:
        Y = coords[labels == c]
        mu = Y.mean(axis=0)
        Sw += (Y - mu).T @ (Y - mu)
        Sb += len(Y) * np.outer(mu, mu)
    Sw += (ridge * np.trace(Sw) / len(Sw) + 1e-300) * np.eye(len(Sw))
    try:
        w, V = linalg.eigh(Sb, Sw)
    except linalg.LinAlgError as e:
        raise ValueError(f"singular regularized scatter: {e}") from None
    V = V[:, np.argsort(w)[::-1][:out_dims]]
    coef = evecs / np.sqrt(evals) @ V
    # Deterministic orientation: largest-magnitude coefficient positive.
    signs = np.sign(coef[np.argmax(np.abs(coef), axis=0), np.arange(out_dims)])
    coef *= np.where(signs == 0, 1.0, signs)

    emb = GdaEmbedding(float(gamma), Z, coef, mean, scale, col_mean, k_mean, classes)
    return emb, Kc @ coef


def centroid_score(P, labels) -> float:
    """Mean sample-to-own-centroid distance over mean centroid-to-centroid distance.

    Smaller is better; scale-free so different gammas are comparable.
    """
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    cents = np.array([P[labels == c].mean(axis=0) for c in classes])
    within = np.mean([np.linalg.norm(P[labels == c] - cents[i], axis=1).mean() for i, c in enumerate(classes)])
    diff = cents[:, None, :] - cents[None, :, :]
    between = np.linalg.norm(diff, axis=2)[np.triu_indices(len(classes), 1)].mean()
    return float(within / between) if between > 0 else float("inf")


def tune_gamma(X, labels, grid=GAMMA_GRID, folds: int = 10, seed: int = 0, out_dims=None, groups=None) -> float:
    """Grid gamma maximizing held-out class compactness (lowest :func:`centroid_score`)."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    parts = stratified_folds(labels, folds, int(derive_seed(seed, "gda").generate_state(1)[0]), groups)
    best, best_score = None, np.inf
    for g in grid:
        scores = []
        for test in parts:
            train = np.ones(len(X), dtype=bool)
            train[test] = False
            try:
                emb, _ = gda_embed(X[train], labels[train], g, out_dims)
            except ValueError:
                scores.append(np.inf)
                continue
            scores.append(centroid_score(emb.transform(X[test]), labels[test]))
        s = float(np.mean(scores))
        if s < best_score:
            best, best_score = g, s
    if best is None:
        raise ValueError("no gamma in the grid produced a usable embedding")
    return float(best)
