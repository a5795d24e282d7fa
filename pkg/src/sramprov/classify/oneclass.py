"""Mahalanobis envelope trained on one class only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..features import FeatureVector

__all__ = ["OneClassEnvelope", "train_one_class"]


def _matrix(X):
    if len(X) and isinstance(X[0], FeatureVector):
        return np.array([fv.values for fv in X])
    return np.atleast_2d(np.asarray(X, dtype=np.float64))


@dataclass(eq=False)
class OneClassEnvelope:
    target_label: str
    center: np.ndarray
    scatter: np.ndarray
    threshold: float
    percentile: float = 95.0
    schema_id: str = ""

    def __post_init__(self):
        self._chol = np.linalg.cholesky(self.scatter)

    def score(self, X) -> np.ndarray:
        """Mahalanobis distance to the center (0 at the center)."""
        d = _matrix(X) - self.center
        z = np.linalg.solve(self._chol, d.T)
        return np.sqrt(np.sum(z * z, axis=0))

    def accepts(self, X) -> np.ndarray:
        return self.score(X) <= self.threshold

    def accepts_chip(self, segments) -> bool:
        """A chip is accepted when a strict majority of its segments are."""
        a = self.accepts(segments)
        return bool(2 * a.sum() > len(a))

    def to_dict(self):
        return {"format": "sramprov-envelope/1", "target_label": self.target_label,
                "center": self.center.tolist(), "scatter": self.scatter.tolist(),
                "threshold": self.threshold, "percentile": self.percentile, "schema_id": self.schema_id}

    @classmethod
    def from_dict(cls, d):
        return cls(d["target_label"], np.array(d["center"]), np.array(d["scatter"]), d["threshold"],
                   d["percentile"], d.get("schema_id", ""))


def train_one_class(X, label: str, percentile: float = 95.0, schema_id: str = "") -> OneClassEnvelope:
    """Fit center and regularised covariance; threshold at the training-score percentile.

    The covariance gets ``1e-6 * trace / dim`` added to its diagonal.
    """
    X = _matrix(X)
    n, dim = X.shape
    if n < dim + 2:
        raise ValueError(f"one-class training needs >= {dim + 2} rows, got {n}")
    center = X.mean(axis=0)
    cov = np.cov(X, rowvar=False, bias=True).reshape(dim, dim)
    tr = np.trace(cov)
    if not tr > 0:
        raise ValueError(f"degenerate scatter for class {label!r}")
    cov = cov + 1e-6 * tr / dim * np.eye(dim)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError(f"scatter for class {label!r} is not positive definite") from None
    env = OneClassEnvelope(label, center, cov, 0.0, percentile, schema_id)
    env.threshold = float(np.percentile(env.score(X), percentile, method="inverted_cdf"))
    return env
