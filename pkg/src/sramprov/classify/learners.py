"""Binary base learners for the bagging ensembles.

Every learner takes labels in {0, 1}, predicts hard labels, and round-trips
through a plain dict so trained models can be stored as JSON.
"""

from __future__ import annotations

import numpy as np


class ConstantLearner:
    kind = "constant"

    def __init__(self, label: int = 0):
        self.label = int(label)

    def fit(self, X, y):
        y = np.asarray(y)
        self.label = int(2 * y.sum() > len(y))
        return self

    def predict(self, X):
        return np.full(len(X), self.label, dtype=np.int8)

    def to_dict(self):
        return {"kind": self.kind, "label": self.label}

    @classmethod
    def from_dict(cls, d):
        return cls(d["label"])


def _single_class(y):
    return y.min() == y.max()


class DecisionTree:
    """CART tree on Gini impurity with a depth limit and minimum leaf size.

    Nodes live in parallel arrays; ``feature == -1`` marks a leaf whose
    ``value`` is the positive fraction of its training rows.
    """

    kind = "decision-tree"

    def __init__(self, max_depth: int = 6, min_leaf: int = 2):
        self.max_depth = max_depth
        self.min_leaf = min_leaf

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(y[idx].mean()))
            return len(feature) - 1

        root = new_node(np.arange(len(y)))
        stack = [(root, np.arange(len(y)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            if depth >= self.max_depth or len(idx) < 2 * self.min_leaf or _single_class(y[idx]):
                continue
            split = self._best_split(X[idx], y[idx])
            if split is None:
                continue
            f, thr = split
            go_left = X[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            feature[node], threshold[node] = f, thr
            left[node] = new_node(li)
            right[node] = new_node(ri)
            stack.append((right[node], ri, depth + 1))
            stack.append((left[node], li, depth + 1))

        self.feature = np.array(feature, dtype=np.int64)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.value = np.array(value)
        return self

    def _best_split(self, X, y):
        n = len(y)
        order = np.argsort(X, axis=0, kind="stable")
        xs = np.take_along_axis(X, order, axis=0)
        pos_left = np.cumsum(y[order], axis=0)[:-1]
        n_left = np.arange(1, n)[:, None].astype(np.float64)
        n_right = n - n_left
        pos_right = y.sum() - pos_left
        # n * weighted Gini = 2 * (pl*(nl-pl)/nl + pr*(nr-pr)/nr)
        impurity = pos_left * (n_left - pos_left) / n_left + pos_right * (n_right - pos_right) / n_right
        ok = xs[1:] > xs[:-1]
        m = self.min_leaf
        ok[: m - 1] = False
        if m > 1:
            ok[-(m - 1):] = False
        if not ok.any():
            return None
        impurity = np.where(ok, impurity, np.inf)
        i, f = np.unravel_index(np.argmin(impurity), impurity.shape)
        p = y.sum()
        if impurity[i, f] >= p * (n - p) / n - 1e-12:
            return None
        return int(f), float((xs[i, f] + xs[i + 1, f]) / 2.0)

    def leaf_value(self, X):
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            r, nd = rows[inner], node[inner]
            go_left = X[r, f[inner]] <= self.threshold[nd]
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X):
        return (self.leaf_value(X) > 0.5).astype(np.int8)

    @property
    def depth(self):
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def to_dict(self):
        return {"kind": self.kind, "max_depth": self.max_depth, "min_leaf": self.min_leaf,
                "feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        t = cls(d["max_depth"], d["min_leaf"])
        t.feature = np.array(d["feature"], dtype=np.int64)
        t.threshold = np.array(d["threshold"], dtype=np.float64)
        t.left = np.array(d["left"], dtype=np.int64)
        t.right = np.array(d["right"], dtype=np.int64)
        t.value = np.array(d["value"], dtype=np.float64)
        return t


class LinearDiscriminant:
    """Two-class LDA with a pooled, ridge-regularised covariance."""

    kind = "linear-discriminant"

    def __init__(self, ridge: float = 1e-6):
        self.ridge = ridge

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if _single_class(y):
            self.coef = np.zeros(X.shape[1])
            self.intercept = 1.0 if y[0] else -1.0
            return self
        X0, X1 = X[y == 0], X[y == 1]
        mu0, mu1 = X0.mean(axis=0), X1.mean(axis=0)
        resid = np.vstack([X0 - mu0, X1 - mu1])
        cov = resid.T @ resid / max(len(X) - 2, 1)
        cov += (self.ridge * np.trace(cov) / len(cov) + 1e-12) * np.eye(len(cov))
        self.coef = np.linalg.solve(cov, mu1 - mu0)
        self.intercept = float(-self.coef @ (mu0 + mu1) / 2.0 + np.log(len(X1) / len(X0)))
        return self

    def decision_function(self, X):
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(np.int8)

    def to_dict(self):
        return {"kind": self.kind, "ridge": self.ridge, "coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d):
        m = cls(d["ridge"])
        m.coef = np.array(d["coef"], dtype=np.float64)
        m.intercept = float(d["intercept"])
        return m


class GaussianNaiveBayes:
    kind = "naive-bayes"

    def __init__(self, var_smoothing: float = 1e-9):
        self.var_smoothing = var_smoothing

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        eps = self.var_smoothing * max(float(X.var(axis=0).max()), 1e-300)
        self.mean = np.zeros((2, X.shape[1]))
        self.var = np.ones((2, X.shape[1]))
        self.log_prior = np.full(2, -np.inf)
        for c in (0, 1):
            Xc = X[y == c]
            if len(Xc):
                self.mean[c] = Xc.mean(axis=0)
                self.var[c] = Xc.var(axis=0) + eps
                self.log_prior[c] = np.log(len(Xc) / len(X))
        return self

    def log_likelihood(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.empty((len(X), 2))
        for c in (0, 1):
            out[:, c] = self.log_prior[c] - 0.5 * np.sum(
                np.log(2 * np.pi * self.var[c]) + (X - self.mean[c]) ** 2 / self.var[c], axis=1)
        return out

    def predict(self, X):
        ll = self.log_likelihood(X)
        return (ll[:, 1] > ll[:, 0]).astype(np.int8)

    def to_dict(self):
        return {"kind": self.kind, "var_smoothing": self.var_smoothing, "mean": self.mean.tolist(),
                "var": self.var.tolist(),
                "log_prior": [None if np.isinf(v) else float(v) for v in self.log_prior]}

    @classmethod
    def from_dict(cls, d):
        m = cls(d["var_smoothing"])
        m.mean = np.array(d["mean"], dtype=np.float64)
        m.var = np.array(d["var"], dtype=np.float64)
        m.log_prior = np.array([-np.inf if v is None else v for v in d["log_prior"]])
        return m


LEARNERS = {cls.kind: cls for cls in (DecisionTree, LinearDiscriminant, GaussianNaiveBayes, ConstantLearner)}


def make_learner(kind: str, **params):
    try:
        cls = LEARNERS[kind]
    except KeyError:
        raise ValueError(f"unknown base learner {kind!r}; expected one of {sorted(LEARNERS)}") from None
    return cls(**params)


def learner_from_dict(d):
    return LEARNERS[d["kind"]].from_dict(d)
