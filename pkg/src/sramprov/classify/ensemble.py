"""One-vs-all bagging ensembles, stratified cross-validation, model selection."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..features import FeatureVector
from ..io import derive_seed
from .learners import learner_from_dict, make_learner

__all__ = [
    "SchemaMismatchError",
    "LabeledDataset",
    "EnsembleConfig",
    "EnsembleModel",
    "DEFAULT_CANDIDATES",
    "train_binary_ensemble",
    "stratified_folds",
    "cross_validate",
    "select_best_model",
]


class SchemaMismatchError(ValueError):
    """Features and model were produced under different schemas."""

    def __init__(self, expected: str, got: str):
        exp, got_n = expected.split("|")[0].split(","), got.split("|")[0].split(",")
        diff = [f"-{n}" for n in exp if n not in got_n] + [f"+{n}" for n in got_n if n not in exp]
        super().__init__(f"schema mismatch: model expects {expected!r}, features are {got!r}"
                         + (f" (diff: {' '.join(diff)})" if diff else ""))
        self.expected, self.got = expected, got


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature rows with manufacturer and part labels, one row per chip segment."""

    X: np.ndarray
    manufacturer: np.ndarray
    part: np.ndarray
    chip_id: np.ndarray
    segment_index: np.ndarray
    schema_id: str

    def __post_init__(self):
        n = len(self.X)
        for name in ("manufacturer", "part", "chip_id", "segment_index"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries for {n} rows")

    def __len__(self):
        return len(self.X)

    @classmethod
    def from_rows(cls, rows) -> "LabeledDataset":
        """``rows``: iterable of ``(FeatureVector, manufacturer, part)``."""
        rows = list(rows)
        if not rows:
            raise ValueError("empty dataset")
        schema = rows[0][0].schema_id
        for fv, _, _ in rows:
            if fv.schema_id != schema:
                raise SchemaMismatchError(schema, fv.schema_id)
        return cls(
            X=np.array([fv.values for fv, _, _ in rows]),
            manufacturer=np.array([m for _, m, _ in rows]),
            part=np.array([p for _, _, p in rows]),
            chip_id=np.array([fv.chip_id for fv, _, _ in rows]),
            segment_index=np.array([fv.segment_index for fv, _, _ in rows]),
            schema_id=schema,
        )

    def labels(self, level: str) -> np.ndarray:
        if level not in ("manufacturer", "part"):
            raise ValueError(f"unknown label level {level!r}")
        return getattr(self, level)

    def subset(self, mask) -> "LabeledDataset":
        return LabeledDataset(self.X[mask], self.manufacturer[mask], self.part[mask],
                              self.chip_id[mask], self.segment_index[mask], self.schema_id)

    def digest(self) -> str:
        h = hashlib.sha256(self.schema_id.encode())
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        for a in (self.manufacturer, self.part, self.chip_id):
            h.update("\0".join(map(str, a)).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class EnsembleConfig:
    base_kind: str = "decision-tree"
    n_bags: int = 50
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_bags < 1:
            raise ValueError("n_bags must be >= 1")
        make_learner(self.base_kind, **self.params)

    @classmethod
    def tree(cls, n_bags=50, max_depth=6, min_leaf=2):
        return cls("decision-tree", n_bags, {"max_depth": max_depth, "min_leaf": min_leaf})

    def to_dict(self):
        return {"base_kind": self.base_kind, "n_bags": self.n_bags, "params": dict(sorted(self.params.items()))}


DEFAULT_CANDIDATES = (
    EnsembleConfig.tree(),
    EnsembleConfig("linear-discriminant"),
    EnsembleConfig("naive-bayes"),
)


@dataclass(eq=False)
class EnsembleModel:
    """Bagged binary classifier for one target label.

    The posterior of the target is the Laplace-smoothed fraction of bags
    voting for it, ``(votes + 1) / (n_bags + 2)``.  Inputs are standardised
    with the stored training mean/scale before reaching the base learners.
    """

    target: str
    level: str
    config: EnsembleConfig
    seed: int
    bags: list
    mean: np.ndarray
    scale: np.ndarray
    schema_id: str
    cv_score: float = float("nan")
    training_digest: str = ""

    @property
    def base_kind(self):
        return self.config.base_kind

    @property
    def n_bags(self):
        return self.config.n_bags

    def _matrix(self, X):
        if isinstance(X, FeatureVector):
            X = [X]
        if len(X) and isinstance(X[0], FeatureVector):
            for fv in X:
                if fv.schema_id != self.schema_id:
                    raise SchemaMismatchError(self.schema_id, fv.schema_id)
            X = np.array([fv.values for fv in X])
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.mean):
            raise SchemaMismatchError(self.schema_id, f"<{X.shape[1]} columns>")
        return (X - self.mean) / self.scale

    def votes(self, X) -> np.ndarray:
        Z = self._matrix(X)
        v = np.zeros(len(Z), dtype=np.int64)
        for b in self.bags:
            v += b.predict(Z)
        return v

    def posterior(self, X) -> np.ndarray:
        """Probability of the target label, in (0, 1)."""
        return (self.votes(X) + 1.0) / (self.n_bags + 2.0)

    def predict_proba(self, X) -> np.ndarray:
        p = self.posterior(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.posterior(X) > 0.5).astype(np.int8)

    def to_dict(self) -> dict:
        return {
            "format": "sramprov-ensemble/1",
            "target": self.target,
            "level": self.level,
            "schema_id": self.schema_id,
            "base_kind": self.config.base_kind,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "cv_score": None if np.isnan(self.cv_score) else self.cv_score,
            "training_digest": self.training_digest,
            "calibration": {"kind": "laplace-vote-fraction", "alpha": 1},
            "standardize": {"mean": self.mean.tolist(), "scale": self.scale.tolist()},
            "bags": [b.to_dict() for b in self.bags],
        }

    @classmethod
    def from_dict(cls, d) -> "EnsembleModel":
        c = d["config"]
        return cls(
            target=d["target"], level=d["level"],
            config=EnsembleConfig(c["base_kind"], c["n_bags"], c["params"]),
            seed=d["seed"], bags=[learner_from_dict(b) for b in d["bags"]],
            mean=np.array(d["standardize"]["mean"]), scale=np.array(d["standardize"]["scale"]),
            schema_id=d["schema_id"],
            cv_score=float("nan") if d["cv_score"] is None else d["cv_score"],
            training_digest=d.get("training_digest", ""),
        )


def _binary_target(data: LabeledDataset, target, level):
    y = (data.labels(level) == target).astype(np.int8)
    if y.min() == y.max():
        side = "target" if y[0] else "rest"
        raise ValueError(f"single-class data for target {target!r}: only {side} rows present")
    return y


def _fit_bags(X, y, config: EnsembleConfig, seed):
    bags = []
    n = len(X)
    for b in range(config.n_bags):
        rng = np.random.default_rng(derive_seed(seed, "bag", b))
        idx = rng.integers(0, n, size=n)
        bags.append(make_learner(config.base_kind, **config.params).fit(X[idx], y[idx]))
    return bags


def _standardizer(X):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def train_binary_ensemble(data: LabeledDataset, target: str, config: EnsembleConfig = EnsembleConfig.tree(),
                          seed: int = 0, level: str = "manufacturer") -> EnsembleModel:
    """Fit ``config.n_bags`` base learners on bootstrap resamples, target vs rest."""
    y = _binary_target(data, target, level)
    if min(y.sum(), len(y) - y.sum()) < 2:
        raise ValueError(f"need >= 2 rows on each side of target {target!r}")
    mean, scale = _standardizer(data.X)
    bags = _fit_bags((data.X - mean) / scale, y, config, seed)
    return EnsembleModel(target, level, config, int(seed), bags, mean, scale, data.schema_id,
                         training_digest=data.digest())


def stratified_folds(y, folds: int, seed: int = 0, groups=None) -> list[np.ndarray]:
    """Held-out index arrays for stratified k-fold.

    With ``groups`` (e.g. chip ids) whole groups are assigned to folds, so
    the segments of one chip never straddle train and test.  Within each
    label, units are shuffled (seeded) and dealt round-robin.
    """
    y = np.asarray(y)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    groups = np.arange(len(y)) if groups is None else np.asarray(groups)
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    assignment = {}
    offset = 0
    for label in sorted(set(y.tolist())):
        units = sorted(set(groups[y == label].tolist()))
        if len(units) < folds:
            raise ValueError(f"label {label!r} has {len(units)} stratification units, fewer than {folds} folds")
        for i, g in enumerate(rng.permutation(len(units))):
            unit = units[g]
            if unit in assignment:
                raise ValueError(f"group {unit!r} carries more than one label")
            assignment[unit] = (i + offset) % folds
        offset += len(units)
    fold_of = np.array([assignment[g] for g in groups.tolist()])
    return [np.flatnonzero(fold_of == k) for k in range(folds)]


def cross_validate(data: LabeledDataset, target: str, config: EnsembleConfig = EnsembleConfig.tree(),
                   folds: int = 10, seed: int = 0, level: str = "manufacturer",
                   group_by_chip: bool = True) -> float:
    """Mean held-out accuracy of the target-vs-rest ensemble over stratified folds."""
    y = _binary_target(data, target, level)
    parts = stratified_folds(y, folds, seed, data.chip_id if group_by_chip else None)
    scores = []
    for k, test in enumerate(parts):
        train = np.ones(len(y), dtype=bool)
        train[test] = False
        Xtr = data.X[train]
        mean, scale = _standardizer(Xtr)
        bags = _fit_bags((Xtr - mean) / scale, y[train], config, int(derive_seed(seed, "cv", k).generate_state(1)[0]))
        Z = (data.X[test] - mean) / scale
        votes = sum(b.predict(Z).astype(np.int64) for b in bags)
        pred = (votes + 1.0) / (config.n_bags + 2.0) > 0.5
        scores.append(float(np.mean(pred == y[test])))
    return float(np.mean(scores))


def select_best_model(data: LabeledDataset, target: str, candidates=DEFAULT_CANDIDATES, seed: int = 0,
                      level: str = "manufacturer", folds: int = 10) -> EnsembleModel:
    """Train the candidate with the best CV score; ties go to the earliest candidate."""
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate configurations")
    best, best_score = None, -1.0
    for cfg in candidates:
        score = cross_validate(data, target, cfg, folds, seed, level)
        if score > best_score:
            best, best_score = cfg, score
    model = train_binary_ensemble(data, target, best, seed, level)
    model.cv_score = best_score
    return model
