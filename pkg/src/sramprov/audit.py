"""Classification scores, recycled-chip screening and experiment reports."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureVector

__all__ = [
    "UNDEFINED",
    "ConfusionCounts",
    "Scores",
    "scores",
    "confusion",
    "dual_role_scores",
    "mean_defined",
    "FreshReference",
    "RecyclePolicy",
    "RecycleVerdict",
    "recycled_check",
    "experiment_report",
    "render_report",
]

UNDEFINED = None  # a score whose denominator is zero


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int
    positive_class_role: str = "target"

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")
        if self.positive_class_role not in ("target", "outlier"):
            raise ValueError("positive_class_role must be 'target' or 'outlier'")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> "ConfusionCounts":
        role = "outlier" if self.positive_class_role == "target" else "target"
        return ConfusionCounts(self.tn, self.tp, self.fn, self.fp, role)


@dataclass(frozen=True)
class Scores:
    """Precision, recall, F1 and accuracy; ``None`` where undefined."""

    P: float | None
    R: float | None
    F1: float | None
    A: float | None

    def as_dict(self):
        return {"A": self.A, "P": self.P, "R": self.R, "F1": self.F1}


def _ratio(num, den):
    return num / den if den else UNDEFINED


def scores(c: ConfusionCounts) -> Scores:
    P = _ratio(c.tp, c.tp + c.fp)
    R = _ratio(c.tp, c.tp + c.fn)
    if P is UNDEFINED or R is UNDEFINED:
        F1 = UNDEFINED
    elif P == 0 or R == 0:
        F1 = 0.0  # harmonic mean with a zero term
    else:
        F1 = 2.0 / (1.0 / P + 1.0 / R)
    return Scores(P, R, F1, _ratio(c.tp + c.tn, c.total))


def confusion(predictions, labels, target, role: str = "target") -> ConfusionCounts:
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions for {len(labels)} labels")
    pred_pos = np.array([p == target for p in predictions], dtype=bool)
    true_pos = np.array([t == target for t in labels], dtype=bool)
    if role == "outlier":
        pred_pos, true_pos = ~pred_pos, ~true_pos
    return ConfusionCounts(int(np.sum(pred_pos & true_pos)), int(np.sum(~pred_pos & ~true_pos)),
                           int(np.sum(pred_pos & ~true_pos)), int(np.sum(~pred_pos & true_pos)), role)


def dual_role_scores(predictions, labels, target) -> tuple[Scores, Scores]:
    """Scores with the target class positive, then with the outlier class positive."""
    return (scores(confusion(predictions, labels, target, "target")),
            scores(confusion(predictions, labels, target, "outlier")))


def mean_defined(values):
    """Mean over defined (non-None) entries and how many there were."""
    vals = [v for v in values if v is not UNDEFINED]
    return (float(np.mean(vals)) if vals else UNDEFINED), len(vals)


# --- recycled-chip screening --------------------------------------------------


@dataclass(frozen=True)
class FreshReference:
    """Per-feature summary of enrolled fresh chips of one class (population std)."""

    class_id: str
    names: tuple
    mean: np.ndarray
    std: np.ndarray
    quantiles: dict  # level -> per-feature value
    n_ref: int
    schema_id: str = ""

    @classmethod
    def from_vectors(cls, class_id, vectors, levels=(0.0, 0.01, 0.05, 0.5, 0.95, 0.99, 1.0)) -> "FreshReference":
        vectors = list(vectors)
        if len(vectors) < 2:
            raise ValueError("a fresh reference needs at least 2 chips")
        schema = vectors[0].schema_id
        if any(v.schema_id != schema for v in vectors):
            raise ValueError("mixed schemas in fresh reference")
        X = np.array([v.values for v in vectors])
        q = {float(lv): np.quantile(X, lv, axis=0) for lv in levels}
        mean, std = X.mean(axis=0), X.std(axis=0)
        const = np.ptp(X, axis=0) == 0  # keep rounding from turning a constant feature's std into 1e-17
        mean[const], std[const] = X[0, const], 0.0
        return cls(class_id, vectors[0].names, mean, std, q, len(X), schema)

    def quantile(self, level: float) -> np.ndarray:
        if level in self.quantiles:
            return self.quantiles[level]
        raise KeyError(f"reference has no {level} quantile; stored: {sorted(self.quantiles)}")

    def to_dict(self):
        return {"class_id": self.class_id, "names": list(self.names), "mean": self.mean.tolist(),
                "std": self.std.tolist(), "n_ref": self.n_ref, "schema_id": self.schema_id,
                "quantiles": {repr(k): v.tolist() for k, v in sorted(self.quantiles.items())}}


@dataclass(frozen=True)
class RecyclePolicy:
    """Which rules run and their thresholds.

    The Phi4 bound compares against empirical reference quantiles; with a
    handful of enrolled chips those are close to min/max, so it is off by
    default.
    """

    z: float = 3.0
    rules: tuple = ("phi6_shift", "phi1_skew")
    phi4_quantiles: tuple = (0.0, 1.0)

    def __post_init__(self):
        unknown = set(self.rules) - {"phi6_shift", "phi1_skew", "phi4_bound"}
        if unknown:
            raise ValueError(f"unknown recycle rules: {sorted(unknown)}")


@dataclass(frozen=True)
class RecycleVerdict:
    flags: dict
    margins: dict
    decision: str

    @property
    def recycled(self) -> bool:
        return self.decision == "suspect-recycled"

    def to_dict(self):
        return {"decision": self.decision, "flags": dict(sorted(self.flags.items())),
                "margins": {k: (None if math.isinf(v) else v) for k, v in sorted(self.margins.items())},
                "infinite_margin": sorted(k for k, v in self.margins.items() if math.isinf(v))}


def _z_margin(deviation, std, z):
    """``deviation - z*std``: positive fires.  Zero std with a deviation is infinitely far."""
    if std == 0:
        return math.inf if deviation > 0 else -math.inf if deviation < 0 else 0.0
    return float(deviation - z * std)


def recycled_check(ref: FreshReference, test: FeatureVector, policy: RecyclePolicy = RecyclePolicy()) -> RecycleVerdict:
    """Flag a chip whose features moved away from the fresh reference.

    phi6_shift: noisy fraction dropped more than ``z`` reference stds;
    phi1_skew: cell bias moved more than ``z`` stds either way;
    phi4_bound: compression ratio outside the reference quantile band.
    With few reference chips the std estimate is loose; around 20 per class
    keeps the fresh false-alarm rate at z=3 to a few percent.
    A margin is how far past its threshold the chip is (> 0 fires).
    """
    if test.schema_id != ref.schema_id and ref.schema_id:
        raise ValueError(f"schema mismatch: reference {ref.schema_id!r}, test {test.schema_id!r}")
    idx = {n: i for i, n in enumerate(ref.names)}
    spread = ref.std
    flags, margins = {}, {}
    for rule in policy.rules:
        if rule == "phi6_shift":
            i = idx["phi6"]
            m = _z_margin(ref.mean[i] - test.values[i], spread[i], policy.z)
        elif rule == "phi1_skew":
            i = idx["phi1"]
            m = _z_margin(abs(test.values[i] - ref.mean[i]), spread[i], policy.z)
        else:
            i = idx["phi4"]
            lo = ref.quantile(policy.phi4_quantiles[0])[i]
            hi = ref.quantile(policy.phi4_quantiles[1])[i]
            m = float(max(lo - test.values[i], test.values[i] - hi))
        margins[rule] = m
        flags[rule] = bool(m > 0)
    return RecycleVerdict(flags, margins, "suspect-recycled" if any(flags.values()) else "fresh")


# --- experiment report ----------------------------------------------------------

_SCORE_KEYS = ("A", "target_P", "target_R", "target_F1", "outlier_P", "outlier_R", "outlier_F1")


def _class_scores(predictions, labels, target):
    t, o = dual_role_scores(predictions, labels, target)
    return {"A": t.A, "target_P": t.P, "target_R": t.R, "target_F1": t.F1,
            "outlier_P": o.P, "outlier_R": o.R, "outlier_F1": o.F1}


def _average(per_class: dict):
    out, counts = {}, {}
    for k in _SCORE_KEYS:
        out[k], counts[k] = mean_defined([per_class[c][k] for c in per_class])
    return {"scores": out, "n_defined": counts}


def experiment_report(results: dict) -> dict:
    """Per-class and averaged scores for both identification steps at each condition.

    ``results[condition]`` is a list of per-chip records with keys
    ``manufacturer``, ``part`` (true labels), ``pred_manufacturer`` and
    ``pred_part``.  ``pred_part`` must come from the part models of the
    chip's true manufacturer so each manufacturer's part table scores its
    own classifiers; ``pred_part_two_step`` (optional) is the end-to-end
    part verdict.
    """
    report = {"format": "sramprov-report/1", "conditions": {}}
    for cond in sorted(results):
        recs = results[cond]
        if not recs:
            raise ValueError(f"no test chips at condition {cond!r}")
        for r in recs:
            if not r.get("manufacturer") or not r.get("part"):
                raise ValueError(f"chip {r.get('chip_id')!r} is missing labels")
        true_m = [r["manufacturer"] for r in recs]
        pred_m = [r["pred_manufacturer"] for r in recs]
        makers = sorted(set(true_m))
        m_per = {m: _class_scores(pred_m, true_m, m) for m in makers}

        part_section, all_parts = {}, {}
        for m in makers:
            sub = [r for r in recs if r["manufacturer"] == m]
            tp = [r["part"] for r in sub]
            pp = [r["pred_part"] for r in sub]
            per = {p: _class_scores(pp, tp, p) for p in sorted(set(tp))}
            all_parts.update(per)
            part_section[m] = {"per_class": per, "mu_M": _average(per)}
        entry = {
            "n_chips": len(recs),
            "manufacturer": {"per_class": m_per, "mu_V": _average(m_per)},
            "part": {"per_manufacturer": part_section, "mu_V": _average(all_parts)},
        }
        if all("pred_part_two_step" in r for r in recs):
            hits = sum(r["pred_part_two_step"] == r["part"] for r in recs)
            entry["two_step_part_accuracy"] = hits / len(recs)
        report["conditions"][cond] = entry
    return report


def _fmt(v):
    return "  -  " if v is UNDEFINED else f"{v:.2f}"


def _table(title, columns: dict):
    names = list(columns)
    rows = [("A", "A"), ("target P", "target_P"), ("target R", "target_R"), ("target F1", "target_F1"),
            ("outlier P", "outlier_P"), ("outlier R", "outlier_R"), ("outlier F1", "outlier_F1")]
    width = max(6, *(len(n) for n in names))
    lines = [title, "".ljust(11) + " ".join(n.rjust(width) for n in names)]
    for label, key in rows:
        lines.append(label.ljust(11) + " ".join(_fmt(columns[n][key]).rjust(width) for n in names))
    return "\n".join(lines)


def render_report(report: dict) -> str:
    """Plain-text tables: one manufacturer table and one part table per manufacturer."""
    out = []
    for cond, entry in report["conditions"].items():
        out.append(f"== condition {cond} ({entry['n_chips']} test chips) ==")
        mcols = dict(entry["manufacturer"]["per_class"])
        mcols["mu_V"] = entry["manufacturer"]["mu_V"]["scores"]
        out.append(_table("Manufacturer identification", mcols))
        for m, sec in entry["part"]["per_manufacturer"].items():
            cols = dict(sec["per_class"])
            cols["mu_M"] = sec["mu_M"]["scores"]
            out.append(_table(f"Part-number identification: {m}", cols))
        out.append(_table("Part-number identification: all manufacturers", {"mu_V": entry["part"]["mu_V"]["scores"]}))
        if "two_step_part_accuracy" in entry:
            out.append(f"two-step part accuracy: {entry['two_step_part_accuracy']:.3f}")
        out.append("")
    return "\n\n".join(out).rstrip() + "\n"
