"""Corpus -> feature table -> model registry -> verdicts.

These functions sit between the library modules and the command line; the
acceptance experiment drives them directly as well.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audit import experiment_report
from .classify import (DEFAULT_CANDIDATES, EnsembleModel, LabeledDataset, OneClassEnvelope,
                       SchemaMismatchError, predict_segments, select_best_model, train_one_class,
                       two_step_identify)
from .core import DumpFormatError, NoisyBand, segment
from .corpus import Corpus
from .features import FeatureParams, FeatureVector, concat_conditions, extract_features
from .io import atomic_write_text, derive_seed, read_json, write_json

__all__ = [
    "LabeledRow",
    "chip_features",
    "extract_corpus",
    "write_feature_csv",
    "read_feature_csv",
    "params_from_tag",
    "Registry",
    "train_registry",
    "classify_chips",
    "group_by_chip",
    "report_from_verdicts",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledRow:
    fv: FeatureVector
    manufacturer: str = ""
    part: str = ""


def params_from_tag(tag: str) -> FeatureParams:
    """Inverse of :attr:`FeatureParams.tag`."""
    m = re.fullmatch(r"(\w+)-(\d+);blk(\d+)(?:;band(\d+)-(\d+))?", tag)
    if m is None:
        raise ValueError(f"unrecognised feature parameter tag {tag!r}")
    band = NoisyBand(int(m[4]), int(m[5])) if m[4] else None
    return FeatureParams(int(m[3]), band, m[1], int(m[2]))


def chip_features(sig, k: int, params: FeatureParams) -> list[FeatureVector]:
    """Per-segment feature vectors; ``k == 0`` means one vector for the whole chip."""
    if k == 0:
        return [extract_features(sig, params)]
    return [extract_features(s, params) for s in segment(sig, k)]


def extract_corpus(corpus: Corpus, split=None, conditions=None, k: int = 16,
                   params: FeatureParams = FeatureParams(), subset=None, concat: bool = False, jobs: int = 1):
    """Feature rows for the selected chips plus a list of skipped ``(chip_id, condition, reason)``.

    Without ``concat`` there is one row per (chip, segment, condition).  With
    ``concat`` the conditions are joined into one row per (chip, segment),
    restricted to ``subset`` (default Phi1, Phi4, Phi6, Phi7); a chip missing
    any condition is dropped whole.
    """
    conditions = list(conditions or corpus.condition_tags)
    chips = sorted(corpus.select(split), key=lambda c: c.chip_id)

    def one_chip(chip):
        per_cond, skipped = {}, []
        for cond in conditions:
            try:
                sig = corpus.signature(chip, cond)
            except (DumpFormatError, ValueError, OSError, KeyError) as e:
                log.warning("skipping %s at %s: %s", chip.chip_id, cond, e)
                skipped.append((chip.chip_id, cond, str(e)))
                continue
            per_cond[cond] = chip_features(sig, k, params)
        rows = []
        if concat:
            if len(per_cond) == len(conditions):
                for segs in zip(*(per_cond[c] for c in conditions)):
                    fv = concat_conditions(segs, subset or ("phi1", "phi4", "phi6", "phi7"))
                    rows.append(LabeledRow(fv, chip.manufacturer, chip.part))
        else:
            for cond in conditions:
                for fv in per_cond.get(cond, []):
                    rows.append(LabeledRow(fv.select(subset) if subset else fv, chip.manufacturer, chip.part))
        return rows, skipped

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(one_chip, chips))
    else:
        results = [one_chip(c) for c in chips]
    rows = [r for rs, _ in results for r in rs]
    skipped = [s for _, ss in results for s in ss]
    rows.sort(key=lambda r: (r.fv.chip_id, r.fv.segment_index, r.fv.condition))
    return rows, skipped


# --- feature CSV ------------------------------------------------------------------


def write_feature_csv(rows, path):
    """UTF-8 CSV; ``phi1..phiK`` are positional, ``schema_id`` names them."""
    rows = list(rows)
    width = max((len(r.fv.values) for r in rows), default=0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chip_id", "segment", "condition", "schema_id"] + [f"phi{i + 1}" for i in range(width)]
               + ["label_manufacturer", "label_part"])
    for r in rows:
        if len(r.fv.values) != width:
            raise ValueError("all rows of a feature table must share one schema width")
        w.writerow([r.fv.chip_id, r.fv.segment_index, r.fv.condition, r.fv.schema_id]
                   + [repr(float(v)) for v in r.fv.values] + [r.manufacturer, r.part])
    atomic_write_text(path, buf.getvalue())


def read_feature_csv(path) -> list[LabeledRow]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DumpFormatError(f"{path}: empty feature table") from None
        fixed = ["chip_id", "segment", "condition", "schema_id"]
        if header[:4] != fixed or header[-2:] != ["label_manufacturer", "label_part"]:
            raise DumpFormatError(f"{path}: unexpected header {header}")
        width = len(header) - 6
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise DumpFormatError(f"{path}:{lineno}: {len(rec)} fields, expected {len(header)}")
            schema = rec[3]
            names_part, _, ptag = schema.partition("|")
            names = tuple(names_part.split(","))
            if len(names) != width:
                raise DumpFormatError(f"{path}:{lineno}: schema names {len(names)} features, row has {width}")
            fv = FeatureVector(np.array([float(x) for x in rec[4:4 + width]]), names, rec[0], int(rec[1]),
                               rec[2], ptag)
            rows.append(LabeledRow(fv, rec[-2], rec[-1]))
    return rows


def group_by_chip(rows):
    """``{(chip_id, condition): [rows ordered by segment]}`` in sorted key order."""
    groups = defaultdict(list)
    for r in rows:
        groups[(r.fv.chip_id, r.fv.condition)].append(r)
    return {k: sorted(v, key=lambda r: r.fv.segment_index) for k, v in sorted(groups.items())}


# --- model registry -----------------------------------------------------------------


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name)


@dataclass(eq=False)
class Registry:
    manufacturer_models: dict
    part_models: dict  # manufacturer -> part -> model
    envelopes: dict = field(default_factory=dict)
    schema_id: str = ""
    segments: int = 16
    meta: dict = field(default_factory=dict)

    @property
    def params(self) -> FeatureParams:
        return params_from_tag(self.schema_id.partition("|")[2])

    @property
    def feature_names(self) -> tuple:
        return tuple(self.schema_id.partition("|")[0].split(","))

    def check_schema(self, schema_id: str):
        if schema_id != self.schema_id:
            raise SchemaMismatchError(self.schema_id, schema_id)

    def save(self, root):
        root = Path(root)
        index = {"format": "sramprov-registry/1", "schema_id": self.schema_id, "segments": self.segments,
                 "meta": self.meta, "manufacturer": {}, "part": {}, "envelope": {}}
        for m, model in sorted(self.manufacturer_models.items()):
            rel = f"manufacturer/{_safe(m)}.json"
            write_json(root / rel, model.to_dict())
            index["manufacturer"][m] = rel
        for m, parts in sorted(self.part_models.items()):
            index["part"][m] = {}
            for p, model in sorted(parts.items()):
                rel = f"part/{_safe(m)}/{_safe(p)}.json"
                write_json(root / rel, model.to_dict())
                index["part"][m][p] = rel
        for m, env in sorted(self.envelopes.items()):
            rel = f"envelope/{_safe(m)}.json"
            write_json(root / rel, env.to_dict())
            index["envelope"][m] = rel
        write_json(root / "registry.json", index)

    @classmethod
    def load(cls, root) -> "Registry":
        root = Path(root)
        path = root / "registry.json"
        if not path.is_file():
            raise FileNotFoundError(f"no model registry at {path}")
        idx = read_json(path)
        mm = {m: EnsembleModel.from_dict(read_json(root / rel)) for m, rel in idx["manufacturer"].items()}
        pm = {m: {p: EnsembleModel.from_dict(read_json(root / rel)) for p, rel in parts.items()}
              for m, parts in idx["part"].items()}
        env = {m: OneClassEnvelope.from_dict(read_json(root / rel)) for m, rel in idx["envelope"].items()}
        return cls(mm, pm, env, idx["schema_id"], idx["segments"], idx.get("meta", {}))


def _dataset(rows) -> LabeledDataset:
    return LabeledDataset.from_rows((r.fv, r.manufacturer, r.part) for r in rows)


def train_registry(rows, seed: int, candidates=DEFAULT_CANDIDATES, folds: int = 10, one_class: bool = False,
                   percentile: float = 95.0, jobs: int = 1) -> Registry:
    """Manufacturer one-vs-all models plus per-manufacturer part models.

    Seeds: ``derive_seed(seed, "train", level, label...)``.
    """
    rows = list(rows)
    data = _dataset(rows)
    makers = sorted(set(data.manufacturer.tolist()))
    if len(makers) < 2:
        raise ValueError(f"training data has a single manufacturer class: {makers[0]!r}")
    for m in makers:
        parts = sorted(set(data.part[data.manufacturer == m].tolist()))
        if len(parts) < 2:
            raise ValueError(f"manufacturer {m!r} has a single part-number class: {parts[0]!r}")

    def s(*purpose):
        return int(derive_seed(seed, "train", *purpose).generate_state(1)[0])

    tasks = [("manufacturer", m, None) for m in makers]
    for m in makers:
        tasks += [("part", p, m) for p in sorted(set(data.part[data.manufacturer == m].tolist()))]

    def run(task):
        level, label, maker = task
        if level == "manufacturer":
            return select_best_model(data, label, candidates, s(level, label), level, folds)
        sub = data.subset(data.manufacturer == maker)
        return select_best_model(sub, label, candidates, s(level, maker, label), level, folds)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as ex:
            models = list(ex.map(run, tasks))
    else:
        models = [run(t) for t in tasks]

    mm, pm = {}, defaultdict(dict)
    for (level, label, maker), model in zip(tasks, models):
        if level == "manufacturer":
            mm[label] = model
        else:
            pm[maker][label] = model
    envelopes = {}
    if one_class:
        for m in makers:
            envelopes[m] = train_one_class(data.X[data.manufacturer == m], m, percentile, data.schema_id)
    k = int(data.segment_index.max()) + 1
    meta = {"seed": int(seed), "folds": folds, "candidates": [c.to_dict() for c in candidates],
            "training_digest": data.digest(), "n_rows": len(data)}
    return Registry(mm, dict(pm), envelopes, data.schema_id, max(k, 0), meta)


def classify_chips(registry: Registry, rows, strict: bool = False):
    """Two-step verdict for every (chip, condition) group of feature rows."""
    out = []
    for (chip_id, cond), group in group_by_chip(rows).items():
        vectors = [r.fv for r in group]
        for fv in vectors:
            registry.check_schema(fv.schema_id)
        mv, pv = two_step_identify(registry.manufacturer_models, registry.part_models, vectors,
                                   registry.envelopes, strict)
        rec = {"chip_id": chip_id, "condition": cond, "manufacturer": group[0].manufacturer,
               "part": group[0].part, "pred_manufacturer": mv.predicted_label,
               "pred_part_two_step": None if pv is None else pv.predicted_label,
               "manufacturer_verdict": mv.to_dict(), "part_verdict": None if pv is None else pv.to_dict()}
        true_m = group[0].manufacturer
        if true_m in registry.part_models:
            rec["pred_part"] = predict_segments(registry.part_models[true_m], vectors).predicted_label
        out.append(rec)
    return out


def report_from_verdicts(verdicts) -> dict:
    by_cond = defaultdict(list)
    for v in verdicts:
        by_cond[v["condition"]].append(v)
    return experiment_report(dict(by_cond))
