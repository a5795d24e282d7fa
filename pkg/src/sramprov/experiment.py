"""In-memory studies on simulated populations.

The functions here draw exactly the signatures an on-disk corpus with the
same root seed would hold (same chip and read seeds), but skip the dump
files.  They back the demos and the multi-condition and aging studies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audit import FreshReference, RecyclePolicy, dual_role_scores, mean_defined, recycled_check
from .classify import DEFAULT_CANDIDATES, LabeledDataset, predict_segments, select_best_model
from .core import NOMINAL, CaptureCondition
from .corpus import chip_name, chip_seed
from .features import FeatureParams, concat_conditions, extract_features
from .io import derive_seed
from .pipeline import LabeledRow, chip_features
from .sim import AgingModel, UsageProfile, age_chip, instantiate_chip, sample_signature

__all__ = [
    "population_features",
    "part_step_scores",
    "AgingStudy",
    "aging_study",
]


def _cond(c):
    return c if isinstance(c, CaptureCondition) else CaptureCondition.from_tag(c)


def population_features(archetypes, chip_indices, conditions, seed: int, k: int = 16,
                        params: FeatureParams = FeatureParams(), n_reads: int = 20, concat_subset=None):
    """Per-segment feature rows for chips ``chip_indices`` of every archetype.

    With ``concat_subset`` the conditions are concatenated into one row per
    segment; otherwise there is one row per (segment, condition).
    """
    conditions = [_cond(c) for c in conditions]
    rows = []
    for arch in archetypes:
        for ci in chip_indices:
            chip = instantiate_chip(arch, chip_seed(seed, arch, ci), chip_name(arch, ci))
            per = [chip_features(sample_signature(chip, c, n_reads, seed), k, params) for c in conditions]
            if concat_subset is not None:
                for segs in zip(*per):
                    rows.append(LabeledRow(concat_conditions(segs, concat_subset), arch.manufacturer, arch.part))
            else:
                rows += [LabeledRow(fv, arch.manufacturer, arch.part) for fvs in per for fv in fvs]
    return rows


def _dataset(rows):
    return LabeledDataset.from_rows((r.fv, r.manufacturer, r.part) for r in rows)


def part_step_scores(train_rows, test_rows, seed: int, candidates=DEFAULT_CANDIDATES, folds: int = 5) -> dict:
    """Train part models per manufacturer and score held-out chips by segment vote.

    Returns ``{part: target-role F1}`` plus the mean under key ``"mean"``.
    """
    train = _dataset(train_rows)
    f1 = {}
    for m in sorted(set(train.manufacturer.tolist())):
        sub = train.subset(train.manufacturer == m)
        parts = sorted(set(sub.part.tolist()))
        models = {p: select_best_model(sub, p, candidates,
                                       int(derive_seed(seed, "train", "part", m, p).generate_state(1)[0]),
                                       "part", folds)
                  for p in parts}
        chips = {}
        for r in test_rows:
            if r.manufacturer == m:
                chips.setdefault(r.fv.chip_id, (r.part, []))[1].append(r.fv)
        truth = [t for t, _ in chips.values()]
        pred = [predict_segments(models, vs).predicted_label for _, vs in chips.values()]
        for p in parts:
            f1[p] = dual_role_scores(pred, truth, p)[0].F1
    f1["mean"] = mean_defined(list(f1.values()))[0]
    return f1


@dataclass
class AgingStudy:
    phi6_before: dict       # part -> mean Phi6 of the aged chips before stress
    phi6_after: dict
    aged_flagged: list      # one bool per aged chip
    control_flagged: list   # one bool per fresh control chip
    aged_phi6_flagged: list
    control_phi6_flagged: list

    @property
    def aged_rate(self):
        return float(np.mean(self.aged_flagged))

    @property
    def control_rate(self):
        return float(np.mean(self.control_flagged))

    @property
    def phi6_decreased(self) -> dict:
        return {p: self.phi6_after[p] < self.phi6_before[p] for p in self.phi6_before}


def aging_study(archetypes, seed: int, usage: UsageProfile = UsageProfile(), n_ref: int = 20, n_control: int = 5,
                n_aged: int = 2, model: AgingModel = AgingModel(), policy: RecyclePolicy = RecyclePolicy(),
                params: FeatureParams = FeatureParams(block_words=16), n_reads: int = 20,
                cond: CaptureCondition = NOMINAL) -> AgingStudy:
    """Enrol ``n_ref`` fresh chips per class, then screen fresh controls and aged chips.

    Chip indices: ``[0, n_ref)`` reference, then controls, then the chips that
    get aged.  Features are whole-chip.
    """
    before, after = {}, {}
    aged_f, ctl_f, aged6, ctl6 = [], [], [], []
    phi6_only = RecyclePolicy(policy.z, ("phi6_shift",))
    for arch in archetypes:
        chips = [instantiate_chip(arch, chip_seed(seed, arch, i), chip_name(arch, i))
                 for i in range(n_ref + n_control + n_aged)]
        fvs = [extract_features(sample_signature(c, cond, n_reads, seed), params) for c in chips]
        ref = FreshReference.from_vectors(arch.class_id, fvs[:n_ref])
        for fv in fvs[n_ref:n_ref + n_control]:
            ctl_f.append(recycled_check(ref, fv, policy).recycled)
            ctl6.append(recycled_check(ref, fv, phi6_only).recycled)
        aged_fvs = []
        for c in chips[n_ref + n_control:]:
            aged = age_chip(c, usage, derive_seed(seed, "age", c.chip_id), model)
            fv = extract_features(sample_signature(aged, cond, n_reads, seed), params)
            aged_fvs.append(fv)
            aged_f.append(recycled_check(ref, fv, policy).recycled)
            aged6.append(recycled_check(ref, fv, phi6_only).recycled)
        before[arch.part] = float(np.mean([fv["phi6"] for fv in fvs[n_ref + n_control:]]))
        after[arch.part] = float(np.mean([fv["phi6"] for fv in aged_fvs]))
    return AgingStudy(before, after, aged_f, ctl_f, aged6, ctl6)
