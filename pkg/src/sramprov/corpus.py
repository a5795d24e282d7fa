"""On-disk corpora of simulated start-up dumps.

Layout under the corpus root::

    manifest.json
    dumps/<chip_id>/<condition tag>/read_<rr>.srmd   (+ .srmd.json sidecar)

The manifest records the generating archetypes and root seed, so every chip
can be re-instantiated exactly (the aging workflow relies on this).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .core import CaptureCondition, DumpFormatError, ReadSet, load_dump, store_dump, unify_reads
from .io import derive_seed, read_json, write_json
from .sim import AgingModel, ClassArchetype, UsageProfile, age_chip, instantiate_chip, read_set

__all__ = ["CorpusChip", "Corpus", "generate_population", "chip_seed"]

log = logging.getLogger(__name__)

FORMAT = "sramprov-corpus/1"


def chip_seed(root: int, arch: ClassArchetype, index: int):
    return derive_seed(root, "chip", arch.manufacturer, arch.part, index)


def chip_name(arch: ClassArchetype, index: int) -> str:
    return f"{arch.part}-{index:02d}"


@dataclass(frozen=True)
class CorpusChip:
    chip_id: str
    manufacturer: str
    part: str
    split: str
    archetype_index: int
    chip_index: int
    dumps: dict  # condition tag -> list of relative dump paths


def _split_of(index, split):
    if split is None:
        return "all"
    n_train, _ = split
    return "train" if index < n_train else "test"


def generate_population(archetypes, chips_per_class: int, reads_per_chip: int, conditions, seed: int, out,
                        split: tuple | None = None, aging: dict | None = None) -> "Corpus":
    """Simulate and write a corpus; returns the loaded :class:`Corpus`.

    ``split=(n_train, n_test)`` labels the first ``n_train`` chips of each
    class ``train`` and the rest ``test``; it must add up to ``chips_per_class``.
    ``aging`` (a dict with ``usage``, ``model`` and ``seed``) ages each chip
    before reading it.
    """
    archetypes = list(archetypes)
    if not archetypes:
        raise ValueError("need at least one archetype")
    ids = [a.class_id for a in archetypes]
    if len(set(a.part for a in archetypes)) != len(ids):
        raise ValueError("part tags must be unique within a suite")
    if split is not None and sum(split) != chips_per_class:
        raise ValueError(f"split {split} does not add up to {chips_per_class} chips per class")
    if chips_per_class < 1 or reads_per_chip < 1:
        raise ValueError("need at least one chip and one read")
    conditions = [c if isinstance(c, CaptureCondition) else CaptureCondition.from_tag(c) for c in conditions]
    if len({c.tag for c in conditions}) != len(conditions):
        raise ValueError("duplicate capture conditions")

    out = Path(out)
    chips = []
    for ai, arch in enumerate(archetypes):
        for ci in range(chips_per_class):
            name = chip_name(arch, ci)
            chip = instantiate_chip(arch, chip_seed(seed, arch, ci), name)
            if aging is not None:
                chip = age_chip(chip, aging["usage"], derive_seed(aging["seed"], "age", name), aging["model"])
            dumps = {}
            for cond in conditions:
                rs = read_set(chip, cond, reads_per_chip, seed)
                rel = []
                for d in rs.reads:
                    p = Path("dumps") / name / cond.tag / f"read_{d.read_index:02d}.srmd"
                    store_dump(d, out / p, {"manufacturer": arch.manufacturer, "part": arch.part})
                    rel.append(p.as_posix())
                dumps[cond.tag] = rel
            chips.append({"chip_id": name, "manufacturer": arch.manufacturer, "part": arch.part,
                          "split": _split_of(ci, split), "archetype_index": ai, "chip_index": ci,
                          "dumps": dumps})
    manifest = {
        "format": FORMAT,
        "seed": int(seed),
        "reads_per_chip": reads_per_chip,
        "chips_per_class": chips_per_class,
        "split": list(split) if split else None,
        "conditions": [c.to_dict() | {"tag": c.tag} for c in conditions],
        "classes": [{"manufacturer": m, "part": p} for m, p in ids],
        "archetypes": [a.to_dict() for a in archetypes],
        "aging": None if aging is None else {
            "seed": int(aging["seed"]),
            "usage": _usage_dict(aging["usage"]),
            "model": {"kappa": aging["model"].kappa, "drift": aging["model"].drift},
        },
        "chips": chips,
    }
    write_json(out / "manifest.json", manifest)
    return Corpus(out)


def _usage_dict(u: UsageProfile) -> dict:
    import numpy as np

    duty = np.asarray(u.duty_ones)
    return {"duty_ones": float(duty) if duty.ndim == 0 else "field", "stress_hours": u.stress_hours,
            "stress_temp_c": u.stress_temp_c, "stress_volt": u.stress_volt, "pattern": u.pattern,
            "n_writes": u.n_writes}


class Corpus:
    def __init__(self, root):
        self.root = Path(root)
        path = self.root / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"no corpus manifest at {path}")
        self.manifest = read_json(path)
        if self.manifest.get("format") != FORMAT:
            raise DumpFormatError(f"{path}: unsupported corpus format {self.manifest.get('format')!r}")
        self.archetypes = [ClassArchetype.from_dict(d) for d in self.manifest["archetypes"]]
        self.chips = [CorpusChip(**c) for c in self.manifest["chips"]]

    @property
    def seed(self) -> int:
        return self.manifest["seed"]

    @property
    def condition_tags(self) -> list[str]:
        return [c["tag"] for c in self.manifest["conditions"]]

    def select(self, split: str | None = None) -> list[CorpusChip]:
        if split in (None, "all"):
            return list(self.chips)
        return [c for c in self.chips if c.split == split]

    def read_set(self, chip: CorpusChip, condition: str) -> ReadSet:
        try:
            rel = chip.dumps[condition]
        except KeyError:
            raise KeyError(f"chip {chip.chip_id} has no reads at condition {condition!r}") from None
        reads = tuple(load_dump(self.root / p) for p in rel)
        return ReadSet(reads, chip.chip_id, reads[0].condition)

    def signature(self, chip: CorpusChip, condition: str, band=None):
        return unify_reads(self.read_set(chip, condition), band)

    def sim_chip(self, chip: CorpusChip):
        """Re-instantiate the simulated chip behind ``chip`` (fresh, before any aging)."""
        arch = self.archetypes[chip.archetype_index]
        return instantiate_chip(arch, chip_seed(self.seed, arch, chip.chip_index), chip.chip_id)


def age_corpus(src: Corpus, out, usage: UsageProfile, seed: int, model: AgingModel = AgingModel()) -> Corpus:
    """Write an aged copy of ``src``: same chips, seeds and conditions, aged mismatch."""
    m = src.manifest
    conds = [CaptureCondition.from_dict(c) for c in m["conditions"]]
    split = tuple(m["split"]) if m["split"] else None
    return generate_population(src.archetypes, m["chips_per_class"], m["reads_per_chip"], conds, src.seed, out,
                               split, {"usage": usage, "model": model, "seed": seed})
