"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line (shown in the pytest terminal
summary) before asserting, so a failing criterion still reports its numbers.
The 23-class experiment runs through the command-line tool exactly as a user
would, twice, and the second run doubles as the determinism check.
"""

import time

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from properties import PROPERTIES
from sramprov.audit import ConfusionCounts, mean_defined, scores
from sramprov.cli import main
from sramprov.core import UnifiedSignature
from sramprov.experiment import aging_study, part_step_scores, population_features
from sramprov.features import (DEFAULT_CONCAT_SUBSET, FeatureParams, phi1_cell_bias, phi2_bitplane_spread,
                               phi3_word_spread, phi5_block_spread, phi6_noisy_fraction, phi7_histogram_spread)
from sramprov.io import file_digest, read_json, tree_digest
from sramprov.sim import default_suite

SEED = 20261016
NOMINAL_TAG, HOT_TAG = "t25v3.3", "t45v3.3"
NEAR_DUPLICATES = ("IDT2", "IDT5", "AMI1", "AMI2")


def record(name, ok, detail, elapsed, budget):
    ok = ok and elapsed <= budget
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{elapsed:.1f}s, limit {budget:g}s]")
    return ok


# -- paper-anchored unit check ------------------------------------------------

TOY = np.array([
    [1, 0, 1, 0, 1, 0, 1, 0],
    [0, 1, 0, 1, 0, 1, 0, 1],
    [1, 1, 0, 0, 1, 1, 0, 0],
    [0, 0, 1, 1, 0, 0, 1, 1],
])


def test_toy_matrix():
    t = time.perf_counter()
    v = phi1_cell_bias(TOY)
    assert record("toy matrix Phi1", v == 0.5, f"Phi1 = {v!r} (16 ones of 32)", time.perf_counter() - t, 1)


# -- feature invariants ---------------------------------------------------------

def test_feature_property_suite():
    t = time.perf_counter()
    failures = {}
    for name, check in PROPERTIES.items():
        for seed in range(1000):
            try:
                check(seed)
            except AssertionError:
                failures.setdefault(name, []).append(seed)
    detail = f"{len(PROPERTIES)} invariants x 1000 seeds, failing: {failures or 'none'}"
    assert record("feature property suite", not failures, detail, time.perf_counter() - t, 60)


def test_oracle_equivalence():
    t = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(100):
        n_w = int(rng.choice([64, 128, 256, 512, 1024, 2048, 4096]))
        counts = rng.integers(0, 21, (n_w, 16)) * (rng.random((n_w, 16)) < rng.uniform(0.05, 0.95))
        counts = np.where(rng.random((n_w, 16)) < rng.uniform(0, 1), 20 - counts, counts)
        sig = UnifiedSignature.from_counts(counts, 20)
        D = sig.bits
        bw = int(rng.integers(1, 600))
        pairs = [(phi1_cell_bias(D), oracles.phi1(D)), (phi2_bitplane_spread(D), oracles.phi2(D)),
                 (phi3_word_spread(D), oracles.phi3(D)),
                 (phi5_block_spread(D, FeatureParams(block_words=bw)), oracles.phi5(D, bw)),
                 (phi6_noisy_fraction(sig), oracles.phi6(counts, 8, 12)),
                 (phi7_histogram_spread(D), oracles.phi7(D))]
        worst = max(worst, *(abs(a - b) for a, b in pairs))
    assert record("oracle equivalence", worst <= 1e-12, f"max |diff| = {worst:.2e} over 100 signatures",
                  time.perf_counter() - t, 60)


# -- the 23-class experiment, through the CLI --------------------------------

def run(*argv):
    return main([str(a) for a in argv])


def pipeline(root):
    """suite -> simulate -> extract -> train -> report; returns the output dirs."""
    steps = [
        ("suite", "--out", root / "suite"),
        ("simulate", "--suite", root / "suite" / "suite.json", "--seed", SEED, "--chips", 15, "--split", "10:5",
         "--conditions", f"{NOMINAL_TAG},{HOT_TAG}", "--out", root / "corpus"),
        ("extract", "--corpus", root / "corpus", "--split", "train", "--conditions", NOMINAL_TAG,
         "--block-words", 16, "--out", root / "train_feats"),
        ("extract", "--corpus", root / "corpus", "--split", "test", "--block-words", 16, "--out", root / "test_feats"),
        ("train", "--features", root / "train_feats" / "features.csv", "--seed", SEED, "--one-class",
         "--out", root / "models"),
        ("report", "--models", root / "models", "--features", root / "test_feats" / "features.csv",
         "--out", root / "report"),
    ]
    for argv in steps:
        assert run(*argv) == 0, argv[0]
    return root


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    t = time.perf_counter()
    root = pipeline(tmp_path_factory.mktemp("run1"))
    return root, time.perf_counter() - t


def part_f1(entry):
    """(mean over defined entries, mean counting undefined as 0, per-part F1)."""
    per = {p: s["target_F1"] for m in entry["part"]["per_manufacturer"].values() for p, s in m["per_class"].items()}
    strict = sum(v or 0.0 for v in per.values()) / len(per)
    return mean_defined(list(per.values()))[0], strict, per


@pytest.mark.slow
def test_synthetic_identification(experiment):
    root, elapsed = experiment
    entry = read_json(root / "report" / "report.json")["conditions"][NOMINAL_TAG]
    m_f1 = entry["manufacturer"]["mu_V"]["scores"]["target_F1"]
    p_f1, p_strict, per = part_f1(entry)
    low = sorted(p for p, v in per.items() if v is None or v < 0.7)
    ok = m_f1 >= 0.90 and p_f1 >= 0.70 and p_strict >= 0.70
    detail = (f"manufacturer F1 {m_f1:.3f} (>= 0.90), part F1 {p_f1:.3f} / undefined-as-0 {p_strict:.3f} "
              f"(>= 0.70), {len(per)} parts, low or undefined: {','.join(low)}")
    assert record("23-class identification", ok, detail, elapsed, 600)


@pytest.mark.slow
def test_temperature_robustness(experiment):
    root, _ = experiment
    t = time.perf_counter()
    conds = read_json(root / "report" / "report.json")["conditions"]
    nom, hot = conds[NOMINAL_TAG], conds[HOT_TAG]
    dm = nom["manufacturer"]["mu_V"]["scores"]["target_F1"] - hot["manufacturer"]["mu_V"]["scores"]["target_F1"]
    (pn, pn_strict, _), (ph, ph_strict, _) = part_f1(nom), part_f1(hot)
    dp, dp_strict = pn - ph, pn_strict - ph_strict
    ok = dm <= 0.03 and dp <= 0.10 and dp_strict <= 0.10
    detail = f"+20 C drop: manufacturer {dm:+.3f} (<= 0.03), part {dp:+.3f} / undefined-as-0 {dp_strict:+.3f} (<= 0.10)"
    # the hot condition is scored in the same report run; its cost is included in the experiment time
    assert record("temperature robustness", ok, detail, time.perf_counter() - t, 300)


@pytest.mark.slow
def test_determinism(experiment, tmp_path_factory):
    first, _ = experiment
    t = time.perf_counter()
    second = pipeline(tmp_path_factory.mktemp("run2"))
    digests = {
        "train features": lambda r: file_digest(r / "train_feats" / "features.csv"),
        "test features": lambda r: file_digest(r / "test_feats" / "features.csv"),
        "registry": lambda r: tree_digest(r / "models", exclude=("run_config.json",)),
        "report": lambda r: file_digest(r / "report" / "report.json"),
        "verdicts": lambda r: file_digest(r / "report" / "verdicts.json"),
    }
    differ = [k for k, f in digests.items() if f(first) != f(second)]
    assert record("determinism", not differ, f"digests compared: {', '.join(digests)}; differing: {differ or 'none'}",
                  time.perf_counter() - t, 600)


# -- multi-voltage concatenation -------------------------------------------------

@pytest.mark.slow
def test_multi_voltage_improves_near_duplicates():
    t = time.perf_counter()
    subset = [a for a in default_suite() if a.part in NEAR_DUPLICATES]
    params = FeatureParams(block_words=16)
    conds = ["t25v3.0", "t25v3.3", "t25v3.6"]
    single = part_step_scores(population_features(subset, range(10), [NOMINAL_TAG], SEED, params=params),
                              population_features(subset, range(10, 15), [NOMINAL_TAG], SEED, params=params), SEED)
    concat = part_step_scores(
        population_features(subset, range(10), conds, SEED, params=params, concat_subset=DEFAULT_CONCAT_SUBSET),
        population_features(subset, range(10, 15), conds, SEED, params=params, concat_subset=DEFAULT_CONCAT_SUBSET),
        SEED)

    def strict(f1):
        return sum(f1[p] or 0.0 for p in NEAR_DUPLICATES) / len(NEAR_DUPLICATES)

    ok = concat["mean"] > single["mean"] and strict(concat) > strict(single)
    detail = (f"part F1 single {single['mean']:.3f} -> concatenated {concat['mean']:.3f}; "
              f"undefined-as-0 {strict(single):.3f} -> {strict(concat):.3f}")
    assert record("multi-voltage concatenation", ok, detail, time.perf_counter() - t, 300)


# -- aging and recycled-chip screening -----------------------------------------

@pytest.mark.slow
def test_aging_recycled_suite():
    t = time.perf_counter()
    study = aging_study(default_suite(), SEED)  # 1 h at 80 C, 3.6 V, random pattern
    not_down = sorted(p for p, d in study.phi6_decreased.items() if not d)
    n_aged = len(study.aged_flagged)
    ok = n_aged >= 20 and not not_down and study.aged_rate >= 0.80 and study.control_rate <= 0.05
    detail = (f"{n_aged} aged chips, Phi6 mean down for {len(study.phi6_decreased) - len(not_down)}/"
              f"{len(study.phi6_decreased)} classes, flagged aged {study.aged_rate:.1%} (>= 80%), "
              f"controls {study.control_rate:.1%} (<= 5%)")
    assert record("aging / recycled screening", ok, detail, time.perf_counter() - t, 180)


# -- scoring arithmetic -----------------------------------------------------------

def test_scoring_fixture():
    t = time.perf_counter()
    s = scores(ConfusionCounts(tp=3, tn=10, fp=1, fn=2))
    ok = (s.P, s.R, s.F1, s.A) == (0.75, 0.6, 2 / 3, 13 / 16)
    detail = f"P={s.P!r} R={s.R!r} F1={s.F1!r} A={s.A!r}"
    assert record("scoring arithmetic", ok, detail, time.perf_counter() - t, 1)
