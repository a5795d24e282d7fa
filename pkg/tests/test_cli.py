import csv
import os
import shutil
import subprocess
import sys

import pytest

from sramprov.cli import main
from sramprov.io import dump_json, file_digest, read_json
from sramprov.io import tree_digest
from sramprov.pipeline import read_feature_csv, report_from_verdicts
from sramprov.sim import default_suite, save_suite

PARTS = ("CY1", "CY4", "IDT1", "IDT3", "ISSI1", "ISSI4")
TRAIN = ["--folds", "3", "--n-bags", "5", "--candidates", "decision-tree,naive-bayes"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Small corpus -> features -> registry, built once through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    save_suite([a for a in default_suite(256, 16) if a.part in PARTS], d / "suite.json")
    assert run("simulate", "--suite", d / "suite.json", "--chips", 6, "--split", "4:2", "--reads", 20,
               "--conditions", "v3.0,v3.3,v3.6", "--seed", 11, "--out", d / "corpus") == 0
    assert run("extract", "--corpus", d / "corpus", "--split", "train", "--conditions", "v3.3", "--segments", 4,
               "--block-words", 16, "--out", d / "train_feats") == 0
    assert run("extract", "--corpus", d / "corpus", "--split", "test", "--conditions", "v3.3", "--segments", 4,
               "--block-words", 16, "--out", d / "test_feats") == 0
    assert run("train", "--features", d / "train_feats" / "features.csv", "--seed", 3, *TRAIN, "--one-class",
               "--out", d / "models") == 0
    return d


def test_suite_export(tmp_path):
    assert run("suite", "--out", tmp_path / "s") == 0
    doc = read_json(tmp_path / "s" / "suite.json")
    assert len(doc["archetypes"]) == 23


def test_simulate_layout(work):
    m = read_json(work / "corpus" / "manifest.json")
    assert len(m["classes"]) == 6 and m["split"] == [4, 2]
    assert len(list((work / "corpus" / "dumps").rglob("*.srmd"))) == 6 * 6 * 3 * 20
    assert read_json(work / "corpus" / "run_config.json")["command"] == "simulate"


def test_simulate_missing_suite_leaves_nothing(tmp_path, capsys):
    assert run("simulate", "--suite", tmp_path / "nope.json", "--seed", 1, "--out", tmp_path / "c") == 3
    assert "suite file not found" in capsys.readouterr().err
    assert list(tmp_path.iterdir()) == []


def test_simulate_idempotent(work, tmp_path):
    args = ["simulate", "--suite", work / "suite.json", "--chips", 2, "--split", "none", "--reads", 3,
            "--seed", 5, "--out", tmp_path / "c"]
    assert run(*args) == 0
    first = tree_digest(tmp_path / "c")
    assert run(*args, "--overwrite") == 0
    assert tree_digest(tmp_path / "c") == first


@pytest.mark.parametrize("argv,needle", [
    (["simulate", "--suite", "x.json", "--out", "o"], "--seed"),
    (["simulate", "--suite", "SUITE", "--seed", 1, "--chips", 5, "--out", "o"], "add up"),
    (["simulate", "--suite", "SUITE", "--seed", -1, "--out", "o"], "64-bit"),
    (["extract", "--corpus", "CORPUS", "--conditions", "t85v3.3", "--out", "o"], "not in corpus"),
    (["extract", "--corpus", "CORPUS", "--conditions", "v3.3", "--concat", "--out", "o"], "two conditions"),
])
def test_usage_errors_exit_2(work, tmp_path, capsys, argv, needle):
    argv = [str(work / "suite.json") if a == "SUITE" else str(work / "corpus") if a == "CORPUS" else a
            for a in argv]
    argv = [str(tmp_path / "o") if a == "o" else a for a in argv]
    assert run(*argv) == 2
    assert needle in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_nonempty_out_refused(work, tmp_path):
    (tmp_path / "o").mkdir()
    (tmp_path / "o" / "keep.txt").write_text("x")
    assert run("suite", "--out", tmp_path / "o") == 2
    assert (tmp_path / "o" / "keep.txt").read_text() == "x"


def test_extract_cardinality_and_summary(work):
    n_train = 6 * 4
    assert len(read_feature_csv(work / "train_feats" / "features.csv")) == n_train * 4
    s = read_json(work / "train_feats" / "summary.json")
    assert s["rows"] == n_train * 4 and s["chips"] == n_train and s["skipped"] == 0


def test_extract_concat_twelve_features(work, tmp_path):
    assert run("extract", "--corpus", work / "corpus", "--conditions", "v3.0,v3.3,v3.6", "--subset",
               "phi1,phi4,phi6,phi7", "--concat", "--segments", 4, "--out", tmp_path / "x") == 0
    with open(tmp_path / "x" / "features.csv") as f:
        header = next(csv.reader(f))
    assert header == ["chip_id", "segment", "condition", "schema_id"] + [f"phi{i}" for i in range(1, 13)] + \
        ["label_manufacturer", "label_part"]


def test_extract_skips_corrupted_dump(work, tmp_path, capsys):
    shutil.copytree(work / "corpus", tmp_path / "c")
    victim = sorted((tmp_path / "c" / "dumps").glob("*/t25v3.3/read_03.srmd"))[0]
    victim.write_bytes(victim.read_bytes()[:-3])
    assert run("extract", "--corpus", tmp_path / "c", "--conditions", "v3.3", "--segments", 4,
               "--out", tmp_path / "x") == 0
    s = read_json(tmp_path / "x" / "summary.json")
    assert s["skipped"] == 1 and s["skipped_items"][0]["chip_id"] == victim.parent.parent.name
    assert s["rows"] == (36 - 1) * 4
    assert "skipped 1" in capsys.readouterr().err


def test_train_registry_layout(work):
    reg = read_json(work / "models" / "registry.json")
    assert sorted(reg["manufacturer"]) == ["CY", "IDT", "ISSI"]
    assert sorted(reg["part"]["IDT"]) == ["IDT1", "IDT3"]
    model = read_json(work / "models" / reg["manufacturer"]["CY"])
    for key in ("schema_id", "base_kind", "seed", "bags", "calibration", "cv_score", "training_digest"):
        assert key in model


def test_train_rerun_same_digest(work, tmp_path):
    assert run("train", "--features", work / "train_feats" / "features.csv", "--seed", 3, *TRAIN, "--one-class",
               "--out", tmp_path / "m") == 0
    assert tree_digest(tmp_path / "m", exclude=("run_config.json",)) == \
        tree_digest(work / "models", exclude=("run_config.json",))


def test_train_single_class_names_it(work, tmp_path, capsys):
    src = (work / "train_feats" / "features.csv").read_text().splitlines()
    keep = [src[0]] + [l for l in src[1:] if l.endswith(",CY,CY1") or l.endswith(",CY,CY4")]
    (tmp_path / "f.csv").write_text("\n".join(keep) + "\n")
    assert run("train", "--features", tmp_path / "f.csv", "--seed", 1, *TRAIN, "--out", tmp_path / "m") == 3
    assert "'CY'" in capsys.readouterr().err
    assert not (tmp_path / "m").exists()


def test_classify_features_only_equals_raw(work, tmp_path):
    assert run("classify", "--models", work / "models", "--corpus", work / "corpus", "--split", "test", "--conditions", "v3.3",
               "--out", tmp_path / "raw") == 0
    assert run("classify", "--models", work / "models", "--features", work / "test_feats" / "features.csv",
               "--features-only", "--out", tmp_path / "fo") == 0
    assert file_digest(tmp_path / "raw" / "verdicts.json") == file_digest(tmp_path / "fo" / "verdicts.json")
    chips = read_json(tmp_path / "raw" / "verdicts.json")["chips"]
    assert len(chips) == 12
    v = chips[0]["manufacturer_verdict"]
    assert sum(v["segment_votes"].values()) == 4 and len(v["cumulative_posterior"]) == 3
    assert "tie_broken" in v


def test_classify_strict(work, tmp_path):
    assert run("classify", "--models", work / "models", "--corpus", work / "corpus", "--strict",
               "--out", tmp_path / "s") == 0
    assert read_json(tmp_path / "s" / "verdicts.json")["strict"] is True


def test_schema_mismatch_exit_4(work, tmp_path, capsys):
    assert run("extract", "--corpus", work / "corpus", "--split", "test", "--conditions", "v3.3", "--segments", 4,
               "--subset", "phi1,phi2,phi3", "--block-words", 16, "--out", tmp_path / "f") == 0
    assert run("classify", "--models", work / "models", "--features", tmp_path / "f" / "features.csv",
               "--out", tmp_path / "o") == 4
    err = capsys.readouterr().err
    assert "schema mismatch" in err and "-phi4" in err
    assert not (tmp_path / "o").exists()


def test_missing_registry_exit_3(work, tmp_path):
    assert run("classify", "--models", tmp_path / "none", "--corpus", work / "corpus", "--out", tmp_path / "o") == 3


def test_report_matches_direct_audit(work, tmp_path):
    assert run("report", "--models", work / "models", "--corpus", work / "corpus", "--out", tmp_path / "r") == 0
    report = read_json(tmp_path / "r" / "report.json")
    verdicts = read_json(tmp_path / "r" / "verdicts.json")["chips"]
    direct = report_from_verdicts(verdicts)
    direct["schema_id"] = report["schema_id"]
    assert dump_json(direct) == dump_json(report)
    entry = report["conditions"]["t25v3.3"]
    assert "mu_V" in entry["manufacturer"] and "mu_M" in entry["part"]["per_manufacturer"]["CY"]
    text = (tmp_path / "r" / "report.txt").read_text()
    assert "mu_V" in text and "mu_M" in text


def test_report_embedding_csv(work, tmp_path):
    assert run("report", "--models", work / "models", "--features", work / "test_feats" / "features.csv",
               "--embed", "--dims", 2, "--embed-fit", work / "train_feats" / "features.csv", "--seed", 4,
               "--out", tmp_path / "r") == 0
    with open(tmp_path / "r" / "embedding.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["chip_id", "segment", "label", "dim1", "dim2"]
    assert len(rows) == 1 + 12 * 4
    assert all(len(r) == 5 and float(r[3]) == float(r[3]) for r in rows[1:])
    gamma = read_json(tmp_path / "r" / "report.json")["embedding"]["gamma"]
    assert gamma > 0
    # too many dims for three manufacturers
    assert run("report", "--models", work / "models", "--features", work / "test_feats" / "features.csv",
               "--embed", "--dims", 3, "--gamma", 1, "--out", tmp_path / "r3") == 3


def test_config_replay(work, tmp_path):
    assert run("extract", "--corpus", work / "corpus", "--split", "test", "--segments", 2, "--block-words", 8,
               "--out", tmp_path / "a") == 0
    assert run("extract", "--config", tmp_path / "a" / "run_config.json", "--out", tmp_path / "b") == 0
    assert file_digest(tmp_path / "a" / "features.csv") == file_digest(tmp_path / "b" / "features.csv")
    # an explicit flag beats the replayed value
    assert run("extract", "--config", tmp_path / "a" / "run_config.json", "--segments", 1,
               "--out", tmp_path / "c") == 0
    assert read_json(tmp_path / "c" / "summary.json")["rows"] == read_json(tmp_path / "a" / "summary.json")["rows"] // 2


def test_config_for_other_command(work, tmp_path):
    assert run("train", "--config", work / "corpus" / "run_config.json", "--out", tmp_path / "x") == 2


def test_env_out_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("SRAMPROV_OUT_DIR", str(tmp_path / "env"))
    assert run("suite", "--n-words", 8) == 0
    assert (tmp_path / "env" / "suite.json").is_file()
    monkeypatch.delenv("SRAMPROV_OUT_DIR")
    assert run("suite") == 2


def test_age_outputs_and_zero_hours(work, tmp_path):
    assert run("age", "--corpus", work / "corpus", "--hours", 0, "--seed", 2, "--out", tmp_path / "z") == 0
    assert tree_digest(tmp_path / "z" / "dumps") == tree_digest(work / "corpus" / "dumps")
    with open(tmp_path / "z" / "feature_deltas.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 36 * 3 * 7
    assert all(float(r["delta"]) == 0 for r in rows)

    assert run("age", "--corpus", work / "corpus", "--seed", 2, "--out", tmp_path / "a") == 0
    with open(tmp_path / "a" / "feature_deltas.csv") as f:
        rows = list(csv.DictReader(f))
    assert set(rows[0]) == {"chip_id", "condition", "label_manufacturer", "label_part", "feature", "before",
                            "after", "delta"}
    phi6 = [float(r["delta"]) for r in rows if r["feature"] == "phi6"]
    # 256-word chips hold few noisy cells, so single deltas are noisy; the drop shows in aggregate
    assert sum(phi6) < 0 and sum(d < 0 for d in phi6) > 0.5 * len(phi6)
    assert read_json(tmp_path / "a" / "manifest.json")["aging"]["usage"]["stress_hours"] == 1.0


@pytest.fixture(scope="module")
def recycle_corpora(tmp_path_factory):
    d = tmp_path_factory.mktemp("recycle")
    save_suite([a for a in default_suite(4096, 16) if a.part in ("CY3", "ISSI2")], d / "suite.json")
    assert run("simulate", "--suite", d / "suite.json", "--chips", 25, "--split", "20:5", "--reads", 20,
               "--seed", 8, "--out", d / "fresh") == 0
    assert run("age", "--corpus", d / "fresh", "--seed", 9, "--out", d / "aged") == 0
    return d


@pytest.mark.slow
def test_recycle_check_flag_rates(recycle_corpora, tmp_path):
    d = recycle_corpora
    assert run("recycle-check", "--reference", d / "fresh", "--reference-split", "train", "--corpus", d / "aged",
               "--split", "test", "--out", tmp_path / "aged") == 0
    assert run("recycle-check", "--reference", d / "fresh", "--reference-split", "train", "--corpus", d / "fresh",
               "--split", "test", "--out", tmp_path / "fresh") == 0
    aged = read_json(tmp_path / "aged" / "recycle.json")["summary"]
    fresh = read_json(tmp_path / "fresh" / "recycle.json")["summary"]
    assert aged["chips"] == 10 and aged["flag_rate"] >= 0.8
    assert aged["flag_rate"] - fresh["flag_rate"] >= 0.5


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("sramprov")
    cmd = [exe] if exe else [sys.executable, "-m", "sramprov.cli"]
    r = subprocess.run(cmd + ["suite", "--n-words", "8", "--out", str(tmp_path / "s")], capture_output=True,
                       text=True, env=dict(os.environ))
    assert r.returncode == 0, r.stderr
    r = subprocess.run(cmd + ["bogus"], capture_output=True, text=True)
    assert r.returncode == 2
