"""``sramprov`` command line: simulate, extract, train, classify, age, recycle-check, report.

Every subcommand writes into its own ``--out`` directory.  The directory is
assembled under a temporary name next to it and renamed into place at the
end, so a failed run leaves nothing behind.  Each output directory gets a
``run_config.json`` holding every flag; ``--config run_config.json`` replays it.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 model/schema error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
from collections import defaultdict
from pathlib import Path

from .audit import FreshReference, RecyclePolicy, recycled_check, render_report
from .classify import (DEFAULT_CANDIDATES, EnsembleConfig, RegistryError, SchemaMismatchError, gda_embed,
                       tune_gamma)
from .core import CaptureCondition, DumpFormatError, NoisyBand
from .corpus import Corpus, age_corpus, generate_population
from .features import PHI_NAMES, FeatureParams
from .io import atomic_write_text, dump_json
from .pipeline import (Registry, chip_features, classify_chips, extract_corpus, read_feature_csv,
                       report_from_verdicts, train_registry, write_feature_csv)
from .sim import AgingModel, UsageProfile, default_suite, load_suite, save_suite

log = logging.getLogger("sramprov")

OUT_ENV = "SRAMPROV_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- argument parsing -------------------------------------------------------------


def _csv_list(s):
    return [x.strip() for x in s.split(",") if x.strip()]


def _split(s):
    if s.lower() in ("none", "all"):
        return None
    try:
        a, b = (int(x) for x in s.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"split must look like 10:5, got {s!r}") from None
    return [a, b]


def _band(s):
    try:
        lo, hi = (int(x) for x in s.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"band must look like 8-12, got {s!r}") from None
    return [lo, hi]


def _u64(s):
    v = int(s, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _add_common(p, seed=False):
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    p.add_argument("--overwrite", action="store_true", help="replace an existing non-empty output directory")
    p.add_argument("--config", help="JSON run config; explicit flags take precedence")
    p.add_argument("--jobs", type=int, default=1, help="worker thread bound")
    if seed:
        p.add_argument("--seed", type=_u64, help="root seed (u64), required")


def _add_feature_params(p):
    p.add_argument("--segments", type=int, default=16, help="segments per chip (0: whole chip)")
    p.add_argument("--block-words", type=int, default=512)
    p.add_argument("--compressor", default="zlib", choices=["zlib", "bz2", "lzma"])
    p.add_argument("--level", type=int, default=9, help="compressor level")
    p.add_argument("--band", type=_band, help="noisy band lo-hi in ones counts (default 8-12 at 20 reads)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sramprov", description="SRAM start-up provenance pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("suite", help="export the default 23-class archetype suite")
    _add_common(p)
    p.add_argument("--n-words", type=int, default=4096)
    p.add_argument("--word-length", type=int, default=16)

    p = sub.add_parser("simulate", help="simulate a corpus of start-up dumps")
    _add_common(p, seed=True)
    p.add_argument("--suite", help="archetype suite JSON")
    p.add_argument("--chips", type=int, default=15, help="chips per class")
    p.add_argument("--reads", type=int, default=20, help="reads per chip and condition")
    p.add_argument("--split", type=_split, default=[10, 5], help="train:test chips per class, or none")
    p.add_argument("--conditions", type=_csv_list, default=["t25v3.3"], help="condition tags, e.g. v3.0,v3.3")

    p = sub.add_parser("extract", help="corpus -> feature CSV")
    _add_common(p)
    p.add_argument("--corpus")
    p.add_argument("--split", default="all", help="train, test or all")
    p.add_argument("--conditions", type=_csv_list, help="default: every condition in the corpus")
    p.add_argument("--subset", type=_csv_list, help="feature subset, e.g. phi1,phi4,phi6,phi7")
    p.add_argument("--concat", action="store_true", help="concatenate conditions into one row per segment")
    _add_feature_params(p)

    p = sub.add_parser("train", help="feature CSV -> model registry")
    _add_common(p, seed=True)
    p.add_argument("--features")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--n-bags", type=int, default=50)
    p.add_argument("--candidates", type=_csv_list, default=["decision-tree", "linear-discriminant", "naive-bayes"])
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--min-leaf", type=int, default=2)
    p.add_argument("--one-class", action="store_true", help="also fit per-manufacturer one-class envelopes")
    p.add_argument("--percentile", type=float, default=95.0)

    for name, hlp in (("classify", "two-step verdict per chip"), ("report", "score tables and embeddings")):
        p = sub.add_parser(name, help=hlp)
        _add_common(p, seed=(name == "report"))
        p.add_argument("--models")
        p.add_argument("--features", help="pre-extracted feature CSV")
        p.add_argument("--features-only", action="store_true",
                       help="require --features; raw dumps are never read")
        p.add_argument("--corpus", help="extract from this corpus with the registry's feature schema")
        p.add_argument("--split", default="test")
        p.add_argument("--conditions", type=_csv_list)
        p.add_argument("--strict", action="store_true", help="one-class gate: may answer unknown-origin")
        if name == "report":
            p.add_argument("--embed", action="store_true", help="write a GDA embedding CSV")
            p.add_argument("--dims", type=int, default=2)
            p.add_argument("--embed-level", choices=["manufacturer", "part"], default="manufacturer")
            p.add_argument("--embed-fit", help="feature CSV to fit the embedding on (default: the report rows)")
            p.add_argument("--gamma", type=float, help="RBF gamma (default: tuned on a grid)")

    p = sub.add_parser("age", help="age a corpus and report feature deltas")
    _add_common(p, seed=True)
    p.add_argument("--corpus")
    p.add_argument("--hours", type=float, default=1.0)
    p.add_argument("--temp", type=float, default=80.0)
    p.add_argument("--volt", type=float, default=3.6)
    p.add_argument("--pattern", default="uniform-random", choices=["uniform-random", "constant-0", "constant-1"])
    p.add_argument("--duty", type=float, default=0.5, help="probability of writing a one")
    p.add_argument("--n-writes", type=int, default=100)
    p.add_argument("--kappa", type=float, default=AgingModel.kappa)
    p.add_argument("--drift", type=float, default=AgingModel.drift)
    _add_feature_params(p)

    p = sub.add_parser("recycle-check", help="flag chips drifted from a fresh reference")
    _add_common(p)
    p.add_argument("--reference", help="corpus of fresh chips")
    p.add_argument("--reference-split", default="all")
    p.add_argument("--corpus", help="corpus of chips under test")
    p.add_argument("--split", default="all")
    p.add_argument("--condition", help="condition tag (default: the first in the test corpus)")
    p.add_argument("--z", type=float, default=3.0)
    p.add_argument("--rules", type=_csv_list, default=["phi6_shift", "phi1_skew"])
    _add_feature_params(p)
    return ap


def parse_args(argv):
    """Parse ``argv``; with ``--config`` the file's values become defaults under explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        if cfg.get("command", args.command) != args.command:
            raise UsageError(f"config is for {cfg['command']!r}, not {args.command!r}")
        values = dict(cfg.get("args", {}))
        unknown = set(values) - set(vars(args))
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        values.pop("command", None)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# --- output handling --------------------------------------------------------------


class OutputDir:
    """Assemble output under a temporary sibling, rename into place on success."""

    def __init__(self, out, overwrite=False):
        if not out:
            out = os.environ.get(OUT_ENV)
        if not out:
            raise UsageError(f"--out is required (or set {OUT_ENV})")
        self.final = Path(out)
        if self.final.exists():
            if not self.final.is_dir():
                raise UsageError(f"output path {self.final} exists and is not a directory")
            if any(self.final.iterdir()) and not overwrite:
                raise UsageError(f"output directory {self.final} is not empty (use --overwrite)")
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = None

    def __enter__(self) -> Path:
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.final.name}.", suffix=".tmp", dir=self.final.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.final.exists():
            shutil.rmtree(self.final)
        os.replace(self.tmp, self.final)
        return False


def _write_run_config(out: Path, args):
    d = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "overwrite", "verbose")}
    atomic_write_text(out / "run_config.json", dump_json({"command": args.command, "args": d}))


def _need(args, *names):
    for n in names:
        if getattr(args, n) in (None, ""):
            raise UsageError(f"--{n.replace('_', '-')} is required for {args.command}")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _conditions(requested, corpus: Corpus) -> list[str]:
    """Canonical tags for ``requested`` (shorthand like ``v3.0`` allowed), checked against ``corpus``."""
    if not requested:
        return corpus.condition_tags
    try:
        tags = [CaptureCondition.from_tag(t).tag for t in requested]
    except ValueError as e:
        raise UsageError(str(e)) from None
    missing = [t for t in tags if t not in corpus.condition_tags]
    if missing:
        raise UsageError(f"conditions not in corpus: {missing}; available: {corpus.condition_tags}")
    return tags


def _feature_params(args) -> FeatureParams:
    band = NoisyBand(*args.band) if args.band else None
    return FeatureParams(args.block_words, band, args.compressor, args.level)


# --- subcommands ------------------------------------------------------------------


def cmd_suite(args):
    with OutputDir(args.out, args.overwrite) as out:
        save_suite(default_suite(args.n_words, args.word_length), out / "suite.json")
        _write_run_config(out, args)
    return EXIT_OK


def cmd_simulate(args):
    _need(args, "suite", "seed")
    archetypes = load_suite(_existing(args.suite, "suite file"))
    conds = [CaptureCondition.from_tag(t) for t in args.conditions]
    if args.split is not None and sum(args.split) != args.chips:
        raise UsageError(f"--split {args.split[0]}:{args.split[1]} does not add up to --chips {args.chips}")
    with OutputDir(args.out, args.overwrite) as out:
        generate_population(archetypes, args.chips, args.reads, conds, args.seed, out,
                            tuple(args.split) if args.split else None)
        _write_run_config(out, args)
    return EXIT_OK


def cmd_extract(args):
    _need(args, "corpus")
    corpus = Corpus(_existing(args.corpus, "corpus"))
    conds = _conditions(args.conditions, corpus)
    if args.concat and len(conds) < 2:
        raise UsageError("--concat needs at least two conditions")
    if args.subset and (bad := [s for s in args.subset if s not in PHI_NAMES]):
        raise UsageError(f"unknown features {bad}")
    rows, skipped = extract_corpus(corpus, args.split, conds, args.segments, _feature_params(args), args.subset,
                                   args.concat, args.jobs)
    if not rows:
        raise DumpFormatError("no feature rows extracted")
    with OutputDir(args.out, args.overwrite) as out:
        write_feature_csv(rows, out / "features.csv")
        summary = {"rows": len(rows), "chips": len({r.fv.chip_id for r in rows}), "schema_id": rows[0].fv.schema_id,
                   "skipped": len(skipped),
                   "skipped_items": [{"chip_id": c, "condition": t, "reason": r} for c, t, r in skipped]}
        atomic_write_text(out / "summary.json", dump_json(summary))
        _write_run_config(out, args)
    if skipped:
        print(f"extract: skipped {len(skipped)} unreadable chip/condition read sets", file=sys.stderr)
    return EXIT_OK


def _candidates(args):
    out = []
    for kind in args.candidates:
        if kind in ("decision-tree", "tree"):
            out.append(EnsembleConfig.tree(args.n_bags, args.max_depth, args.min_leaf))
        elif kind in ("linear-discriminant", "naive-bayes", "constant"):
            out.append(EnsembleConfig(kind, args.n_bags))
        else:
            raise UsageError(f"unknown base learner {kind!r}")
    return tuple(out) or DEFAULT_CANDIDATES


def cmd_train(args):
    _need(args, "features", "seed")
    rows = read_feature_csv(_existing(args.features, "feature table"))
    if not rows:
        raise DumpFormatError(f"{args.features}: no rows")
    registry = train_registry(rows, args.seed, _candidates(args), args.folds, args.one_class, args.percentile,
                              args.jobs)
    with OutputDir(args.out, args.overwrite) as out:
        registry.save(out)
        _write_run_config(out, args)
    return EXIT_OK


def _classify_rows(args, registry: Registry):
    """Feature rows for classify/report: from a CSV, or extracted with the registry's schema."""
    if args.features_only and not args.features:
        raise UsageError("--features-only needs --features")
    if args.features:
        if args.corpus:
            raise UsageError("give either --features or --corpus, not both")
        return read_feature_csv(_existing(args.features, "feature table"))
    _need(args, "corpus")
    corpus = Corpus(_existing(args.corpus, "corpus"))
    names = registry.feature_names
    if any("@" in n for n in names):
        tags = list(dict.fromkeys(n.split("@", 1)[1] for n in names))
        subset = list(dict.fromkeys(n.split("@", 1)[0] for n in names))
        concat = True
    else:
        tags, subset, concat = _conditions(args.conditions, corpus), list(names), False
    rows, skipped = extract_corpus(corpus, args.split, tags, registry.segments, registry.params,
                                   None if tuple(subset) == PHI_NAMES else subset, concat, args.jobs)
    if skipped:
        print(f"{args.command}: skipped {len(skipped)} unreadable chip/condition read sets", file=sys.stderr)
    return rows


def _load_registry(args) -> Registry:
    _need(args, "models")
    try:
        return Registry.load(_existing(args.models, "model registry"))
    except (KeyError, ValueError) as e:
        raise RegistryError(f"unreadable model registry {args.models}: {e}") from None


def cmd_classify(args):
    registry = _load_registry(args)
    rows = _classify_rows(args, registry)
    verdicts = classify_chips(registry, rows, args.strict)
    with OutputDir(args.out, args.overwrite) as out:
        atomic_write_text(out / "verdicts.json", dump_json({"schema_id": registry.schema_id,
                                                            "strict": args.strict, "chips": verdicts}))
        lines = [f"{v['chip_id']}\t{v['condition']}\t{v['pred_manufacturer']}\t{v['pred_part_two_step']}"
                 for v in verdicts]
        atomic_write_text(out / "verdicts.tsv", "chip_id\tcondition\tmanufacturer\tpart\n" + "\n".join(lines) + "\n")
        _write_run_config(out, args)
    return EXIT_OK


def _embedding_csv(args, rows) -> str:
    fit_rows = read_feature_csv(_existing(args.embed_fit, "feature table")) if args.embed_fit else rows
    level = args.embed_level

    def lab(r):
        return r.manufacturer if level == "manufacturer" else f"{r.manufacturer}/{r.part}"

    import numpy as np

    X = np.array([r.fv.values for r in fit_rows])
    y = np.array([lab(r) for r in fit_rows])
    groups = np.array([r.fv.chip_id for r in fit_rows])
    gamma = args.gamma
    if gamma is None:
        _need(args, "seed")
        gamma = tune_gamma(X, y, seed=args.seed, out_dims=args.dims, folds=min(10, _min_units(y, groups)),
                           groups=groups)
    emb, _ = gda_embed(X, y, gamma, args.dims)
    P = emb.transform(np.array([r.fv.values for r in rows]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["chip_id", "segment", "label"] + [f"dim{i + 1}" for i in range(args.dims)])
    for r, p in zip(rows, P):
        w.writerow([r.fv.chip_id, r.fv.segment_index, lab(r)] + [repr(float(v)) for v in p])
    return buf.getvalue(), gamma


def _min_units(y, groups):
    per = defaultdict(set)
    for label, g in zip(y, groups):
        per[label].add(g)
    return min(len(s) for s in per.values())


def cmd_report(args):
    registry = _load_registry(args)
    rows = _classify_rows(args, registry)
    verdicts = classify_chips(registry, rows, args.strict)
    report = report_from_verdicts(verdicts)
    report["schema_id"] = registry.schema_id
    emb_text = None
    if args.embed:
        emb_text, gamma = _embedding_csv(args, rows)
        report["embedding"] = {"file": "embedding.csv", "dims": args.dims, "level": args.embed_level,
                               "gamma": gamma}
    with OutputDir(args.out, args.overwrite) as out:
        atomic_write_text(out / "report.json", dump_json(report))
        atomic_write_text(out / "report.txt", render_report(report))
        atomic_write_text(out / "verdicts.json", dump_json({"schema_id": registry.schema_id, "chips": verdicts}))
        if emb_text is not None:
            atomic_write_text(out / "embedding.csv", emb_text)
        _write_run_config(out, args)
    return EXIT_OK


def _chip_level(corpus, chips, tag, params, segments=0):
    """``{chip_id: FeatureVector}`` from whole-chip signatures (or the first segment when segments > 0)."""
    return {c.chip_id: chip_features(corpus.signature(c, tag), segments, params)[0] for c in chips}


def cmd_age(args):
    _need(args, "corpus", "seed")
    src = Corpus(_existing(args.corpus, "corpus"))
    usage = UsageProfile(args.duty, args.hours, args.temp, args.volt, args.pattern, args.n_writes)
    model = AgingModel(args.kappa, args.drift)
    params = _feature_params(args)
    with OutputDir(args.out, args.overwrite) as out:
        aged = age_corpus(src, out, usage, args.seed, model)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["chip_id", "condition", "label_manufacturer", "label_part", "feature", "before", "after",
                    "delta"])
        for tag in src.condition_tags:
            before = _chip_level(src, src.chips, tag, params)
            after = _chip_level(aged, aged.chips, tag, params)
            for c in sorted(src.chips, key=lambda c: c.chip_id):
                b, a = before[c.chip_id], after[c.chip_id]
                for name, vb, va in zip(b.names, b.values, a.values):
                    w.writerow([c.chip_id, tag, c.manufacturer, c.part, name, repr(float(vb)), repr(float(va)),
                                repr(float(va - vb))])
        atomic_write_text(out / "feature_deltas.csv", buf.getvalue())
        _write_run_config(out, args)
    return EXIT_OK


def cmd_recycle_check(args):
    _need(args, "reference", "corpus")
    ref_corpus = Corpus(_existing(args.reference, "reference corpus"))
    test_corpus = Corpus(_existing(args.corpus, "corpus"))
    tag = _conditions([args.condition], test_corpus)[0] if args.condition else test_corpus.condition_tags[0]
    if tag not in ref_corpus.condition_tags:
        raise UsageError(f"condition {tag!r} is not in the reference corpus")
    policy = RecyclePolicy(args.z, tuple(args.rules))
    params = _feature_params(args)

    by_class = defaultdict(list)
    for c in ref_corpus.select(args.reference_split):
        by_class[f"{c.manufacturer}/{c.part}"].append(c)
    refs = {cls: FreshReference.from_vectors(cls, _chip_level(ref_corpus, chips, tag, params).values())
            for cls, chips in sorted(by_class.items())}

    test_chips = sorted(test_corpus.select(args.split), key=lambda c: c.chip_id)
    feats = _chip_level(test_corpus, test_chips, tag, params)
    records = []
    for c in test_chips:
        cls = f"{c.manufacturer}/{c.part}"
        if cls not in refs:
            raise DumpFormatError(f"no fresh reference for class {cls!r}")
        v = recycled_check(refs[cls], feats[c.chip_id], policy)
        records.append({"chip_id": c.chip_id, "class": cls} | v.to_dict())
    n_flag = sum(r["decision"] == "suspect-recycled" for r in records)
    result = {"condition": tag, "policy": {"z": policy.z, "rules": list(policy.rules)},
              "summary": {"chips": len(records), "flagged": n_flag,
                          "flag_rate": n_flag / len(records) if records else None},
              "chips": records}
    with OutputDir(args.out, args.overwrite) as out:
        atomic_write_text(out / "recycle.json", dump_json(result))
        _write_run_config(out, args)
    return EXIT_OK


COMMANDS = {"suite": cmd_suite, "simulate": cmd_simulate, "extract": cmd_extract, "train": cmd_train,
            "classify": cmd_classify, "report": cmd_report, "age": cmd_age, "recycle-check": cmd_recycle_check}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as e:  # argparse usage errors exit 2 already
        return int(e.code or 0)
    except UsageError as e:
        print(f"sramprov: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("sramprov: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"sramprov {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaMismatchError, RegistryError) as e:
        print(f"sramprov {args.command}: model/schema error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (DumpFormatError, FileNotFoundError, ValueError, KeyError, OSError) as e:
        print(f"sramprov {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
