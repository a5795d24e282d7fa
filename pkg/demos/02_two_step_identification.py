"""
Two-step identification on a small population
=============================================

Chips of three manufacturers are enrolled, a model registry is trained, and
held-out chips are identified first by manufacturer, then by part number.
Each chip is split into segments that vote.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from sramprov.audit import render_report
from sramprov.classify import EnsembleConfig, gda_embed
from sramprov.corpus import generate_population
from sramprov.features import FeatureParams
from sramprov.pipeline import classify_chips, extract_corpus, report_from_verdicts, train_registry
from sramprov.sim import default_suite

SEED = 5
parts = ("CY1", "CY3", "IDT1", "IDT4", "ISSI2", "ISSI5")
suite = [a for a in default_suite(1024, 16) if a.part in parts]

# %%
# Eight chips per part on disk: six for training, two held out.
root = Path(tempfile.mkdtemp()) / "corpus"
corpus = generate_population(suite, 8, 20, ["t25v3.3"], SEED, root, split=(6, 2))
params = FeatureParams(block_words=16)
train_rows, _ = extract_corpus(corpus, "train", None, 8, params)
test_rows, _ = extract_corpus(corpus, "test", None, 8, params)
print(len(train_rows), "training segments,", len(test_rows), "test segments")

# %%
# One bagged model per class and level; the base learner is picked by
# grouped cross-validation.
candidates = (EnsembleConfig.tree(n_bags=15), EnsembleConfig("naive-bayes", 15))
registry = train_registry(train_rows, SEED, candidates, folds=3, one_class=True)
for m, model in sorted(registry.manufacturer_models.items()):
    print(m, model.config.base_kind, f"cv={model.cv_score:.3f}")

# %%
verdicts = classify_chips(registry, test_rows)
v = verdicts[0]
print(v["chip_id"], "->", v["pred_manufacturer"], v["pred_part_two_step"])
print("segment votes:", v["manufacturer_verdict"]["segment_votes"])
print(render_report(report_from_verdicts(verdicts)))

# %%
# The strict gate answers "unknown origin" when a chip sits outside the
# winning manufacturer's enrolment envelope.
strict = classify_chips(registry, test_rows, strict=True)
print("unknown origin:", sum(s["pred_manufacturer"] == "unknown origin" for s in strict), "of", len(strict))

# %%
# A kernel discriminant view of the manufacturer classes (at most K-1 axes).
X = np.array([r.fv.values for r in train_rows])
labels = [r.manufacturer for r in train_rows]
emb, P = gda_embed(X, labels, gamma=0.1)
for m in sorted(set(labels)):
    pts = P[np.array(labels) == m]
    print(m, "centroid", np.round(pts.mean(axis=0), 3))
