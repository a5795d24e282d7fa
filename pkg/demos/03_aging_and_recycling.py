"""
Aging drift and recycled-chip screening
=======================================

Accelerated stress widens the spread of cell mismatch, so fewer cells are
noisy after use.  A fresh-reference z-score screen on Phi6 (and Phi1) flags
chips that drifted.
"""

# %%
import numpy as np

from sramprov.audit import FreshReference, recycled_check
from sramprov.experiment import aging_study
from sramprov.features import FeatureParams, extract_features
from sramprov.sim import UsageProfile, age_chip, default_suite, instantiate_chip, sample_signature, stress_factor

params = FeatureParams(block_words=16)
arch = next(a for a in default_suite() if a.part == "ISSI3")

# %%
# One chip, stressed for longer and longer at 80 C and 3.6 V.
chip = instantiate_chip(arch, seed=3)
for hours in (0.0, 0.5, 1.0, 2.0):
    usage = UsageProfile(stress_hours=hours)
    aged = age_chip(chip, usage, seed=11) if hours else chip
    fv = extract_features(sample_signature(aged, seed=2), params)
    print(f"{hours:>4} h  stress={stress_factor(hours, 80, 3.6):5.1f}  phi6={fv['phi6']:.4f}  phi1={fv['phi1']:.4f}")

# %%
# A fresh reference from 20 chips, then one control and one aged chip.
fresh = [extract_features(sample_signature(instantiate_chip(arch, seed=s), seed=s), params) for s in range(100, 120)]
ref = FreshReference.from_vectors(arch.class_id, fresh)
control = extract_features(sample_signature(instantiate_chip(arch, seed=500), seed=1), params)
used = extract_features(sample_signature(age_chip(instantiate_chip(arch, seed=501), UsageProfile(), seed=4),
                                         seed=1), params)
for name, fv in (("control", control), ("aged", used)):
    v = recycled_check(ref, fv)
    print(name, "recycled" if v.recycled else "fresh", sorted(k for k, f in v.flags.items() if f))

# %%
# The same screen over five classes.
study = aging_study(default_suite()[::5], seed=9)
print(f"aged flagged {study.aged_rate:.0%}, controls flagged {study.control_rate:.0%}")
for p in study.phi6_before:
    print(p, f"{study.phi6_before[p]:.4f} -> {study.phi6_after[p]:.4f}")
