"""
From power-up reads to a feature vector
=======================================

A simulated chip is read 20 times; the reads are fused by majority vote and
the seven class-level features are computed for the whole chip and for each
of its 16 segments.
"""

# %%
import numpy as np

from sramprov.core import CaptureCondition, bit_aliasing, segment, unify_reads
from sramprov.features import FeatureParams, extract_features
from sramprov.sim import default_suite, instantiate_chip, read_set

suite = default_suite(n_words=4096, word_length=16)
arch = next(a for a in suite if a.part == "CY2")
chip = instantiate_chip(arch, seed=1, chip_id="CY2-demo")
print(arch.part, arch.manufacturer, chip.mismatch.shape)

# %%
# Twenty power-up reads at the nominal point.  Most cells agree every time;
# the few that do not are the noisy bits.
reads = read_set(chip, CaptureCondition(25.0, 3.3), n_reads=20, seed=7)
sig = unify_reads(reads)
counts = np.bincount(sig.ones_count.ravel(), minlength=21)
print("ones-count histogram (0..20):", counts.tolist())
print("noisy bits (8..12 of 20):", int(sig.noisy.sum()))

# %%
# Whole-chip features.  Phi4 is the zlib-9 compression ratio, Phi5 the spread
# of 512-word block densities.
fv = extract_features(sig)
for name, v in zip(fv.names, fv.values):
    print(f"{name}: {v:.5f}")

# %%
# Sixteen segments of 256 words; a smaller block keeps Phi5 informative at
# this size.
params = FeatureParams(block_words=16)
seg_fvs = [extract_features(s, params) for s in segment(sig, 16)]
table = np.array([f.values for f in seg_fvs])
print("per-segment mean:", np.round(table.mean(axis=0), 4))
print("per-segment std: ", np.round(table.std(axis=0), 4))

# %%
# Bit-aliasing across ten chips of one class: the per-position mean sits far
# from 0.5 where the class has a column bias.
sigs = [unify_reads(read_set(instantiate_chip(arch, seed=s), n_reads=20, seed=s)) for s in range(10)]
alias = bit_aliasing(sigs)
print("bit-aliasing by column:", np.round(alias.mean(axis=0), 3))
