"""The seven start-up features and multi-condition concatenation.

All spreads are population standard deviations.  Phi1-Phi5 and Phi7 are
computed from the unified bit matrix; Phi6 needs the per-bit ones counts.
"""

from __future__ import annotations

import bz2
import lzma
import zlib
from dataclasses import dataclass

import numpy as np

from .core import NoisyBand, SignatureSegment, UnifiedSignature, pack_bits

__all__ = [
    "PHI_NAMES",
    "FeatureParams",
    "FeatureVector",
    "phi1_cell_bias",
    "phi2_bitplane_spread",
    "phi3_word_spread",
    "phi4_compression_ratio",
    "phi5_block_spread",
    "phi6_noisy_fraction",
    "phi7_histogram_spread",
    "extract_features",
    "concat_conditions",
    "DEFAULT_CONCAT_SUBSET",
]

PHI_NAMES = ("phi1", "phi2", "phi3", "phi4", "phi5", "phi6", "phi7")
DEFAULT_CONCAT_SUBSET = ("phi1", "phi4", "phi6", "phi7")

_COMPRESSORS = {
    "zlib": lambda data, level: zlib.compress(data, level),
    "bz2": lambda data, level: bz2.compress(data, level),
    "lzma": lambda data, level: lzma.compress(data, preset=level),
}


@dataclass(frozen=True)
class FeatureParams:
    block_words: int = 512
    noisy_band: NoisyBand | None = None  # None: the band stored on the signature
    compressor: str = "zlib"
    compressor_level: int = 9

    def __post_init__(self):
        if self.block_words < 1:
            raise ValueError("block_words must be >= 1")
        if self.compressor not in _COMPRESSORS:
            raise ValueError(f"unknown compressor {self.compressor!r}")

    @property
    def tag(self) -> str:
        s = f"{self.compressor}-{self.compressor_level};blk{self.block_words}"
        if self.noisy_band is not None:
            s += f";band{self.noisy_band.lo}-{self.noisy_band.hi}"
        return s


def _bits(D) -> np.ndarray:
    D = np.asarray(D)
    if D.ndim != 2 or D.size == 0:
        raise ValueError(f"expected a non-empty 2-D bit matrix, got shape {D.shape}")
    return D


def phi1_cell_bias(D) -> float:
    """Fraction of 1 bits."""
    D = _bits(D)
    return float(np.count_nonzero(D)) / D.size


def phi2_bitplane_spread(D) -> float:
    """Spread of the ones-fraction across bitplanes (columns)."""
    return float(np.std(_bits(D).mean(axis=0, dtype=np.float64)))


def phi3_word_spread(D) -> float:
    """Spread of the ones-fraction across words (rows)."""
    return float(np.std(_bits(D).mean(axis=1, dtype=np.float64)))


def phi4_compression_ratio(D, params: FeatureParams = FeatureParams()) -> float:
    """Uncompressed over compressed size of the packed words, floored at 1."""
    raw = pack_bits(_bits(D))
    compressed = _COMPRESSORS[params.compressor](raw, params.compressor_level)
    return max(1.0, len(raw) / len(compressed))


def phi5_block_spread(D, params: FeatureParams = FeatureParams()) -> float:
    """Spread of the ones-fraction across blocks of consecutive words.

    A trailing partial block counts as one block, normalised by its own size.
    """
    D = _bits(D)
    bw = params.block_words
    row_ones = D.sum(axis=1, dtype=np.int64)
    starts = np.arange(0, D.shape[0], bw)
    block_ones = np.add.reduceat(row_ones, starts)
    sizes = np.diff(np.append(starts, D.shape[0])) * D.shape[1]
    return float(np.std(block_ones / sizes))


def phi6_noisy_fraction(sig: UnifiedSignature | SignatureSegment, band: NoisyBand | None = None) -> float:
    """Fraction of bits whose ones count over the reads falls inside the noisy band."""
    if sig.n_reads < 2 or sig.ones_count is None:
        raise ValueError("noisy fraction needs per-bit counts from at least 2 reads")
    if band is None:
        return float(np.count_nonzero(sig.noisy)) / sig.noisy.size
    band.check(sig.n_reads)
    c = sig.ones_count
    return float(np.count_nonzero((c >= band.lo) & (c <= band.hi))) / c.size


def phi7_histogram_spread(D) -> float:
    """Spread of the (w_l + 1)-bin histogram of ones per word (raw counts)."""
    D = _bits(D)
    hist = np.bincount(D.sum(axis=1, dtype=np.int64), minlength=D.shape[1] + 1)
    return float(np.std(hist))


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Feature values for one chip or segment.

    ``names`` label each entry (``phi4`` or ``phi4@t25v3.0`` once conditions
    are concatenated); ``schema_id`` is those names plus the extraction
    parameters, so vectors are only compared within a schema.
    """

    values: np.ndarray
    names: tuple
    chip_id: str = "chip"
    segment_index: int = -1
    condition: str = ""
    params_tag: str = FeatureParams().tag

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.names),):
            raise ValueError(f"{len(self.names)} names for {v.shape} values")
        if not np.isfinite(v).all():
            raise ValueError("feature values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def schema_id(self) -> str:
        return ",".join(self.names) + "|" + self.params_tag

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def select(self, subset) -> "FeatureVector":
        idx = [self.names.index(n) for n in subset]
        return FeatureVector(self.values[idx], tuple(subset), self.chip_id, self.segment_index,
                             self.condition, self.params_tag)


def extract_features(sig: UnifiedSignature | SignatureSegment,
                     params: FeatureParams = FeatureParams()) -> FeatureVector:
    D = sig.bits
    values = [
        phi1_cell_bias(D),
        phi2_bitplane_spread(D),
        phi3_word_spread(D),
        phi4_compression_ratio(D, params),
        phi5_block_spread(D, params),
        phi6_noisy_fraction(sig, params.noisy_band),
        phi7_histogram_spread(D),
    ]
    if isinstance(sig, SignatureSegment):
        chip_id, seg = sig.parent_chip_id, sig.segment_index
    else:
        chip_id, seg = sig.chip_id, -1
    return FeatureVector(np.array(values), PHI_NAMES, chip_id, seg, sig.condition.tag, params.tag)


def concat_conditions(vectors, subset=DEFAULT_CONCAT_SUBSET) -> FeatureVector:
    """Join one chip/segment's vectors from several capture conditions.

    Entries are ordered condition-major in the order given, each named
    ``<phi>@<condition>``.
    """
    vectors = list(vectors)
    if not vectors:
        raise ValueError("no vectors to concatenate")
    first = vectors[0]
    if len(vectors) == 1 and tuple(subset) == first.names:
        return first
    tags = [v.condition for v in vectors]
    if len(set(tags)) != len(tags):
        raise ValueError(f"duplicate condition tags: {tags}")
    values, names = [], []
    for v in vectors:
        if (v.chip_id, v.segment_index) != (first.chip_id, first.segment_index):
            raise ValueError("cannot concatenate vectors from different chips/segments: "
                             f"{(v.chip_id, v.segment_index)} vs {(first.chip_id, first.segment_index)}")
        if v.params_tag != first.params_tag:
            raise ValueError("cannot concatenate vectors extracted with different parameters")
        for n in subset:
            values.append(v[n])
            names.append(f"{n}@{v.condition}")
    return FeatureVector(np.array(values), tuple(names), first.chip_id, first.segment_index,
                         "+".join(tags), first.params_tag)
