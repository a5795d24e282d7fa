"""Start-up dump data model, read fusion, segmentation and bit-aliasing.

A start-up dump is an ``n_w x w_l`` bit matrix: one row per data word, one
column per bitplane, bit 0 being the least significant bit of the word.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "DumpFormatError",
    "CaptureCondition",
    "NOMINAL",
    "StartupDump",
    "ReadSet",
    "NoisyBand",
    "UnifiedSignature",
    "SignatureSegment",
    "unify_reads",
    "segment",
    "segment_sizes",
    "bit_aliasing",
    "pack_bits",
    "unpack_bits",
    "store_dump",
    "load_dump",
]

MAGIC = b"SRMD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")


class DumpFormatError(ValueError):
    """Raised for malformed or truncated dump files."""


@dataclass(frozen=True)
class CaptureCondition:
    temperature_c: float = 25.0
    voltage_v: float = 3.3
    platform_id: str = ""

    def __post_init__(self):
        if not self.voltage_v > 0:
            raise ValueError(f"voltage_v must be positive, got {self.voltage_v}")

    @property
    def tag(self) -> str:
        """Canonical text form, e.g. ``t25v3.3`` or ``t45v3.3@boardB``."""
        volts = f"{self.voltage_v:g}"
        if "." not in volts and "e" not in volts:
            volts += ".0"  # v3.0 rather than v3
        s = f"t{self.temperature_c:g}v{volts}"
        if self.platform_id:
            s += f"@{self.platform_id}"
        return s

    @classmethod
    def from_tag(cls, tag: str) -> "CaptureCondition":
        """Parse ``t<degC>``/``v<volts>`` tokens in any order, optional ``@platform``.

        Missing tokens default to the nominal 25 C / 3.3 V point.
        """
        body, _, platform = tag.strip().partition("@")
        m = re.fullmatch(r"(?:(t)(-?[\d.]+)|(v)([\d.]+))+", body)
        if not body or m is None:
            raise ValueError(f"bad condition tag {tag!r}")
        temp, volt = 25.0, 3.3
        for key, val in re.findall(r"([tv])(-?[\d.]+)", body):
            if key == "t":
                temp = float(val)
            else:
                volt = float(val)
        return cls(temp, volt, platform)

    def to_dict(self) -> dict:
        return {"temperature_c": self.temperature_c, "voltage_v": self.voltage_v,
                "platform_id": self.platform_id}

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureCondition":
        return cls(float(d["temperature_c"]), float(d["voltage_v"]), d.get("platform_id", ""))


NOMINAL = CaptureCondition()


def _as_bits(words) -> np.ndarray:
    a = np.asarray(words)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"bit matrix must be 2-D and non-empty, got shape {a.shape}")
    if a.dtype != np.uint8:
        if not np.isin(a, (0, 1)).all():
            raise ValueError("bit matrix entries must be 0 or 1")
        a = a.astype(np.uint8)
    elif a.max(initial=0) > 1:
        raise ValueError("bit matrix entries must be 0 or 1")
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StartupDump:
    """One raw power-up read of a chip."""

    words: np.ndarray
    chip_id: str
    condition: CaptureCondition = NOMINAL
    read_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "words", _as_bits(self.words))
        if self.read_index < 0:
            raise ValueError("read_index must be >= 0")

    @property
    def n_words(self) -> int:
        return self.words.shape[0]

    @property
    def word_length(self) -> int:
        return self.words.shape[1]


@dataclass(frozen=True, eq=False)
class ReadSet:
    reads: tuple
    chip_id: str
    condition: CaptureCondition = NOMINAL

    def __post_init__(self):
        reads = tuple(self.reads)
        if not reads:
            raise ValueError("read set is empty")
        shape = reads[0].words.shape
        for r in reads:
            if r.words.shape != shape:
                raise ValueError(f"read dimension mismatch: {r.words.shape} vs {shape}")
            if r.chip_id != self.chip_id:
                raise ValueError(f"read from chip {r.chip_id!r} in read set of {self.chip_id!r}")
        object.__setattr__(self, "reads", reads)

    def __len__(self):
        return len(self.reads)

    @classmethod
    def from_matrices(cls, matrices, chip_id="chip", condition=NOMINAL) -> "ReadSet":
        return cls(tuple(StartupDump(m, chip_id, condition, i) for i, m in enumerate(matrices)),
                   chip_id, condition)


@dataclass(frozen=True)
class NoisyBand:
    """Inclusive ones-count range marking a bit as noisy (8..12 of 20 reads).

    ``lo == hi + 1`` is the empty band: for some small read counts no integer
    lies in the proportional range.
    """

    lo: int = 8
    hi: int = 12

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi + 1:
            raise ValueError(f"invalid noisy band [{self.lo}, {self.hi}]")

    @classmethod
    def for_reads(cls, n: int) -> "NoisyBand":
        if n < 1:
            raise ValueError("need at least one read")
        return cls(math.ceil(0.4 * n - 1e-9), math.floor(0.6 * n + 1e-9))

    def check(self, n_reads: int):
        if self.hi > n_reads:
            raise ValueError(f"noisy band [{self.lo}, {self.hi}] inconsistent with {n_reads} reads")


@dataclass(frozen=True, eq=False)
class UnifiedSignature:
    bits: np.ndarray
    noisy: np.ndarray
    n_reads: int
    ones_count: np.ndarray
    chip_id: str = "chip"
    condition: CaptureCondition = NOMINAL
    band: NoisyBand = field(default_factory=NoisyBand)

    @property
    def shape(self):
        return self.bits.shape

    @classmethod
    def from_counts(cls, ones_count, n_reads, band=None, chip_id="chip",
                    condition=NOMINAL) -> "UnifiedSignature":
        """Build a signature directly from per-bit ones counts."""
        counts = np.asarray(ones_count)
        if counts.ndim != 2:
            raise ValueError("ones_count must be 2-D")
        if counts.min(initial=0) < 0 or counts.max(initial=0) > n_reads:
            raise ValueError("ones counts must lie in [0, n_reads]")
        band = NoisyBand.for_reads(n_reads) if band is None else band
        band.check(n_reads)
        counts = counts.astype(np.int32 if n_reads > 65535 else np.uint16)
        bits = (2 * counts.astype(np.int64) > n_reads).astype(np.uint8)
        noisy = (counts >= band.lo) & (counts <= band.hi)
        for a in (bits, noisy, counts):
            a.setflags(write=False)
        return cls(bits, noisy, int(n_reads), counts, chip_id, condition, band)


def unify_reads(reads: ReadSet | Sequence[StartupDump], band: NoisyBand | None = None) -> UnifiedSignature:
    """Majority-vote fusion of repeated reads.

    A bit is 1 when it read 1 in more than half the reads; an exact tie goes
    to 0.  ``band`` defaults to the proportional band for the read count.
    """
    if not isinstance(reads, ReadSet):
        reads = list(reads)
        if not reads:
            raise ValueError("read set is empty")
        reads = ReadSet(tuple(reads), reads[0].chip_id, reads[0].condition)
    counts = np.zeros(reads.reads[0].words.shape, dtype=np.uint16)
    for r in reads.reads:
        counts += r.words
    return UnifiedSignature.from_counts(counts, len(reads), band, reads.chip_id, reads.condition)


@dataclass(frozen=True, eq=False)
class SignatureSegment:
    parent_chip_id: str
    segment_index: int
    bits: np.ndarray
    noisy: np.ndarray
    n_reads: int = 0
    ones_count: np.ndarray | None = None
    condition: CaptureCondition = NOMINAL
    band: NoisyBand = field(default_factory=NoisyBand)


def segment_sizes(n_words: int, k: int) -> list[int]:
    """Row counts per segment; the first ``n_words % k`` segments get one extra row."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n_words:
        raise ValueError(f"cannot cut {n_words} rows into {k} segments")
    base, extra = divmod(n_words, k)
    return [base + 1 if i < extra else base for i in range(k)]


def segment(sig: UnifiedSignature, k: int = 16) -> list[SignatureSegment]:
    """Cut a signature into ``k`` row-contiguous segments."""
    out = []
    start = 0
    for i, size in enumerate(segment_sizes(sig.bits.shape[0], k)):
        rows = slice(start, start + size)
        out.append(SignatureSegment(sig.chip_id, i, sig.bits[rows], sig.noisy[rows], sig.n_reads,
                                    sig.ones_count[rows], sig.condition, sig.band))
        start += size
    return out


def bit_aliasing(signatures: Sequence[UnifiedSignature | np.ndarray]) -> np.ndarray:
    """Per-bit mean of unified bits over a chip population."""
    if len(signatures) == 0:
        raise ValueError("no signatures")
    mats = [s.bits if isinstance(s, UnifiedSignature) else _as_bits(s) for s in signatures]
    shape = mats[0].shape
    for m in mats:
        if m.shape != shape:
            raise ValueError(f"signature dimension mismatch: {m.shape} vs {shape}")
    total = np.zeros(shape, dtype=np.int64)
    for m in mats:
        total += m
    return total / len(mats)


# --- dump file format -------------------------------------------------------


def pack_bits(bits: np.ndarray) -> bytes:
    """Row-major words, ``ceil(w_l/8)`` little-endian bytes each, bit 0 = LSB."""
    bits = np.asarray(bits, dtype=np.uint8)
    n_w, w_l = bits.shape
    nbytes = -(-w_l // 8)
    padded = np.zeros((n_w, nbytes * 8), dtype=np.uint8)
    padded[:, :w_l] = bits
    return np.packbits(padded, axis=1, bitorder="little").tobytes()


def unpack_bits(data: bytes, n_words: int, word_length: int) -> np.ndarray:
    nbytes = -(-word_length // 8)
    if len(data) != n_words * nbytes:
        raise DumpFormatError(f"payload is {len(data)} bytes, expected {n_words * nbytes}")
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n_words, nbytes)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    if word_length % 8 and bits[:, word_length:].any():
        raise DumpFormatError(f"word bits set beyond declared width {word_length}")
    return bits[:, :word_length]


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def store_dump(dump: StartupDump, path, labels: dict | None = None):
    """Write ``path`` (binary) and ``path.json`` (manifest sidecar), atomically."""
    from .io import atomic_write_bytes, atomic_write_text

    path = Path(path)
    n_w, w_l = dump.words.shape
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, w_l, n_w, 0)
    atomic_write_bytes(path, header + pack_bits(dump.words))
    meta = {"chip_id": dump.chip_id, "condition": dump.condition.to_dict(),
            "read_index": dump.read_index, "labels": labels or {}}
    atomic_write_text(_sidecar(path), json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_dump(path) -> StartupDump:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise DumpFormatError(f"{path}: truncated header")
    magic, version, w_l, n_w, _reserved = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DumpFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DumpFormatError(f"{path}: unsupported version {version}")
    if n_w < 1 or w_l < 1:
        raise DumpFormatError(f"{path}: empty geometry {n_w}x{w_l}")
    try:
        bits = unpack_bits(data[_HEADER.size:], n_w, w_l)
    except DumpFormatError as e:
        raise DumpFormatError(f"{path}: {e}") from None
    meta = {}
    side = _sidecar(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DumpFormatError(f"{side}: {e}") from None
    cond = CaptureCondition.from_dict(meta["condition"]) if "condition" in meta else NOMINAL
    return StartupDump(bits, meta.get("chip_id", path.stem), cond, int(meta.get("read_index", 0)))
