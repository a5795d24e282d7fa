"""Synthetic SRAM start-up populations.

Each cell carries a scalar mismatch ``m`` (the strength difference of its two
cross-coupled inverters, in arbitrary units).  At power-up the cell reads 1
iff ``m + offset + noise > 0``; ``|m|`` relative to the read noise sets
whether the cell is stable or noisy.

Class-level knobs (an archetype) stand in for design, layout and process
differences between part-numbers; one chip is one seeded draw of the
per-cell mismatch field.  Aging shifts ``m`` according to the stored-data
duty cycle and a stress-accelerated random drift.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .core import NOMINAL, CaptureCondition, ReadSet, StartupDump, UnifiedSignature, NoisyBand
from .io import derive_seed

__all__ = [
    "TEMP_RANGE_C",
    "VOLT_RANGE_V",
    "ClassArchetype",
    "SimChip",
    "UsageProfile",
    "AgingModel",
    "stress_factor",
    "instantiate_chip",
    "read_startup",
    "read_set",
    "sample_signature",
    "age_chip",
    "default_suite",
    "load_suite",
    "save_suite",
]

TEMP_RANGE_C = (0.0, 90.0)
VOLT_RANGE_V = (2.7, 3.9)
NOMINAL_TEMP_C = 25.0
NOMINAL_VOLT_V = 3.3


def _as_seed(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class ClassArchetype:
    """Generative parameters of one memory class (manufacturer, part-number)."""

    manufacturer: str
    part: str
    n_words: int = 4096
    word_length: int = 16
    mean_bias: float = 0.0
    bias_sigma: float = 1.0
    column_bias: tuple = ()
    spatial_corr_words: int = 32
    spatial_amplitude: float = 0.0
    noise_scale: float = 0.1
    temp_sensitivity: float = 0.12
    voltage_sensitivity: float = 0.0
    platform_noise: dict = field(default_factory=dict)
    near_duplicate_of: str = ""

    def __post_init__(self):
        if not self.column_bias:
            object.__setattr__(self, "column_bias", (0.0,) * self.word_length)
        object.__setattr__(self, "column_bias", tuple(float(c) for c in self.column_bias))
        if len(self.column_bias) != self.word_length:
            raise ValueError(f"column_bias has {len(self.column_bias)} entries for word length {self.word_length}")
        if self.n_words < 1 or self.word_length < 1:
            raise ValueError("geometry must be at least 1x1")
        if not self.bias_sigma > 0:
            raise ValueError("bias_sigma must be positive")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        if not 0.0 <= self.temp_sensitivity <= 1.0:
            raise ValueError("temp_sensitivity must be in [0, 1]")
        if self.spatial_corr_words < 0 or self.spatial_amplitude < 0:
            raise ValueError("spatial field parameters must be non-negative")

    @property
    def class_id(self) -> tuple:
        return (self.manufacturer, self.part)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["column_bias"] = list(self.column_bias)
        d["platform_noise"] = dict(sorted(self.platform_noise.items()))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassArchetype":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown archetype fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class SimChip:
    chip_id: str
    archetype: ClassArchetype
    mismatch: np.ndarray
    thermal_dir: np.ndarray  # +-1 per cell: direction a temperature rise pushes the cell
    age_state: tuple = ()    # (stress_hours, stress_temp_c, stress_volt, pattern) records

    def __post_init__(self):
        shape = (self.archetype.n_words, self.archetype.word_length)
        if self.mismatch.shape != shape or self.thermal_dir.shape != shape:
            raise ValueError(f"chip fields must have shape {shape}")
        if not np.isfinite(self.mismatch).all():
            raise ValueError("mismatch field must be finite")
        self.mismatch.setflags(write=False)
        self.thermal_dir.setflags(write=False)


def _spatial_field(arch: ClassArchetype, rng) -> np.ndarray:
    if arch.spatial_amplitude == 0:
        return np.zeros(arch.n_words)
    raw = rng.standard_normal(arch.n_words)
    if arch.spatial_corr_words > 0:
        raw = gaussian_filter1d(raw, arch.spatial_corr_words, mode="wrap")
    sd = raw.std()
    return arch.spatial_amplitude * (raw / sd if sd > 0 else raw)


def instantiate_chip(arch: ClassArchetype, seed, chip_id: str | None = None) -> SimChip:
    """Draw one chip: ``m = mean_bias + column_bias[j] + spatial(i) + N(0, bias_sigma)``."""
    rng = np.random.default_rng(_as_seed(seed))
    spatial = _spatial_field(arch, rng)
    cells = rng.standard_normal((arch.n_words, arch.word_length))
    m = arch.mean_bias + np.asarray(arch.column_bias)[None, :] + spatial[:, None] + arch.bias_sigma * cells
    thermal = np.where(rng.random(m.shape) < 0.5, -1, 1).astype(np.int8)
    if chip_id is None:
        chip_id = f"{arch.manufacturer}.{arch.part}"
    return SimChip(chip_id, arch, m, thermal)


def _check_condition(cond: CaptureCondition):
    lo, hi = TEMP_RANGE_C
    if not lo <= cond.temperature_c <= hi:
        raise ValueError(f"temperature {cond.temperature_c} C outside simulator range {TEMP_RANGE_C}")
    lo, hi = VOLT_RANGE_V
    if not lo <= cond.voltage_v <= hi:
        raise ValueError(f"voltage {cond.voltage_v} V outside simulator range {VOLT_RANGE_V}")


def _effective(chip: SimChip, cond: CaptureCondition):
    """Noise-free threshold margin and read-noise level under ``cond``."""
    _check_condition(cond)
    arch = chip.archetype
    m = chip.mismatch
    dv = cond.voltage_v - NOMINAL_VOLT_V
    if dv:
        m = m + arch.voltage_sensitivity * dv
    dt = cond.temperature_c - NOMINAL_TEMP_C
    flip = arch.temp_sensitivity * abs(dt) / 60.0
    if flip > 0:
        # Push every cell by the same margin along its own thermal direction;
        # the margin is the |m| quantile at 2*flip, so an expected fraction
        # `flip` of cells (the weakest ones pointing the other way) change sign.
        q = min(1.0, 2.0 * flip)
        margin = float(np.quantile(np.abs(m), q))
        m = m + math.copysign(margin, dt) * chip.thermal_dir
    noise = arch.noise_scale * math.sqrt((cond.temperature_c + 273.15) / (NOMINAL_TEMP_C + 273.15))
    noise += arch.noise_scale * arch.platform_noise.get(cond.platform_id, 0.0)
    return m, noise


def _draw(m, noise, seed) -> np.ndarray:
    rng = np.random.default_rng(_as_seed(seed))
    z = rng.standard_normal(m.shape, dtype=np.float32)
    return (m + noise * z > 0).astype(np.uint8)


def read_startup(chip: SimChip, cond: CaptureCondition = NOMINAL, seed=0, read_index: int = 0) -> StartupDump:
    """One power-up read of ``chip``; deterministic in ``(chip, cond, seed)``."""
    m, noise = _effective(chip, cond)
    return StartupDump(_draw(m, noise, seed), chip.chip_id, cond, read_index)


def _read_seed(root, chip_id, cond, r):
    return derive_seed(root, "read", chip_id, cond.tag, r)


def read_set(chip: SimChip, cond: CaptureCondition = NOMINAL, n_reads: int = 20, seed=0) -> ReadSet:
    """``n_reads`` reads, read ``r`` seeded by ``derive_seed(seed, "read", chip_id, tag, r)``."""
    m, noise = _effective(chip, cond)
    reads = tuple(StartupDump(_draw(m, noise, _read_seed(seed, chip.chip_id, cond, r)), chip.chip_id, cond, r)
                  for r in range(n_reads))
    return ReadSet(reads, chip.chip_id, cond)


def sample_signature(chip: SimChip, cond: CaptureCondition = NOMINAL, n_reads: int = 20, seed=0,
                     band: NoisyBand | None = None) -> UnifiedSignature:
    """Unified signature of the same reads :func:`read_set` would produce, without keeping them."""
    m, noise = _effective(chip, cond)
    counts = np.zeros(m.shape, dtype=np.uint16)
    for r in range(n_reads):
        counts += _draw(m, noise, _read_seed(seed, chip.chip_id, cond, r))
    return UnifiedSignature.from_counts(counts, n_reads, band, chip.chip_id, cond)


# --- aging ------------------------------------------------------------------

PATTERNS = ("uniform-random", "constant-0", "constant-1", "custom")


@dataclass(frozen=True, eq=False)
class UsageProfile:
    """Stored-data history of a chip.

    ``duty_ones`` is the fraction of lifetime a cell holds logic 1: a scalar,
    or a per-cell field with ``pattern="custom"``.  With ``uniform-random``
    each cell's duty is the ones-fraction of ``n_writes`` random writes of
    probability ``duty_ones``.
    """

    duty_ones: float | np.ndarray = 0.5
    stress_hours: float = 1.0
    stress_temp_c: float = 80.0
    stress_volt: float = 3.6
    pattern: str = "uniform-random"
    n_writes: int = 100

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        d = np.asarray(self.duty_ones, dtype=np.float64)
        if d.size == 0 or d.min() < 0 or d.max() > 1:
            raise ValueError("duty_ones must lie in [0, 1]")
        if self.stress_hours < 0 or self.stress_volt <= 0:
            raise ValueError("invalid stress conditions")

    def duty_field(self, shape, rng) -> np.ndarray:
        if self.pattern == "constant-0":
            return np.zeros(shape)
        if self.pattern == "constant-1":
            return np.ones(shape)
        if self.pattern == "custom":
            return np.broadcast_to(np.asarray(self.duty_ones, dtype=np.float64), shape)
        p = float(np.asarray(self.duty_ones).mean())
        return rng.binomial(self.n_writes, p, size=shape) / self.n_writes


@dataclass(frozen=True)
class AgingModel:
    """Per-stress-unit coefficients: duty-driven shift and random drift."""

    kappa: float = 0.02
    drift: float = 0.02


def stress_factor(hours: float, temp_c: float, volt: float) -> float:
    """``hours * 2**((T - 25)/10) * (V/3.3)**2``; monotone in all three."""
    return hours * 2.0 ** ((temp_c - NOMINAL_TEMP_C) / 10.0) * (volt / NOMINAL_VOLT_V) ** 2


def age_chip(chip: SimChip, usage: UsageProfile, seed=0, model: AgingModel = AgingModel()) -> SimChip:
    """Return an aged copy: ``dm = sf*(kappa*(2*duty - 1) + drift*N(0,1))``.

    Duty toward 1 raises ``m`` (start-up biased to 1).  Zero stress returns
    the mismatch field untouched.
    """
    sf = stress_factor(usage.stress_hours, usage.stress_temp_c, usage.stress_volt)
    record = (float(usage.stress_hours), float(usage.stress_temp_c), float(usage.stress_volt), usage.pattern)
    if sf == 0:
        return dataclasses.replace(chip, age_state=chip.age_state + (record,))
    rng = np.random.default_rng(_as_seed(seed))
    duty = usage.duty_field(chip.mismatch.shape, rng)
    dm = sf * (model.kappa * (2.0 * duty - 1.0) + model.drift * rng.standard_normal(chip.mismatch.shape))
    return SimChip(chip.chip_id, chip.archetype, chip.mismatch + dm, chip.thermal_dir,
                   chip.age_state + (record,))


# --- archetype suites -------------------------------------------------------


def _column_pattern(word_length, spread, cycles, phase):
    j = np.arange(word_length)
    return tuple(np.round(spread * np.cos(2 * np.pi * cycles * j / word_length + phase), 6).tolist())


# Manufacturer-level traits: read noise, bitplane pattern, spatial field.
_MAKERS = {
    "CY": dict(noise_scale=0.10, col=(0.10, 1, 0.0), spatial=(64, 0.10)),
    "IDT": dict(noise_scale=0.20, col=(0.30, 2, 0.5), spatial=(16, 0.05)),
    "ISSI": dict(noise_scale=0.05, col=(0.04, 3, 1.0), spatial=(128, 0.20)),
    "AMI": dict(noise_scale=0.14, col=(0.45, 1, 2.0), spatial=(32, 0.12)),
    "REA": dict(noise_scale=0.28, col=(0.18, 4, 0.3), spatial=(256, 0.30)),
}

# Part-level traits: (part, mean_bias, bias_sigma, voltage_sensitivity,
# temp_sensitivity, near-duplicate partner).
_PARTS = {
    "CY": [("CY1", -0.30, 1.0, 0.3, 0.12, ""), ("CY2", -0.12, 0.8, 0.3, 0.12, ""),
           ("CY3", 0.05, 1.2, 0.3, 0.12, ""), ("CY4", 0.22, 0.9, 0.3, 0.12, ""),
           ("CY5", 0.40, 1.1, 0.3, 0.12, "")],
    "IDT": [("IDT1", -0.35, 1.0, 0.3, 0.12, ""), ("IDT2", 0.0, 1.0, 0.6, 0.12, "IDT5"),
            ("IDT3", 0.35, 1.0, 0.3, 0.12, ""), ("IDT4", -0.15, 0.75, 0.3, 0.12, ""),
            ("IDT5", 0.0, 1.0, -0.6, 0.12, "IDT2"), ("IDT6", 0.15, 1.3, 0.3, 0.12, "")],
    "ISSI": [("ISSI1", -0.25, 1.0, 0.3, 0.12, ""), ("ISSI2", -0.05, 0.85, 0.3, 0.12, ""),
             ("ISSI3", 0.15, 1.15, 0.3, 0.12, ""), ("ISSI4", 0.35, 0.95, 0.3, 0.12, ""),
             ("ISSI5", 0.55, 1.05, 0.3, 0.12, "")],
    "AMI": [("AMI1", 0.10, 1.0, 0.3, 0.20, "AMI2"), ("AMI2", 0.10, 1.0, 0.3, 0.08, "AMI1"),
            ("AMI3", -0.30, 0.8, 0.3, 0.12, "")],
    "REA": [("REA1", -0.30, 1.0, 0.3, 0.12, ""), ("REA2", -0.05, 0.8, 0.3, 0.12, ""),
            ("REA3", 0.20, 1.2, 0.3, 0.12, ""), ("REA4", 0.45, 0.95, 0.3, 0.12, "")],
}


def default_suite(n_words: int = 4096, word_length: int = 16) -> list[ClassArchetype]:
    """Five manufacturers, 23 part-numbers.

    Manufacturers differ in read noise (noisy fraction), bitplane bias
    pattern and spatial correlation; parts within a manufacturer differ in
    global bias and mismatch spread.  Two pairs are near-duplicates: IDT2/IDT5
    differ only in supply-voltage sensitivity, AMI1/AMI2 only in temperature
    sensitivity, so neither pair is separable at the nominal condition.
    """
    suite = []
    for maker, traits in _MAKERS.items():
        spread, cycles, phase = traits["col"]
        corr, amp = traits["spatial"]
        for part, mu, sigma, vs, ts, dup in _PARTS[maker]:
            suite.append(ClassArchetype(
                manufacturer=maker, part=part, n_words=n_words, word_length=word_length,
                mean_bias=mu, bias_sigma=sigma,
                column_bias=_column_pattern(word_length, spread, cycles, phase),
                spatial_corr_words=corr, spatial_amplitude=amp,
                noise_scale=traits["noise_scale"], temp_sensitivity=ts, voltage_sensitivity=vs,
                near_duplicate_of=dup,
            ))
    return suite


def save_suite(archetypes, path):
    from .io import write_json

    write_json(path, {"archetypes": [a.to_dict() for a in archetypes]})


def load_suite(path) -> list[ClassArchetype]:
    from .io import read_json

    doc = read_json(path)
    items = doc["archetypes"] if isinstance(doc, dict) else doc
    if not items:
        raise ValueError(f"{path}: archetype suite is empty")
    return [ClassArchetype.from_dict(d) for d in items]
