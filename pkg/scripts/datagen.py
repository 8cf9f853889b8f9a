"""
Synthetic labelled sequences with controllable state durations and intervals.

Each label owns a latent template: an ordered list of runs (symbol, duration)
and the gaps between them. Train and test splits are noisy variants of the
templates (duration and gap jitter, symbol substitution). Two more sources
mimic recorded music: the template is rendered as a per-tick volume trace by
an instrument envelope, then either thresholded into high/low/interval
symbols or written as musical-scale values with silence as interval.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, fields, replace
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np

from core import END_SYMBOL, INTERVAL_SYMBOL, START_SYMBOL, Dataset, Sequence, SymbolTable, encode_sequence
from errors import InvalidThresholds, SchemaError, UnknownScaleValue, ValidationError

logger = logging.getLogger(__name__)

PITCH_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
HIGH_SYMBOL = "high"
LOW_SYMBOL = "low"

SOURCES = ("symbolic", "volume", "scale")

# (attack level, per-tick decay) of each instrument envelope
INSTRUMENTS = {
    "piano": (0.9, 0.75),
    "horn": (0.75, 0.95),
    "drum": (1.0, 0.35),
    "guitar": (0.9, 0.8),
    "flute": (0.7, 0.97),
    "organ": (0.8, 1.0),
}
TRAIN_INSTRUMENTS = ("piano", "horn", "drum")
TEST_INSTRUMENTS = ("guitar", "flute", "organ")

SPLITS = ("train", "test")


@dataclass(frozen=True)
class VolumeTrace:
    samples: Tuple[float, ...]

    def __post_init__(self):
        if not self.samples:
            raise ValidationError("volume trace is empty")
        if not all(math.isfinite(v) and v >= 0 for v in self.samples):
            raise ValidationError("volume samples must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class GenProfile:
    num_labels: int = 4
    sequences_per_label: int = 5
    d_min: int = 1
    d_max: int = 4
    l_min: int = 0
    l_max: int = 4
    alphabet_size: int = 6
    num_runs: int = 6
    p_noise: float = 0.05
    jitter: int = 1
    add_start_end: bool = False
    seed: int = 0
    # > 0: every label draws its symbols from its own block of this many symbols
    symbols_per_label: int = 0
    # labels share one symbol/duration template and differ only in their gaps
    interval_signature: bool = False
    # exact number of positive interior gaps per template (None: any)
    num_intervals: Optional[int] = None
    source: str = "symbolic"
    volume_b1: float = 0.2
    volume_b2: float = 0.6

    def __post_init__(self):
        if self.num_labels < 1 or self.sequences_per_label < 1 or self.num_runs < 1:
            raise ValidationError("num_labels, sequences_per_label and num_runs must be >= 1")
        if not 1 <= self.d_min <= self.d_max:
            raise ValidationError(f"need 1 <= d_min <= d_max, got {self.d_min}, {self.d_max}")
        if not 0 <= self.l_min <= self.l_max:
            raise ValidationError(f"need 0 <= l_min <= l_max, got {self.l_min}, {self.l_max}")
        if not 0 <= self.p_noise <= 1 or self.jitter < 0:
            raise ValidationError("p_noise must be in [0, 1] and jitter >= 0")
        if self.source not in SOURCES:
            raise ValidationError(f"unknown source '{self.source}', expected one of {SOURCES}")
        if self.source == "scale" and self.alphabet_size > len(PITCH_NAMES):
            raise ValidationError(f"the scale source has only {len(PITCH_NAMES)} pitches")
        pool = self.symbols_per_label or self.alphabet_size
        if self.symbols_per_label and self.alphabet_size < self.num_labels * self.symbols_per_label:
            raise ValidationError("alphabet too small for disjoint per-label symbol blocks")
        if self.num_runs > 1 and pool < 2:
            raise ValidationError("need at least two symbols per label to alternate runs")
        if self.num_intervals is not None:
            if not 0 <= self.num_intervals <= self.num_runs - 1:
                raise ValidationError(f"num_intervals must be in [0, {self.num_runs - 1}]")
            if self.num_intervals > 0 and self.l_max < 1:
                raise ValidationError("num_intervals > 0 needs l_max >= 1")
        if self.volume_b2 < self.volume_b1 or self.volume_b1 < 0:
            raise InvalidThresholds(f"need 0 <= b1 <= b2, got b1={self.volume_b1}, b2={self.volume_b2}")


PRESETS: Dict[str, GenProfile] = {
    "music": GenProfile(num_labels=27, sequences_per_label=3, d_min=1, d_max=6, l_min=0, l_max=3,
                        alphabet_size=12, num_runs=8, add_start_end=True, source="scale"),
    "separable": GenProfile(num_labels=3, sequences_per_label=4, d_min=1, d_max=3, l_min=0, l_max=2,
                            alphabet_size=9, symbols_per_label=3, num_runs=5, p_noise=0.0, jitter=0),
    "interval-signature": GenProfile(num_labels=10, sequences_per_label=5, d_min=2, d_max=3, l_min=1,
                                     l_max=10, alphabet_size=4, num_runs=5, p_noise=0.0, jitter=1,
                                     interval_signature=True),
    "timing": GenProfile(num_labels=1, sequences_per_label=35, d_min=2, d_max=2, l_min=1, l_max=10,
                         alphabet_size=4, num_runs=6),
}


def load_profile(name_or_path: str, **overrides) -> GenProfile:
    """A preset name or a JSON file with GenProfile fields; keyword overrides win."""
    if name_or_path in PRESETS:
        profile = PRESETS[name_or_path]
    elif os.path.exists(name_or_path):
        with open(name_or_path, 'r') as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid profile JSON: {e.msg}", e.lineno)
        if not isinstance(data, dict):
            raise SchemaError("a profile must be a JSON object")
        known = {f.name for f in fields(GenProfile)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise SchemaError(f"unknown profile fields: {', '.join(unknown)}")
        profile = GenProfile(**data)
    else:
        raise SchemaError(f"'{name_or_path}' is neither a preset ({', '.join(PRESETS)}) nor a file")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(profile, **overrides) if overrides else profile


# ---------------------------------------------------------------------------
# Volume and musical-scale encodings
# ---------------------------------------------------------------------------

def level_table() -> SymbolTable:
    return SymbolTable([HIGH_SYMBOL, LOW_SYMBOL], frozen=True)


def scale_table(size: int = len(PITCH_NAMES)) -> SymbolTable:
    return SymbolTable(PITCH_NAMES[:size], frozen=True)


def quantize_volume(trace, b1: float, b2: float, table: Optional[SymbolTable] = None,
                    label: Optional[str] = None) -> Sequence:
    """v >= b2 is high, b2 > v >= b1 is low, anything quieter is an interval tick."""
    if b2 < b1 or b1 < 0:
        raise InvalidThresholds(f"need 0 <= b1 <= b2, got b1={b1}, b2={b2}")
    if not isinstance(trace, VolumeTrace):
        trace = VolumeTrace(tuple(float(v) for v in trace))
    table = table or level_table()
    names = []
    for v in trace.samples:
        if v >= b2:
            names.append(HIGH_SYMBOL)
        elif v >= b1:
            names.append(LOW_SYMBOL)
        else:
            names.append(table.interval_symbol)
    return encode_sequence(names, table, label=label)


def music_scale_encode(values: SequenceType[float], table: Optional[SymbolTable] = None,
                       label: Optional[str] = None) -> Sequence:
    """0.01..0.12 are the pitches C..B, 0.00 is silence (an interval tick)."""
    table = table or scale_table()
    names = []
    for v in values:
        step = round(v * 100)
        if abs(v * 100 - step) > 1e-6 or not 0 <= step <= len(PITCH_NAMES):
            raise UnknownScaleValue(f"{v!r} is not a scale value in 0.00..0.12")
        names.append(table.interval_symbol if step == 0 else PITCH_NAMES[step - 1])
    return encode_sequence(names, table, label=label)


def render_volume_trace(durations: SequenceType[int], gaps: SequenceType[int], instrument: str,
                        rng: np.random.Generator, noise: float = 0.0) -> VolumeTrace:
    """Note k sounds for durations[k] ticks with the instrument envelope; gaps[k] silent ticks precede it."""
    if instrument not in INSTRUMENTS:
        raise ValidationError(f"unknown instrument '{instrument}'")
    level, decay = INSTRUMENTS[instrument]
    samples: List[float] = []
    for gap, duration in zip(gaps, durations):
        samples.extend([0.0] * gap)
        envelope = level * decay ** np.arange(duration)
        if noise > 0:
            envelope = envelope * (1 + rng.normal(0, noise, size=duration))
        samples.extend(float(v) for v in np.clip(envelope, 0.0, None))
    return VolumeTrace(tuple(samples))


# ---------------------------------------------------------------------------
# Templates and variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Template:
    symbols: Tuple[int, ...]  # indexes into the profile alphabet
    durations: Tuple[int, ...]
    gaps: Tuple[int, ...]  # gaps[k] precedes run k; gaps[0] is always 0


def symbol_names(profile: GenProfile) -> Tuple[str, ...]:
    if profile.source == "scale" or profile.alphabet_size <= len(PITCH_NAMES):
        return PITCH_NAMES[:profile.alphabet_size]
    return tuple(f"s{k:02d}" for k in range(profile.alphabet_size))


def _symbol_order(pool: SequenceType[int], count: int, rng: np.random.Generator) -> Tuple[int, ...]:
    order = [int(rng.choice(pool))]
    while len(order) < count:
        choices = [s for s in pool if s != order[-1]]
        order.append(int(rng.choice(choices)))
    return tuple(order)


def _gaps(profile: GenProfile, rng: np.random.Generator) -> Tuple[int, ...]:
    interior = profile.num_runs - 1
    positive_lo = max(1, profile.l_min)
    if profile.num_intervals is None:
        gaps = rng.integers(profile.l_min, profile.l_max + 1, size=interior)
    else:
        gaps = np.zeros(interior, dtype=int)
        if profile.num_intervals:
            where = rng.choice(interior, size=profile.num_intervals, replace=False)
            gaps[where] = rng.integers(positive_lo, profile.l_max + 1, size=profile.num_intervals)
    return (0,) + tuple(int(g) for g in gaps)


def make_template(profile: GenProfile, label_index: int) -> Template:
    rng = np.random.default_rng([profile.seed, label_index])
    if profile.symbols_per_label:
        first = label_index * profile.symbols_per_label
        pool = list(range(first, first + profile.symbols_per_label))
    else:
        pool = list(range(profile.alphabet_size))
    if profile.interval_signature:
        shared = np.random.default_rng([profile.seed, profile.num_labels, 1])
        symbols = _symbol_order(pool, profile.num_runs, shared)
        durations = shared.integers(profile.d_min, profile.d_max + 1, size=profile.num_runs)
    else:
        symbols = _symbol_order(pool, profile.num_runs, rng)
        durations = rng.integers(profile.d_min, profile.d_max + 1, size=profile.num_runs)
    return Template(symbols=symbols, durations=tuple(int(d) for d in durations), gaps=_gaps(profile, rng))


def make_variant(profile: GenProfile, template: Template, rng: np.random.Generator) -> Template:
    """Jitter durations and positive gaps by up to +-jitter (clipped), substitute symbols with p_noise."""
    j = profile.jitter
    durations = tuple(int(np.clip(d + rng.integers(-j, j + 1), profile.d_min, profile.d_max))
                      for d in template.durations)
    positive_lo = max(1, profile.l_min)
    gaps = tuple(0 if g == 0 else int(np.clip(g + rng.integers(-j, j + 1), positive_lo, profile.l_max))
                 for g in template.gaps)
    symbols = list(template.symbols)
    if profile.p_noise > 0:
        for k in range(len(symbols)):
            if rng.random() < profile.p_noise:
                others = [s for s in range(profile.alphabet_size) if s != symbols[k]]
                symbols[k] = int(rng.choice(others))
    return Template(symbols=tuple(symbols), durations=durations, gaps=gaps)


def _wrap(names: List[str], profile: GenProfile) -> List[str]:
    return [START_SYMBOL] + names + [END_SYMBOL] if profile.add_start_end else names


def render(profile: GenProfile, variant: Template, table: SymbolTable, label: str,
           instrument: str, rng: np.random.Generator) -> Sequence:
    names_of = symbol_names(profile)
    if profile.source == "symbolic":
        names: List[str] = []
        for gap, symbol, duration in zip(variant.gaps, variant.symbols, variant.durations):
            names.extend([table.interval_symbol] * gap)
            names.extend([names_of[symbol]] * duration)
        return encode_sequence(_wrap(names, profile), table, label=label)

    trace = render_volume_trace(variant.durations, variant.gaps, instrument, rng, noise=profile.p_noise)
    if profile.source == "volume":
        ticks = quantize_volume(trace, profile.volume_b1, profile.volume_b2, table)
    else:
        values = []
        for gap, symbol, duration in zip(variant.gaps, variant.symbols, variant.durations):
            values.extend([0.0] * gap)
            values.extend([(symbol + 1) / 100] * duration)
        values = [v if loud >= profile.volume_b1 else 0.0 for v, loud in zip(values, trace.samples)]
        ticks = music_scale_encode(values, table)
    return encode_sequence(_wrap([table.name_of(o) for o in ticks.obs], profile), table, label=label)


def dataset_table(profile: GenProfile) -> SymbolTable:
    if profile.source == "volume":
        return level_table()
    if profile.source == "scale":
        return scale_table(profile.alphabet_size)
    return SymbolTable(symbol_names(profile), interval_symbol=INTERVAL_SYMBOL, frozen=True)


def label_name(profile: GenProfile, label_index: int) -> str:
    width = len(str(profile.num_labels - 1))
    return f"label{label_index:0{width}d}"


def synth_dataset(profile: GenProfile) -> Tuple[Dataset, Dataset]:
    """Train and test splits drawn from the same templates; deterministic in profile.seed."""
    table = dataset_table(profile)
    splits: Dict[str, List[Sequence]] = {split: [] for split in SPLITS}
    for label_index in range(profile.num_labels):
        label = label_name(profile, label_index)
        template = make_template(profile, label_index)
        for split_index, split in enumerate(SPLITS):
            instruments = TRAIN_INSTRUMENTS if split == "train" else TEST_INSTRUMENTS
            for k in range(profile.sequences_per_label):
                rng = np.random.default_rng([profile.seed, label_index, split_index, k])
                variant = make_variant(profile, template, rng)
                seq = render(profile, variant, table, label, instruments[k % len(instruments)], rng)
                splits[split].append(seq)
    logger.info(f"Generated {profile.num_labels} labels x {profile.sequences_per_label} sequences per split")
    return (Dataset(table=table, sequences=tuple(splits["train"]), split="train"),
            Dataset(table=table, sequences=tuple(splits["test"]), split="test"))
