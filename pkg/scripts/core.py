"""
Alphabet, sequence and dataset types shared by all model kinds.

A Sequence holds one symbol id per unit time. Ticks without an observation
carry the reserved interval symbol; segment_runs turns such a sequence into
runs of identical symbols separated by gaps of interval ticks.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence as SequenceType, Tuple

from errors import EmptySequence, SchemaError, UnknownSymbol
from utils import write_text_atomic

logger = logging.getLogger(__name__)

INTERVAL_SYMBOL = "i"
START_SYMBOL = "start"
END_SYMBOL = "end"

INTERVAL_ID = 0
START_ID = 1
END_ID = 2


class SymbolTable:
    """Observation alphabet. Ids 0..2 are reserved for the interval, start and end symbols.

    An open table registers unseen names on lookup; a frozen one raises UnknownSymbol.
    """

    def __init__(self, names: Iterable[str] = (), interval_symbol: str = INTERVAL_SYMBOL,
                 frozen: bool = False):
        self._symbols: List[str] = []
        self._ids: Dict[str, int] = {}
        for reserved in (interval_symbol, START_SYMBOL, END_SYMBOL):
            if reserved in self._ids:
                raise SchemaError(f"reserved symbol '{reserved}' is used twice")
            self._add(reserved)
        for name in names:
            if name not in self._ids:
                self._add(name)
        self._frozen = frozen

    def _add(self, name: str) -> int:
        if not isinstance(name, str) or not name:
            raise SchemaError(f"symbol names must be non-empty strings, got {name!r}")
        self._ids[name] = len(self._symbols)
        self._symbols.append(name)
        return self._ids[name]

    @property
    def symbols(self) -> Tuple[str, ...]:
        return tuple(self._symbols)

    @property
    def interval_symbol(self) -> str:
        return self._symbols[INTERVAL_ID]

    @property
    def interval_id(self) -> int:
        return INTERVAL_ID

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "SymbolTable":
        """Return a frozen copy; the original stays usable as a builder."""
        return SymbolTable(self._symbols[3:], interval_symbol=self.interval_symbol, frozen=True)

    def id_of(self, name: str) -> int:
        symbol_id = self._ids.get(name)
        if symbol_id is None:
            if self._frozen:
                raise UnknownSymbol(f"unknown symbol '{name}'")
            symbol_id = self._add(name)
        return symbol_id

    def name_of(self, symbol_id: int) -> str:
        return self._symbols[symbol_id]

    def __len__(self) -> int:
        return len(self._symbols)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __eq__(self, other) -> bool:
        if not isinstance(other, SymbolTable):
            return NotImplemented
        return self._symbols == other._symbols

    def __hash__(self) -> int:
        return hash(tuple(self._symbols))

    def __repr__(self) -> str:
        return f"SymbolTable({self._symbols!r}, frozen={self._frozen})"


@dataclass(frozen=True)
class Sequence:
    """One observation per tick; `label` names the class the sequence belongs to."""

    obs: Tuple[int, ...]
    label: Optional[str] = None

    def __post_init__(self):
        if len(self.obs) == 0:
            raise EmptySequence("sequence has no observations")
        object.__setattr__(self, "obs", tuple(int(o) for o in self.obs))

    def __len__(self) -> int:
        return len(self.obs)


@dataclass(frozen=True)
class Run:
    symbol: int
    start: int  # 1-based tick of the first observation
    duration: int


@dataclass(frozen=True)
class SegmentedSequence:
    """Run-length view. gaps[0] is the leading gap, gaps[k] precedes run k, gaps[-1] trails."""

    runs: Tuple[Run, ...]
    gaps: Tuple[int, ...]
    total: int
    label: Optional[str] = None

    @property
    def interior_gaps(self) -> Tuple[int, ...]:
        """Gaps between two runs (excludes the leading and trailing gap)."""
        return self.gaps[1:-1] if len(self.runs) > 1 else ()

    @property
    def num_intervals(self) -> int:
        return sum(1 for g in self.interior_gaps if g > 0)


@dataclass(frozen=True)
class Dataset:
    table: SymbolTable
    sequences: Tuple[Sequence, ...]
    split: str = "train"

    @property
    def labels(self) -> List[str]:
        return sorted({s.label for s in self.sequences if s.label is not None})

    def by_label(self) -> Dict[str, List[Sequence]]:
        grouped: Dict[str, List[Sequence]] = {label: [] for label in self.labels}
        for seq in self.sequences:
            if seq.label is not None:
                grouped[seq.label].append(seq)
        return grouped

    def names(self, seq: Sequence) -> List[str]:
        return [self.table.name_of(o) for o in seq.obs]


def encode_sequence(raw: SequenceType[str], table: SymbolTable, label: Optional[str] = None) -> Sequence:
    """Map symbol names to ids, registering new names when the table is open."""
    if len(raw) == 0:
        raise EmptySequence("cannot encode an empty sequence")
    return Sequence(obs=tuple(table.id_of(name) for name in raw), label=label)


def segment_runs(seq: Sequence, interval_id: int = INTERVAL_ID) -> SegmentedSequence:
    """Split a sequence into maximal runs of identical non-interval symbols and the gaps between them."""
    runs: List[Run] = []
    gaps: List[int] = []
    gap = 0
    t = 0
    obs = seq.obs
    while t < len(obs):
        symbol = obs[t]
        if symbol == interval_id:
            gap += 1
            t += 1
            continue
        start = t
        while t < len(obs) and obs[t] == symbol:
            t += 1
        gaps.append(gap)
        runs.append(Run(symbol=symbol, start=start + 1, duration=t - start))
        gap = 0
    gaps.append(gap)
    return SegmentedSequence(runs=tuple(runs), gaps=tuple(gaps), total=len(obs), label=seq.label)


def desegment(seg: SegmentedSequence, table: Optional[SymbolTable] = None) -> Sequence:
    """Inverse of segment_runs: lay the runs out again with interval ticks in the gaps."""
    interval_id = table.interval_id if table is not None else INTERVAL_ID
    obs: List[int] = []
    for gap, run in zip(seg.gaps, seg.runs):
        obs.extend([interval_id] * gap)
        obs.extend([run.symbol] * run.duration)
    obs.extend([interval_id] * seg.gaps[-1])
    return Sequence(obs=tuple(obs), label=seg.label)


def symbol_transition_counts(sequences: Iterable[Sequence], mode: str = "filled",
                             interval_id: int = INTERVAL_ID) -> Counter:
    """Count run-to-run symbol transitions.

    mode="filled" treats every gap as a run of the interval symbol (the plain-state view),
    mode="bridged" links the runs on either side of a gap, mode="stripped" deletes the
    interval ticks first (adjacent equal runs then merge).
    """
    counts: Counter = Counter()
    for seq in sequences:
        if mode == "stripped":
            kept = tuple(o for o in seq.obs if o != interval_id)
            if not kept:
                continue
            symbols = [run.symbol for run in segment_runs(Sequence(kept), interval_id).runs]
        elif mode == "bridged":
            symbols = [run.symbol for run in segment_runs(seq, interval_id).runs]
        elif mode == "filled":
            symbols = []
            for i, o in enumerate(seq.obs):
                if i == 0 or o != seq.obs[i - 1]:
                    symbols.append(o)
        else:
            raise ValueError(f"unknown transition count mode '{mode}'")
        for prev, nxt in zip(symbols, symbols[1:]):
            counts[(prev, nxt)] += 1
    return counts


# ---------------------------------------------------------------------------
# Dataset files (JSON Lines, optional alphabet header)
# ---------------------------------------------------------------------------

def _parse_header(record: dict, line_no: int) -> Tuple[SymbolTable, Optional[str]]:
    alphabet = record.get("alphabet")
    if not isinstance(alphabet, list) or not all(isinstance(a, str) for a in alphabet):
        raise SchemaError("header 'alphabet' must be a list of strings", line_no)
    interval_symbol = record.get("interval_symbol", INTERVAL_SYMBOL)
    if not isinstance(interval_symbol, str):
        raise SchemaError("header 'interval_symbol' must be a string", line_no)
    reserved = {interval_symbol, START_SYMBOL, END_SYMBOL}
    table = SymbolTable([a for a in alphabet if a not in reserved], interval_symbol=interval_symbol,
                        frozen=True)
    return table, record.get("split")


def load_dataset(path: str, split: Optional[str] = None) -> Dataset:
    """Load a JSONL dataset. Without a header line the alphabet is inferred in order of appearance."""
    table: Optional[SymbolTable] = None
    file_split: Optional[str] = None
    raw_records: List[Tuple[int, dict]] = []

    with open(path, 'r') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"invalid JSON: {e.msg}", line_no)
            if not isinstance(record, dict):
                raise SchemaError("each line must be a JSON object", line_no)
            if "alphabet" in record:
                if table is not None or raw_records:
                    raise SchemaError("the alphabet header must be the first line", line_no)
                table, file_split = _parse_header(record, line_no)
                continue
            raw_records.append((line_no, record))

    if not raw_records:
        raise SchemaError(f"no sequences in {path}")

    builder = table if table is not None else SymbolTable()
    sequences = []
    for line_no, record in raw_records:
        label = record.get("label")
        obs = record.get("obs")
        if label is not None and not isinstance(label, str):
            raise SchemaError("'label' must be a string", line_no)
        if not isinstance(obs, list) or not all(isinstance(o, str) for o in obs):
            raise SchemaError("'obs' must be a list of symbol names", line_no)
        try:
            sequences.append(encode_sequence(obs, builder, label=label))
        except (EmptySequence, UnknownSymbol) as e:
            raise SchemaError(str(e), line_no)

    frozen = builder if builder.frozen else builder.freeze()
    logger.debug(f"Loaded {len(sequences)} sequences from {path}")
    return Dataset(table=frozen, sequences=tuple(sequences), split=split or file_split or "train")


def dataset_to_jsonl(dataset: Dataset) -> str:
    header = {
        "alphabet": list(dataset.table.symbols),
        "interval_symbol": dataset.table.interval_symbol,
        "split": dataset.split,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for seq in dataset.sequences:
        lines.append(json.dumps({"label": seq.label, "obs": dataset.names(seq)}, sort_keys=True))
    return "\n".join(lines) + "\n"


def save_dataset(dataset: Dataset, path: str) -> None:
    write_text_atomic(dataset_to_jsonl(dataset), path)


def reencode(dataset: Dataset, table: SymbolTable) -> Dataset:
    """Translate a dataset into another (frozen) alphabet, e.g. the one a model bank was trained on."""
    if dataset.table == table:
        return dataset
    sequences = tuple(encode_sequence(dataset.names(s), table, label=s.label) for s in dataset.sequences)
    return Dataset(table=table, sequences=sequences, split=dataset.split)
