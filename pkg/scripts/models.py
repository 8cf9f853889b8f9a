"""
Model kinds, model banks and their JSON files.

A bank holds one trained model per label, all over the same alphabet. The bank
file is a JSON array of model objects written in canonical form (sorted keys,
indent 2) so that a loaded bank re-serializes byte for byte.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence as SequenceType

import hsmm
import ilp_hsmm
import is_hsmm
from core import END_SYMBOL, INTERVAL_ID, START_SYMBOL, Dataset, Sequence, SymbolTable
from errors import SchemaError, ValidationError
from hsmm import HsmmParams, Recognition, TrainConfig, TrainedModel
from ilp_hsmm import IlpConfig, IlpParams
from is_hsmm import IsHsmmParams
from utils import dump_json, load_json_file, write_text_atomic

logger = logging.getLogger(__name__)

KINDS = (hsmm.KIND, is_hsmm.KIND, ilp_hsmm.KIND)
BASELINE_VIEWS = ("filled", "stripped")

DEFAULT_STATES = 5

PARAM_TYPES = {
    hsmm.KIND: HsmmParams,
    is_hsmm.KIND: IsHsmmParams,
    ilp_hsmm.KIND: IlpParams,
}


@dataclass(frozen=True)
class ModelSpec:
    """What to train: model kind and structure. `baseline_view` only affects plain HSMM."""

    kind: str = hsmm.KIND
    states: int = DEFAULT_STATES
    dmax: int = hsmm.DEFAULT_MAX_DURATION
    dmax_int: int = is_hsmm.DEFAULT_MAX_INTERVAL
    gap_spread: float = is_hsmm.DEFAULT_GAP_SPREAD
    ilp: IlpConfig = field(default_factory=IlpConfig)
    baseline_view: str = "filled"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown model kind '{self.kind}', expected one of {KINDS}")
        if self.baseline_view not in BASELINE_VIEWS:
            raise ValidationError(f"unknown baseline view '{self.baseline_view}'")
        if self.states < 1 or self.dmax < 1 or self.dmax_int < 1:
            raise ValidationError("states, dmax and dmax_int must be >= 1")
        if not 0.0 <= self.gap_spread <= 0.5:
            raise ValidationError(f"gap_spread must be in [0, 0.5], got {self.gap_spread}")


def _stripped(seq: Sequence, interval_id: int) -> Optional[Sequence]:
    kept = tuple(o for o in seq.obs if o != interval_id)
    return Sequence(obs=kept, label=seq.label) if kept else None


def train_model(spec: ModelSpec, sequences: SequenceType[Sequence], table: SymbolTable,
                config: TrainConfig = TrainConfig(), label: Optional[str] = None) -> TrainedModel:
    """Train one label's model of the requested kind."""
    num_symbols = len(table)
    if spec.kind == is_hsmm.KIND:
        model = is_hsmm.train_is(sequences, spec.states, spec.dmax, num_symbols, spec.dmax_int, config,
                                 label=label, interval_id=table.interval_id, gap_spread=spec.gap_spread)
    elif spec.kind == ilp_hsmm.KIND:
        model = ilp_hsmm.train_ilp(sequences, spec.states, spec.dmax, num_symbols, config, spec.ilp,
                                   label=label, interval_id=table.interval_id)
    else:
        if spec.baseline_view == "stripped":
            sequences = [s for s in (_stripped(seq, table.interval_id) for seq in sequences) if s is not None]
        model = hsmm.train(sequences, spec.states, spec.dmax, num_symbols, config, label=label)
        model = replace(model, config={**model.config, "baseline_view": spec.baseline_view})
    return replace(model, alphabet=table.symbols)


def _train_label(job) -> TrainedModel:
    spec, sequences, table, config, label = job
    logger.info(f"Training {spec.kind} for label {label} on {len(sequences)} sequences...")
    return train_model(spec, sequences, table, config, label)


def train_bank(dataset: Dataset, spec: ModelSpec, config: TrainConfig = TrainConfig(),
               jobs: int = 1) -> List[TrainedModel]:
    """One model per label, in label order regardless of how many worker processes run."""
    grouped = dataset.by_label()
    if not grouped:
        raise ValidationError("dataset has no labelled sequences")
    work = [(spec, grouped[label], dataset.table, config, label) for label in sorted(grouped)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_label, work))
    return [_train_label(job) for job in work]


def score_sequence(model: TrainedModel, seq: Sequence) -> float:
    """log P(seq | model) for HSMM kinds, the joint interval score for ILP-HSMM."""
    if model.kind == is_hsmm.KIND:
        return is_hsmm.forward_is(model.params, seq)[1]
    if model.kind == ilp_hsmm.KIND:
        return ilp_hsmm.score_ilp(model.params, seq)
    if model.config.get("baseline_view") == "stripped":
        stripped = _stripped(seq, INTERVAL_ID)
        if stripped is None:
            return 0.0
        seq = stripped
    return hsmm.forward(model.params, seq)[1]


def recognize_sequence(bank: SequenceType[TrainedModel], seq: Sequence) -> Recognition:
    return hsmm.rank_scores({model.label: score_sequence(model, seq) for model in bank})


def generate_sequence(model: TrainedModel, length: int, mode: str = "most-likely", seed: int = 0) -> Sequence:
    if model.kind == is_hsmm.KIND:
        return is_hsmm.generate_is(model, length, mode, seed)
    if model.kind == ilp_hsmm.KIND:
        return ilp_hsmm.generate_ilp(model, length, mode, seed)
    return hsmm.generate(model, length, mode, seed)


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def _float_or_neg_inf(value) -> float:
    return -math.inf if value is None else float(value)


def model_to_dict(model: TrainedModel) -> Dict:
    data = model.params.to_dict()
    data.update({
        "kind": model.kind,
        "label": model.label,
        "alphabet": list(model.alphabet) if model.alphabet is not None else None,
        "log_likelihood": _finite_or_none(model.log_likelihood),
        "iterations": model.iterations,
        "history": [_finite_or_none(v) for v in model.history],
        "config": model.config,
    })
    return data


def model_from_dict(data: Dict) -> TrainedModel:
    if not isinstance(data, dict):
        raise SchemaError("a model must be a JSON object")
    kind = data.get("kind")
    if kind not in PARAM_TYPES:
        raise SchemaError(f"unknown model kind {kind!r}")
    try:
        params = PARAM_TYPES[kind].from_dict(data)
        alphabet = data.get("alphabet")
        return TrainedModel(
            label=data.get("label"),
            kind=kind,
            params=params,
            log_likelihood=_float_or_neg_inf(data.get("log_likelihood")),
            iterations=int(data.get("iterations", 0)),
            history=tuple(_float_or_neg_inf(v) for v in data.get("history", [])),
            config=data.get("config", {}),
            alphabet=tuple(alphabet) if alphabet is not None else None,
        )
    except KeyError as e:
        raise SchemaError(f"model is missing field {e}")
    except TypeError as e:
        raise SchemaError(f"malformed model: {e}")


def save_model(model: TrainedModel, path: str) -> None:
    write_text_atomic(dump_json(model_to_dict(model)), path)


def load_model(path: str) -> TrainedModel:
    return model_from_dict(load_json_file(path))


def bank_to_json(bank: SequenceType[TrainedModel]) -> str:
    return dump_json([model_to_dict(m) for m in bank])


def save_bank(bank: SequenceType[TrainedModel], path: str) -> None:
    write_text_atomic(bank_to_json(bank), path)


def load_bank(path: str) -> List[TrainedModel]:
    data = load_json_file(path)
    if not isinstance(data, list) or not data:
        raise SchemaError("a model bank must be a non-empty JSON array")
    bank = []
    for index, entry in enumerate(data):
        try:
            bank.append(model_from_dict(entry))
        except SchemaError as e:
            raise SchemaError(f"model {index}: {e}")
    if len({m.alphabet for m in bank}) > 1:
        raise SchemaError("models in a bank must share one alphabet")
    logger.debug(f"Loaded {len(bank)} models from {path}")
    return bank


def bank_table(bank: SequenceType[TrainedModel]) -> SymbolTable:
    """Frozen symbol table the bank was trained on."""
    alphabet = bank[0].alphabet
    if alphabet is None:
        raise SchemaError("model bank has no alphabet")
    reserved = {alphabet[0], START_SYMBOL, END_SYMBOL}
    return SymbolTable([a for a in alphabet if a not in reserved], interval_symbol=alphabet[0], frozen=True)
