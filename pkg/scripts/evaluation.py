"""
Experiment harness: recognition metrics, reproducibility, timing and model comparison.
"""

import logging
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence as SequenceType, Tuple

import numpy as np
from scipy.stats import spearmanr

import models
from core import Dataset, Sequence, segment_runs
from datagen import GenProfile, synth_dataset
from errors import HsmmError, ValidationError
from hsmm import TrainConfig, TrainedModel
from models import KINDS, ModelSpec
from utils import write_csv_output, write_text_atomic

logger = logging.getLogger(__name__)

DEFAULT_REPETITIONS = 5
DEFAULT_MAX_INTERVALS = 8
TIMING_RUNS = 3

METRICS_HEADER = ("kind", "states", "label", "precision", "recall", "f")
REPRO_HEADER = ("kind", "num_intervals", "r")
TIMES_HEADER = ("kind", "n", "phase", "seconds")


@dataclass(frozen=True)
class LabelMetrics:
    label: str
    tp: int
    pp: int
    ap: int
    precision: float
    recall: float
    f: float


@dataclass(frozen=True)
class MetricsReport:
    kind: str
    states: int
    per_label: Tuple[LabelMetrics, ...]
    precision: float
    recall: float
    f: float


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def confusion_metrics(predictions: Iterable[Tuple[str, Optional[str]]], kind: str = "",
                      states: int = 0) -> MetricsReport:
    """Per-label precision = TP/PP, recall = TP/AP and their macro average over the true labels."""
    pairs = list(predictions)
    if not pairs:
        raise ValidationError("no predictions to score")
    labels = sorted({true for true, _ in pairs})
    per_label = []
    for label in labels:
        tp = sum(1 for true, pred in pairs if true == label and pred == label)
        pp = sum(1 for _, pred in pairs if pred == label)
        ap = sum(1 for true, _ in pairs if true == label)
        precision = tp / pp if pp else 0.0
        recall = tp / ap
        per_label.append(LabelMetrics(label, tp, pp, ap, precision, recall, f_measure(precision, recall)))
    return MetricsReport(
        kind=kind,
        states=states,
        per_label=tuple(per_label),
        precision=float(np.mean([m.precision for m in per_label])),
        recall=float(np.mean([m.recall for m in per_label])),
        f=float(np.mean([m.f for m in per_label])),
    )


def average_reports(reports: SequenceType[MetricsReport]) -> MetricsReport:
    """Mean of the metrics over repetitions; confusion counts are summed."""
    first = reports[0]
    per_label = []
    for k, label_metrics in enumerate(first.per_label):
        rows = [r.per_label[k] for r in reports]
        per_label.append(LabelMetrics(
            label=label_metrics.label,
            tp=sum(m.tp for m in rows),
            pp=sum(m.pp for m in rows),
            ap=sum(m.ap for m in rows),
            precision=float(np.mean([m.precision for m in rows])),
            recall=float(np.mean([m.recall for m in rows])),
            f=float(np.mean([m.f for m in rows])),
        ))
    return MetricsReport(kind=first.kind, states=first.states, per_label=tuple(per_label),
                         precision=float(np.mean([r.precision for r in reports])),
                         recall=float(np.mean([r.recall for r in reports])),
                         f=float(np.mean([r.f for r in reports])))


def recognize_dataset(bank: SequenceType[TrainedModel], dataset: Dataset) -> List[Tuple[Sequence, object]]:
    return [(seq, models.recognize_sequence(bank, seq)) for seq in dataset.sequences]


def evaluate_bank(bank: SequenceType[TrainedModel], dataset: Dataset, kind: str = "",
                  states: int = 0) -> MetricsReport:
    results = recognize_dataset(bank, dataset)
    return confusion_metrics([(seq.label, rec.label) for seq, rec in results], kind, states)


def reproducibility(model: TrainedModel, original: Sequence) -> float:
    """Fraction of ticks where the most-likely generated sequence matches the original."""
    generated = models.generate_sequence(model, len(original), mode="most-likely")
    matches = sum(1 for w, o in zip(generated.obs, original.obs) if w == o)
    return matches / len(original)


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

def _median_seconds(action, runs: int = TIMING_RUNS) -> float:
    timings = []
    for _ in range(runs):
        start = time.perf_counter()
        action()
        timings.append(time.perf_counter() - start)
    return statistics.median(timings)


def benchmark_time(kinds: SequenceType[str], sizes: SequenceType[int], profile: GenProfile,
                   spec: ModelSpec = ModelSpec(), config: TrainConfig = TrainConfig(),
                   runs: int = TIMING_RUNS) -> List[Tuple[str, int, str, float]]:
    """(kind, n, phase, seconds) rows, ordered by kind then n; train before recognize."""
    if list(sizes) != sorted(sizes):
        raise ValidationError("dataset sizes must be ascending")
    rows = []
    for kind in [k for k in KINDS if k in kinds]:
        kind_spec = replace(spec, kind=kind)
        for n in sizes:
            train_set, _ = synth_dataset(replace(profile, sequences_per_label=n))
            label = train_set.labels[0]
            sequences = train_set.by_label()[label]
            bank: List[TrainedModel] = []

            def train():
                bank[:] = [models.train_model(kind_spec, sequences, train_set.table, config, label)]

            train_seconds = _median_seconds(train, runs)
            recognize_seconds = _median_seconds(lambda: recognize_dataset(bank, train_set), runs)
            logger.info(f"{kind} n={n}: train {train_seconds:.3f}s, recognize {recognize_seconds:.3f}s")
            rows.append((kind, n, "train", train_seconds))
            rows.append((kind, n, "recognize", recognize_seconds))
    return rows


# ---------------------------------------------------------------------------
# Comparison sweeps
# ---------------------------------------------------------------------------

@dataclass
class ComparisonResult:
    reports: List[MetricsReport] = field(default_factory=list)
    repro: List[Tuple[str, int, float]] = field(default_factory=list)
    spearman: Dict[str, float] = field(default_factory=dict)
    failures: List[Tuple[str, int, str]] = field(default_factory=list)

    def mean_r(self, kind: str) -> float:
        values = [r for k, _, r in self.repro if k == kind]
        return float(np.mean(values)) if values else float("nan")


def repro_curve_rho(points: SequenceType[Tuple[int, float]]) -> float:
    """Spearman rank correlation of r against the interval count (nan for a flat curve)."""
    xs = [x for x, _ in points]
    ys = [y for _, y in points]
    if len(points) < 2 or len(set(ys)) < 2:
        return float("nan")
    return float(spearmanr(xs, ys)[0])


def bank_reproducibility(bank: SequenceType[TrainedModel], dataset: Dataset) -> float:
    by_label = {m.label: m for m in bank}
    values = [reproducibility(by_label[seq.label], seq) for seq in dataset.sequences if seq.label in by_label]
    return float(np.mean(values)) if values else 0.0


def run_comparison(profile: GenProfile, states_list: SequenceType[int], kinds: SequenceType[str],
                   spec: ModelSpec = ModelSpec(), config: TrainConfig = TrainConfig(),
                   repetitions: int = DEFAULT_REPETITIONS, max_intervals: Optional[int] = DEFAULT_MAX_INTERVALS,
                   jobs: int = 1) -> ComparisonResult:
    """Recognition metrics per (kind, states) and reproducibility per (kind, interval count).

    Repetition k uses profile seed + k and training seed + k. A cell whose training
    fails is recorded in `failures` and skipped.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    result = ComparisonResult()
    kinds = [k for k in KINDS if k in kinds]

    for kind in kinds:
        for states in states_list:
            cell_spec = replace(spec, kind=kind, states=states)
            reports = []
            try:
                for rep in range(repetitions):
                    train_set, test_set = synth_dataset(replace(profile, seed=profile.seed + rep))
                    bank = models.train_bank(train_set, cell_spec, replace(config, seed=config.seed + rep), jobs)
                    reports.append(evaluate_bank(bank, test_set, kind, states))
            except HsmmError as e:
                logger.warning(f"Skipping {kind} with {states} states: {e}")
                result.failures.append((kind, states, str(e)))
                continue
            report = average_reports(reports)
            logger.info(f"{kind} states={states}: macro f-measure {report.f:.3f}")
            result.reports.append(report)

    if max_intervals is None:
        return result
    sweep_profile = replace(profile, num_runs=max(profile.num_runs, max_intervals + 1), l_min=max(1, profile.l_min),
                            l_max=max(1, profile.l_max))
    states = states_list[0]
    for kind in kinds:
        cell_spec = replace(spec, kind=kind, states=states)
        points = []
        for num_intervals in range(max_intervals + 1):
            values = []
            try:
                for rep in range(repetitions):
                    train_set, _ = synth_dataset(replace(sweep_profile, num_intervals=num_intervals,
                                                         seed=profile.seed + rep))
                    bank = models.train_bank(train_set, cell_spec, replace(config, seed=config.seed + rep), jobs)
                    values.append(bank_reproducibility(bank, train_set))
            except HsmmError as e:
                logger.warning(f"Skipping {kind} reproducibility at {num_intervals} intervals: {e}")
                result.failures.append((kind, states, str(e)))
                continue
            r = float(np.mean(values))
            points.append((num_intervals, r))
            result.repro.append((kind, num_intervals, r))
        result.spearman[kind] = repro_curve_rho(points)
        logger.info(f"{kind}: mean r {result.mean_r(kind):.3f}, spearman rho {result.spearman[kind]:.3f}")
    return result


def repro_by_intervals(bank: SequenceType[TrainedModel], dataset: Dataset) -> List[Tuple[str, int, float]]:
    """Mean reproducibility of each sequence against its label's model, grouped by interval count."""
    by_label = {m.label: m for m in bank}
    grouped: Dict[int, List[float]] = {}
    for seq in dataset.sequences:
        model = by_label.get(seq.label)
        if model is None:
            continue
        grouped.setdefault(segment_runs(seq).num_intervals, []).append(reproducibility(model, seq))
    kind = bank[0].kind
    return [(kind, k, float(np.mean(grouped[k]))) for k in sorted(grouped)]


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def metrics_rows(reports: Iterable[MetricsReport]) -> List[Tuple]:
    rows = []
    for report in reports:
        for m in report.per_label:
            rows.append((report.kind, report.states, m.label, m.precision, m.recall, m.f))
        rows.append((report.kind, report.states, "macro", report.precision, report.recall, report.f))
    return rows


def write_metrics_csv(reports: Iterable[MetricsReport], path: str) -> None:
    write_csv_output(METRICS_HEADER, metrics_rows(reports), path)


def write_repro_csv(rows: Iterable[Tuple[str, int, float]], path: str) -> None:
    write_csv_output(REPRO_HEADER, [(k, n, float(r)) for k, n, r in rows], path)


def write_times_csv(rows: Iterable[Tuple[str, int, str, float]], path: str) -> None:
    write_csv_output(TIMES_HEADER, rows, path)


def write_gnuplot_table(rows: Iterable[Tuple[str, int, float]], path: str) -> None:
    """Whitespace columns: interval count, then r per kind ('?' marks a missing point)."""
    rows = list(rows)
    kinds = [k for k in KINDS if any(row[0] == k for row in rows)]
    values = {(k, n): r for k, n, r in rows}
    counts = sorted({n for _, n, _ in rows})
    lines = ["# num_intervals " + " ".join(kinds)]
    for n in counts:
        cells = [repr(values[(k, n)]) if (k, n) in values else "?" for k in kinds]
        lines.append(" ".join([str(n)] + cells))
    write_text_atomic("\n".join(lines) + "\n", path)
