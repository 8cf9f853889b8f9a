#!/usr/bin/env python3
"""
Train and evaluate duration/interval-aware hidden semi-Markov models.

Subcommands:
- gen: synthesize train/test datasets from a generation profile
- train: train one model per label into a model bank
- recognize: label every sequence of a dataset with a model bank
- eval: precision/recall/f-measure from predictions (or bank + dataset)
- repro: reproducibility of a bank against a dataset, grouped by interval count
- bench: train/recognize wall time per model kind and dataset size
- compare: full comparison sweep (metrics, reproducibility curves, gnuplot table)

All outputs are written atomically. Errors are reported on stderr as
"error[CODE]: message"; the exit code is 2 for invalid input, 1 for runtime failures.
"""

import argparse
import logging
import os
import sys

import evaluation
import models
from core import load_dataset, reencode, save_dataset
from datagen import PRESETS, load_profile, synth_dataset
from errors import HsmmError, SchemaError
from hsmm import DEFAULT_EPSILON, DEFAULT_KAPPA, DEFAULT_MAX_DURATION, DEFAULT_MAX_ITERS, TrainConfig
from ilp_hsmm import DEFAULT_ATTENUATION, DEFAULT_DELTA_PT, DEFAULT_SIGMA_MIN, SCORE_MODES, IlpConfig
from is_hsmm import DEFAULT_GAP_SPREAD, DEFAULT_MAX_INTERVAL
from models import BASELINE_VIEWS, DEFAULT_STATES, KINDS, ModelSpec
from utils import read_csv_rows, write_csv_output

logger = logging.getLogger("hsmm_cli")

DEFAULT_OUTPUT_DIR = "results"
DEFAULT_BENCH_SIZES = "16,32"
DEFAULT_STATE_COUNTS = "5,10"


def _int_list(text: str):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    return values


def _kind_list(text: str):
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in KINDS]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown kind(s): {', '.join(unknown)}")
    return kinds


def train_config(args) -> TrainConfig:
    return TrainConfig(epsilon=args.epsilon, max_iters=args.max_iters, seed=args.seed or 0,
                       kappa=args.kappa, strict=args.strict)


def model_spec(args, kind: str = None) -> ModelSpec:
    ilp = IlpConfig(delta_pt=args.delta_pt, c=args.c, sigma_min=args.sigma_min, score_mode=args.score_mode)
    return ModelSpec(kind=kind or args.kind, states=args.states, dmax=args.dmax, dmax_int=args.dmax_int,
                     gap_spread=args.gap_spread, ilp=ilp, baseline_view=args.baseline_view)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> None:
    profile = load_profile(args.profile, seed=args.seed)
    print(f"Generating datasets from profile '{args.profile}'...")
    train_set, test_set = synth_dataset(profile)
    train_path = os.path.join(args.out_dir, "train.jsonl")
    test_path = os.path.join(args.out_dir, "test.jsonl")
    save_dataset(train_set, train_path)
    save_dataset(test_set, test_path)
    print(f"\nDone! Generated {train_path} and {test_path}")
    print(f"Labels: {len(train_set.labels)}, sequences per split: {len(train_set.sequences)}")


def cmd_train(args) -> None:
    dataset = load_dataset(args.dataset)
    spec = model_spec(args)
    config = train_config(args)
    print(f"Training {spec.kind} models ({spec.states} states, Dmax={spec.dmax}) "
          f"for {len(dataset.labels)} labels...")
    bank = models.train_bank(dataset, spec, config, jobs=args.jobs)
    models.save_bank(bank, args.out)
    if args.train_log:
        rows = []
        for model in bank:
            previous = None
            for iteration, value in enumerate(model.history):
                delta = "" if previous is None else value - previous
                rows.append((model.label, iteration, value, delta))
                previous = value
        write_csv_output(("label", "iteration", "log_likelihood", "delta"), rows, args.train_log)
    print(f"\nDone! Generated {args.out}")
    for model in bank:
        print(f"  - {model.label}: log-likelihood={model.log_likelihood:.4f} ({model.iterations} iterations)")


def _bank_and_dataset(args):
    bank = models.load_bank(args.bank)
    dataset = reencode(load_dataset(args.dataset), models.bank_table(bank))
    return bank, dataset


def cmd_recognize(args) -> None:
    bank, dataset = _bank_and_dataset(args)
    labels = [m.label for m in bank]
    print(f"Recognizing {len(dataset.sequences)} sequences with {len(bank)} {bank[0].kind} models...")
    header = ["index", "kind", "states", "true", "predicted", "log_prob", "all_zero"] + \
        [f"score:{label}" for label in labels]
    states = bank[0].params.M
    rows = []
    for index, (seq, rec) in enumerate(evaluation.recognize_dataset(bank, dataset)):
        rows.append([index, bank[0].kind, states, seq.label or "", rec.label, float(rec.log_prob),
                     int(rec.all_zero)] + [float(rec.scores[label]) for label in labels])
    write_csv_output(header, rows, args.out)
    correct = sum(1 for row in rows if row[3] == row[4])
    print(f"\nDone! Generated {args.out}")
    print(f"Correct: {correct}/{len(rows)}")


def cmd_eval(args) -> None:
    if args.predictions:
        rows = read_csv_rows(args.predictions)
        if not rows or not {"true", "predicted"} <= set(rows[0]):
            raise SchemaError(f"{args.predictions} has no true/predicted columns")
        kind = rows[0].get("kind", "")
        states = int(rows[0].get("states") or 0)
        report = evaluation.confusion_metrics([(r["true"], r["predicted"]) for r in rows], kind, states)
    elif args.bank and args.dataset:
        bank, dataset = _bank_and_dataset(args)
        report = evaluation.evaluate_bank(bank, dataset, bank[0].kind, bank[0].params.M)
    else:
        raise SchemaError("eval needs --predictions or both --bank and --dataset")
    evaluation.write_metrics_csv([report], args.out)
    print(f"\nDone! Generated {args.out}")
    print(f"Macro precision={report.precision:.4f} recall={report.recall:.4f} f={report.f:.4f}")


def cmd_repro(args) -> None:
    bank, dataset = _bank_and_dataset(args)
    rows = evaluation.repro_by_intervals(bank, dataset)
    evaluation.write_repro_csv(rows, args.out)
    print(f"\nDone! Generated {args.out}")
    for kind, num_intervals, r in rows:
        print(f"  - {kind}, {num_intervals} intervals: r={r:.4f}")


def cmd_bench(args) -> None:
    profile = load_profile(args.profile, seed=args.seed)
    spec = model_spec(args, kind=KINDS[0])
    rows = evaluation.benchmark_time(args.kinds, args.sizes, profile, spec, train_config(args))
    evaluation.write_times_csv(rows, args.out)
    print(f"\nDone! Generated {args.out}")
    for kind, n, phase, seconds in rows:
        print(f"  - {kind} n={n} {phase}: {seconds:.3f}s")


def cmd_compare(args) -> None:
    profile = load_profile(args.profile, seed=args.seed)
    spec = model_spec(args, kind=KINDS[0])
    print(f"Comparing {', '.join(args.kinds)} on profile '{args.profile}'...")
    result = evaluation.run_comparison(profile, args.states_list, args.kinds, spec, train_config(args),
                                       repetitions=args.repetitions, max_intervals=args.max_intervals,
                                       jobs=args.jobs)
    metrics_path = os.path.join(args.out_dir, "metrics.csv")
    repro_path = os.path.join(args.out_dir, "repro.csv")
    plot_path = os.path.join(args.out_dir, "repro.dat")
    evaluation.write_metrics_csv(result.reports, metrics_path)
    evaluation.write_repro_csv(result.repro, repro_path)
    evaluation.write_gnuplot_table(result.repro, plot_path)
    print(f"\nDone! Generated {metrics_path}, {repro_path} and {plot_path}")
    for report in result.reports:
        print(f"  - {report.kind} ({report.states} states): f={report.f:.4f}")
    for kind, rho in result.spearman.items():
        print(f"  - {kind}: mean r={result.mean_r(kind):.4f}, spearman rho={rho:.4f}")
    if result.failures:
        print(f"\nFailed cells: {len(result.failures)}")
        for kind, states, message in result.failures:
            print(f"  - {kind} ({states} states): {message}")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_model_arguments(parser: argparse.ArgumentParser, with_kind: bool = True) -> None:
    if with_kind:
        parser.add_argument("--kind", choices=KINDS, default=KINDS[0],
                            help=f"Model kind (default: {KINDS[0]})")
    parser.add_argument("--states", type=int, default=DEFAULT_STATES,
                        help=f"Number of hidden states M (default: {DEFAULT_STATES})")
    parser.add_argument("--dmax", type=int, default=DEFAULT_MAX_DURATION,
                        help=f"Maximum state duration (default: {DEFAULT_MAX_DURATION})")
    parser.add_argument("--dmax-int", type=int, default=DEFAULT_MAX_INTERVAL,
                        help=f"Interval bucket cap for is-hsmm (default: {DEFAULT_MAX_INTERVAL})")
    parser.add_argument("--gap-spread", type=float, default=DEFAULT_GAP_SPREAD,
                        help=f"is-hsmm gap mass leaked to each neighboring bucket (default: {DEFAULT_GAP_SPREAD})")
    parser.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON,
                        help=f"EM convergence threshold (default: {DEFAULT_EPSILON})")
    parser.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS,
                        help=f"Maximum EM iterations (default: {DEFAULT_MAX_ITERS})")
    parser.add_argument("--kappa", type=float, default=DEFAULT_KAPPA,
                        help=f"Count smoothing added before normalization (default: {DEFAULT_KAPPA})")
    parser.add_argument("--strict", action="store_true",
                        help="Reject runs longer than --dmax instead of scoring them")
    parser.add_argument("--baseline-view", choices=BASELINE_VIEWS, default="filled",
                        help="How plain hsmm sees interval ticks (default: filled)")
    parser.add_argument("--delta-pt", type=float, default=DEFAULT_DELTA_PT,
                        help=f"ilp-hsmm density truncation threshold (default: {DEFAULT_DELTA_PT})")
    parser.add_argument("--c", type=float, default=DEFAULT_ATTENUATION,
                        help=f"ilp-hsmm out-of-range attenuation (default: {DEFAULT_ATTENUATION})")
    parser.add_argument("--sigma-min", type=float, default=DEFAULT_SIGMA_MIN,
                        help=f"ilp-hsmm minimum gap stdev (default: {DEFAULT_SIGMA_MIN})")
    parser.add_argument("--score-mode", choices=SCORE_MODES, default=SCORE_MODES[0],
                        help=f"ilp-hsmm recognition score (default: {SCORE_MODES[0]})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Duration and interval aware HSMM toolkit"
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="Seed for generation and training (default: profile seed / 0)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="Worker processes for per-label training (default: 1)")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="Logging level (default: INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate train/test datasets")
    gen.add_argument("--profile", default="separable",
                     help=f"Preset ({', '.join(PRESETS)}) or JSON profile file (default: separable)")
    gen.add_argument("--out-dir", default=DEFAULT_OUTPUT_DIR,
                     help=f"Directory for train.jsonl and test.jsonl (default: {DEFAULT_OUTPUT_DIR})")
    gen.set_defaults(func=cmd_gen)

    train = sub.add_parser("train", help="Train a model bank")
    train.add_argument("--dataset", required=True, help="Training dataset (JSONL)")
    train.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "bank.json"),
                       help="Model bank output path (default: results/bank.json)")
    train.add_argument("--train-log", help="Optional CSV of per-iteration log-likelihoods")
    _add_model_arguments(train)
    train.set_defaults(func=cmd_train)

    recognize = sub.add_parser("recognize", help="Recognize a dataset with a model bank")
    recognize.add_argument("--bank", required=True, help="Model bank (JSON)")
    recognize.add_argument("--dataset", required=True, help="Dataset to label (JSONL)")
    recognize.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "predictions.csv"),
                           help="Predictions CSV (default: results/predictions.csv)")
    recognize.set_defaults(func=cmd_recognize)

    ev = sub.add_parser("eval", help="Compute recognition metrics")
    ev.add_argument("--predictions", help="Predictions CSV from 'recognize'")
    ev.add_argument("--bank", help="Model bank, used with --dataset instead of --predictions")
    ev.add_argument("--dataset", help="Labelled dataset, used with --bank")
    ev.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "metrics.csv"),
                    help="Metrics CSV (default: results/metrics.csv)")
    ev.set_defaults(func=cmd_eval)

    repro = sub.add_parser("repro", help="Reproducibility of a bank against a dataset")
    repro.add_argument("--bank", required=True, help="Model bank (JSON)")
    repro.add_argument("--dataset", required=True, help="Labelled dataset (JSONL)")
    repro.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "repro.csv"),
                       help="Reproducibility CSV (default: results/repro.csv)")
    repro.set_defaults(func=cmd_repro)

    bench = sub.add_parser("bench", help="Time training and recognition")
    bench.add_argument("--profile", default="timing", help="Preset or JSON profile file (default: timing)")
    bench.add_argument("--sizes", type=_int_list, default=_int_list(DEFAULT_BENCH_SIZES),
                       help=f"Comma-separated training-set sizes (default: {DEFAULT_BENCH_SIZES})")
    bench.add_argument("--kinds", type=_kind_list, default=list(KINDS),
                       help=f"Comma-separated model kinds (default: {','.join(KINDS)})")
    bench.add_argument("--out", default=os.path.join(DEFAULT_OUTPUT_DIR, "times.csv"),
                       help="Timing CSV (default: results/times.csv)")
    _add_model_arguments(bench, with_kind=False)
    bench.set_defaults(func=cmd_bench)

    compare = sub.add_parser("compare", help="Compare model kinds on a generated profile")
    compare.add_argument("--profile", default="interval-signature",
                         help="Preset or JSON profile file (default: interval-signature)")
    compare.add_argument("--kinds", type=_kind_list, default=list(KINDS),
                         help=f"Comma-separated model kinds (default: {','.join(KINDS)})")
    compare.add_argument("--states-list", type=_int_list, default=_int_list(DEFAULT_STATE_COUNTS),
                         help=f"Comma-separated state counts (default: {DEFAULT_STATE_COUNTS})")
    compare.add_argument("--repetitions", type=int, default=evaluation.DEFAULT_REPETITIONS,
                         help=f"Repetitions averaged per cell (default: {evaluation.DEFAULT_REPETITIONS})")
    compare.add_argument("--max-intervals", type=int, default=evaluation.DEFAULT_MAX_INTERVALS,
                         help=f"Largest interval count in the reproducibility sweep "
                              f"(default: {evaluation.DEFAULT_MAX_INTERVALS})")
    compare.add_argument("--out-dir", default=DEFAULT_OUTPUT_DIR,
                         help=f"Directory for metrics.csv, repro.csv, repro.dat (default: {DEFAULT_OUTPUT_DIR})")
    _add_model_arguments(compare, with_kind=False)
    compare.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logger.debug(f"Running '{args.command}' with seed={args.seed}, jobs={args.jobs}")
    try:
        args.func(args)
    except HsmmError as e:
        print(f"error[{e.code}]: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error[IO]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
