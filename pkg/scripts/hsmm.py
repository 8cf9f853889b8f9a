"""
Baseline explicit-duration hidden semi-Markov model.

Transitions are defined between super states (state, duration); a state never
transitions to itself. Emissions of a duration-d segment are the product of
per-tick emissions b_j(o_t). Training is Baum-Welch (one re-estimation per
full pass over the batch), recognition picks the label whose model gives the
highest log-likelihood.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence as SequenceType, Tuple

import numpy as np

import lattice
from core import Sequence
from errors import DegenerateLattice, InvalidDims, LengthExceeded, ValidationError
from lattice import Lattice, Link, Segment, safe_log

logger = logging.getLogger(__name__)

KIND = "hsmm"

DEFAULT_EPSILON = 1e-4
DEFAULT_MAX_ITERS = 100
DEFAULT_MAX_DURATION = 10
DEFAULT_KAPPA = 1e-6

ROW_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    epsilon: float = DEFAULT_EPSILON
    max_iters: int = DEFAULT_MAX_ITERS
    seed: int = 0
    kappa: float = DEFAULT_KAPPA
    strict: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.kappa < 0:
            raise ValidationError(f"kappa must be >= 0, got {self.kappa}")


def _frozen_array(values, name: str) -> np.ndarray:
    try:
        array = np.array(values, dtype=float)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} is not a numeric array")
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} contains NaN or infinite values")
    if np.any(array < 0):
        raise ValidationError(f"{name} contains negative probabilities")
    array.setflags(write=False)
    return array


def check_rows(name: str, rows: np.ndarray, allow_empty: bool = False) -> None:
    """Every row sums to one (or, when allowed, is entirely zero)."""
    sums = rows.sum(axis=1)
    ok = np.abs(sums - 1.0) <= ROW_TOLERANCE
    if allow_empty:
        ok |= sums == 0.0
    if not np.all(ok):
        bad = int(np.flatnonzero(~ok)[0])
        raise ValidationError(f"{name} row {bad} sums to {sums[bad]!r}, expected 1")


@dataclass(frozen=True, eq=False)
class HsmmParams:
    """pi[j, d-1], A[i, d_i-1, j, d_j-1] (zero for j == i) and B[j, n]."""

    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        pi = _frozen_array(self.pi, "pi")
        A = _frozen_array(self.A, "A")
        B = _frozen_array(self.B, "B")
        if pi.ndim != 2 or B.ndim != 2 or A.ndim != 4:
            raise ValidationError("pi must be M x Dmax, A must be M x Dmax x M x Dmax, B must be M x N")
        num_states, max_duration = pi.shape
        if A.shape != (num_states, max_duration, num_states, max_duration) or B.shape[0] != num_states:
            raise ValidationError(
                f"inconsistent shapes: pi {pi.shape}, A {A.shape}, B {B.shape}")
        if num_states < 1 or max_duration < 1 or B.shape[1] < 1:
            raise InvalidDims(f"need M, N, Dmax >= 1, got pi {pi.shape}, B {B.shape}")
        for i in range(num_states):
            if np.any(A[i, :, i, :] != 0):
                raise ValidationError(f"A has a self transition for state {i}")
        check_rows("pi", pi.reshape(1, -1))
        check_rows("B", B)
        check_rows("A", A.reshape(num_states * max_duration, -1), allow_empty=num_states == 1)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def M(self) -> int:
        return self.pi.shape[0]

    @property
    def N(self) -> int:
        return self.B.shape[1]

    @property
    def Dmax(self) -> int:
        return self.pi.shape[1]

    @property
    def log_pi(self) -> np.ndarray:
        return safe_log(self.pi)

    @property
    def log_A(self) -> np.ndarray:
        return safe_log(self.A)

    @property
    def log_B(self) -> np.ndarray:
        return safe_log(self.B)

    def to_dict(self) -> Dict:
        return {"M": self.M, "N": self.N, "Dmax": self.Dmax,
                "pi": self.pi.tolist(), "A": self.A.tolist(), "B": self.B.tolist()}

    @classmethod
    def from_dict(cls, data: Dict) -> "HsmmParams":
        params = cls(pi=data["pi"], A=data["A"], B=data["B"])
        if (params.M, params.N, params.Dmax) != (data["M"], data["N"], data["Dmax"]):
            raise ValidationError("M/N/Dmax do not match the stored arrays")
        return params


@dataclass(frozen=True, eq=False)
class TrainedModel:
    label: Optional[str]
    kind: str
    params: object
    log_likelihood: float
    iterations: int
    history: Tuple[float, ...] = ()
    config: Dict = field(default_factory=dict)
    alphabet: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class Recognition:
    label: Optional[str]
    log_prob: float
    scores: Dict[str, float]
    all_zero: bool = False


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def normalize_rows(counts: np.ndarray, kappa: float, mask: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Add kappa to allowed cells of visited rows and renormalize; unvisited rows keep `previous`."""
    counts = counts * mask
    visited = counts.sum(axis=1) > 0
    smoothed = (counts + kappa) * mask
    totals = smoothed.sum(axis=1, keepdims=True)
    keep = ~(visited[:, None] & (totals > 0))
    normalized = np.divide(smoothed, totals, out=np.zeros_like(smoothed), where=totals > 0)
    return np.where(keep, previous, normalized)


def transition_mask(num_states: int, max_duration: int) -> np.ndarray:
    mask = np.ones((num_states, max_duration, num_states, max_duration))
    for i in range(num_states):
        mask[i, :, i, :] = 0.0
    return mask


def init_params(num_states: int, num_symbols: int, max_duration: int, seed: int = 0) -> HsmmParams:
    """Random row-normalized parameters, deterministic in seed."""
    if num_states < 1 or num_symbols < 1 or max_duration < 1:
        raise InvalidDims(f"need M, N, Dmax >= 1, got M={num_states}, N={num_symbols}, Dmax={max_duration}")
    rng = np.random.default_rng(seed)
    size = num_states * max_duration

    pi = rng.random((num_states, max_duration)) + 1e-3
    pi /= pi.sum()

    A = (rng.random((size, size)) + 1e-3) * transition_mask(num_states, max_duration).reshape(size, size)
    totals = A.sum(axis=1, keepdims=True)
    A = np.divide(A, totals, out=np.zeros_like(A), where=totals > 0)

    B = rng.random((num_states, num_symbols)) + 1e-3
    B /= B.sum(axis=1, keepdims=True)
    return HsmmParams(pi=pi, A=A.reshape(num_states, max_duration, num_states, max_duration), B=B)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def emission_block(params: HsmmParams, state: int, duration: int, window: SequenceType[int]) -> float:
    """log b_j(o_{t-d+1:t}) as the sum of per-tick log emissions."""
    if len(window) != duration:
        raise ValidationError(f"window has {len(window)} ticks, expected {duration}")
    return float(np.sum(params.log_B[state, list(window)]))


def check_run_lengths(obs: np.ndarray, max_duration: int, skip: Optional[int] = None) -> None:
    """Strict mode: refuse runs of one symbol longer than Dmax."""
    run = 0
    for t, o in enumerate(obs):
        run = run + 1 if t > 0 and o == obs[t - 1] else 1
        if run > max_duration and o != skip:
            raise LengthExceeded(f"run of symbol {int(o)} ending at tick {t + 1} is longer than Dmax={max_duration}")


def baseline_links(log_pi: np.ndarray, log_A: np.ndarray, length: int) -> Dict[int, Link]:
    links = {0: Link(start=0, weight=log_pi, key=("pi",))}
    for t in range(1, length):
        links[t] = Link(start=t, weight=log_A, source=t, key=("A",))
    return links


def _prepare(params: HsmmParams, seq, strict: bool) -> Tuple[np.ndarray, Dict[int, Link]]:
    obs = np.asarray(seq.obs if isinstance(seq, Sequence) else seq, dtype=int)
    if strict:
        check_run_lengths(obs, params.Dmax)
    table = lattice.emission_table(params.log_B, obs, params.Dmax)
    return table, baseline_links(params.log_pi, params.log_A, len(obs))


def infer(params: HsmmParams, seq, strict: bool = False) -> Lattice:
    table, links = _prepare(params, seq, strict)
    return lattice.infer(table, links, final=table.shape[0] - 1)


def forward(params: HsmmParams, seq, strict: bool = False) -> Tuple[np.ndarray, float]:
    table, links = _prepare(params, seq, strict)
    return lattice.forward(table, links, final=table.shape[0] - 1)


def backward(params: HsmmParams, seq, strict: bool = False) -> np.ndarray:
    table, links = _prepare(params, seq, strict)
    return lattice.backward(table, links, final=table.shape[0] - 1)


def viterbi(params: HsmmParams, seq, strict: bool = False) -> Tuple[List[Segment], float]:
    table, links = _prepare(params, seq, strict)
    return lattice.viterbi(table, links, final=table.shape[0] - 1)


def posterior_occupancy(params: HsmmParams, seq) -> np.ndarray:
    """Per-tick state posteriors, shape (T, M); each row sums to one when P(o) > 0."""
    return lattice.occupancy(infer(params, seq))[1:]


# ---------------------------------------------------------------------------
# Re-estimation and training
# ---------------------------------------------------------------------------

def collect_statistics(batch: Iterable[Tuple[np.ndarray, Lattice]], num_states: int,
                       num_symbols: int) -> Tuple[Dict[Tuple, np.ndarray], np.ndarray, int]:
    """Sum link posteriors and per-symbol emission posteriors over a batch of lattices."""
    link_counts: Dict[Tuple, np.ndarray] = {}
    emission_counts = np.zeros((num_states, num_symbols))
    used = 0
    for obs, lat in batch:
        if lat.log_prob == -np.inf:
            continue
        used += 1
        for key, value in lattice.expected_counts(lat).items():
            link_counts[key] = link_counts[key] + value if key in link_counts else value
        occ = lattice.occupancy(lat)[1:]
        emission_counts += occ.T @ np.eye(num_symbols)[obs]
    return link_counts, emission_counts, used


def reestimate(params: HsmmParams, batch: List[Tuple[np.ndarray, Lattice]],
               kappa: float = DEFAULT_KAPPA) -> HsmmParams:
    """One Baum-Welch update from lattices computed under `params`."""
    link_counts, emission_counts, used = collect_statistics(batch, params.M, params.N)
    if used == 0:
        raise DegenerateLattice("every sequence in the batch has zero likelihood")
    return update_base(params, link_counts, emission_counts, kappa)


def update_base(params: HsmmParams, link_counts: Dict[Tuple, np.ndarray], emission_counts: np.ndarray,
                kappa: float, emission_mask: Optional[np.ndarray] = None) -> HsmmParams:
    """Renormalize pi, A and B from expected counts."""
    M, N, D = params.M, params.N, params.Dmax
    pi_counts = link_counts.get(("pi",), np.zeros((M, D)))
    a_counts = link_counts.get(("A",), np.zeros((M, D, M, D)))
    if emission_mask is None:
        emission_mask = np.ones((M, N))

    pi = normalize_rows(pi_counts.reshape(1, -1), kappa, np.ones((1, M * D)), params.pi.reshape(1, -1))
    A = normalize_rows(a_counts.reshape(M * D, M * D), kappa,
                       transition_mask(M, D).reshape(M * D, M * D), params.A.reshape(M * D, M * D))
    B = normalize_rows(emission_counts, kappa, emission_mask, params.B)
    return HsmmParams(pi=pi.reshape(M, D), A=A.reshape(M, D, M, D), B=B)


def run_em(params, e_step: Callable, m_step: Callable, config: TrainConfig,
           label: Optional[str] = None, score: Optional[Callable] = None):
    """Shared EM loop: stop when the score gain drops below epsilon or after max_iters updates.

    Returns (params, history, iterations); history[k] is the score before update k+1.
    """
    history: List[float] = []
    iterations = 0
    for iteration in range(config.max_iters):
        batch = e_step(params)
        current = score(params, batch) if score else total_log_prob(batch)
        history.append(current)
        if iteration > 0:
            delta = current - history[-2]
            logger.debug(f"[{label}] iteration {iteration}: log-likelihood {current:.6f} (delta {delta:.3e})")
            if delta < config.epsilon:
                break
        params = m_step(params, batch)
        iterations += 1
    else:
        batch = e_step(params)
        history.append(score(params, batch) if score else total_log_prob(batch))
    return params, history, iterations


def total_log_prob(batch: Iterable[Tuple[np.ndarray, Lattice]]) -> float:
    values = [lat.log_prob for _, lat in batch if lat.log_prob > -np.inf]
    return float(np.sum(values)) if values else -np.inf


def train(sequences: SequenceType[Sequence], num_states: int, max_duration: int, num_symbols: int,
          config: TrainConfig = TrainConfig(), label: Optional[str] = None,
          initial_params: Optional[HsmmParams] = None) -> TrainedModel:
    """Baum-Welch training for one label."""
    if not sequences:
        raise ValidationError("training needs at least one sequence")
    obs_list = [np.asarray(s.obs, dtype=int) for s in sequences]
    if config.strict:
        for obs in obs_list:
            check_run_lengths(obs, max_duration)
    params = initial_params or init_params(num_states, num_symbols, max_duration, config.seed)

    def e_step(p):
        return [(obs, infer(p, obs)) for obs in obs_list]

    def m_step(p, batch):
        return reestimate(p, batch, config.kappa)

    params, history, iterations = run_em(params, e_step, m_step, config, label=label)
    logger.info(f"Trained {KIND} model for label {label}: log-likelihood {history[-1]:.4f} "
                f"after {iterations} iterations")
    return TrainedModel(label=label, kind=KIND, params=params, log_likelihood=history[-1],
                        iterations=iterations, history=tuple(history),
                        config={"train": asdict(config), "states": num_states, "dmax": max_duration})


# ---------------------------------------------------------------------------
# Recognition and generation
# ---------------------------------------------------------------------------

def rank_scores(scores: Dict[str, float]) -> Recognition:
    """Arg-max over labels; ties (including all -inf) go to the lowest label."""
    if not scores:
        raise ValidationError("model bank is empty")
    best_label = None
    best_score = -np.inf
    for label in sorted(scores, key=lambda x: (x is None, x)):
        if best_label is None or scores[label] > best_score:
            best_label, best_score = label, scores[label]
    return Recognition(label=best_label, log_prob=best_score, scores=dict(scores),
                       all_zero=best_score == -np.inf)


def recognize(bank: SequenceType[TrainedModel], seq) -> Recognition:
    return rank_scores({model.label: forward(model.params, seq)[1] for model in bank})


def choose(weights: np.ndarray, mode: str, rng: np.random.Generator) -> int:
    if mode == "most-likely":
        return int(np.argmax(weights))
    if mode == "sampled":
        return int(rng.choice(len(weights), p=weights / weights.sum()))
    raise ValidationError(f"unknown generation mode '{mode}'")


def emit(B_row: np.ndarray, duration: int, mode: str, rng: np.random.Generator) -> List[int]:
    if mode == "most-likely":
        return [int(np.argmax(B_row))] * duration
    return [choose(B_row, mode, rng) for _ in range(duration)]


def next_segment(row: np.ndarray, current: Tuple[int, int], mode: str, rng: np.random.Generator) -> Tuple[int, int]:
    """Draw the successor super state; a state without outgoing mass repeats itself."""
    flat = row.reshape(-1)
    if flat.sum() <= 0:
        return current
    return divmod(choose(flat, mode, rng), row.shape[1])


def generate(model, length: int, mode: str = "most-likely", seed: int = 0) -> Sequence:
    """Most-likely mode follows the greedy arg-max chain; sampled mode draws ancestrally."""
    params: HsmmParams = model.params if isinstance(model, TrainedModel) else model
    label = model.label if isinstance(model, TrainedModel) else None
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = np.random.default_rng(seed)
    state, d_index = divmod(choose(params.pi.reshape(-1), mode, rng), params.Dmax)
    obs: List[int] = []
    while len(obs) < length:
        obs.extend(emit(params.B[state], d_index + 1, mode, rng))
        state, d_index = next_segment(params.A[state, d_index], (state, d_index), mode, rng)
    return Sequence(obs=tuple(obs[:length]), label=label)
