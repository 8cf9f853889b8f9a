"""
Interval-State HSMM.

Gaps of interval ticks are handled by a dedicated interval node. Ordinary
states never emit the interval symbol; when a gap separates two segments the
transition out of the gap is conditioned on the ordinary state (and duration)
before the gap and on the gap length bucket: A2[i, d_i-1, b, j, d_j-1].
Sequences that start with a gap use the A2_start rows in place of pi.

A bridge also scores the length of its gap. gap_length[i, d_i-1, :] is a
distribution over buckets for gaps that follow segment (i, d_i); each bucket
leaks `gap_spread` of its mass to each neighbor, so a gap one tick off the
trained lengths is not scored as unseen. The factor only appears on bridges,
so a sequence without intervals scores exactly as under the base HSMM.

gap_stats[i, d_i-1, k] (k = 0 for "no gap", k = b+1 for bucket b) records how
often each segment is followed by a gap; it is learned from the same
posteriors and only used to generate sequences.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np

import hsmm
import lattice
from core import INTERVAL_ID, Sequence
from errors import DegenerateLattice, InvalidDims, ValidationError
from hsmm import HsmmParams, Recognition, TrainConfig, TrainedModel
from lattice import Lattice, Link, safe_log

logger = logging.getLogger(__name__)

KIND = "is-hsmm"

DEFAULT_MAX_INTERVAL = 10
DEFAULT_GAP_SPREAD = 0.25


def bucket_of(gap: int, max_interval: int) -> int:
    """Buckets 0..K-2 hold gaps 1..K-1 exactly; bucket K-1 holds every gap >= K."""
    return min(gap, max_interval) - 1


def spread_kernel(max_interval: int, spread: float) -> np.ndarray:
    """Row b0: where a gap of bucket b0 is observed. Mass leaking past either end stays on b0."""
    K = max_interval
    kernel = np.eye(K) * (1.0 - 2.0 * spread)
    idx = np.arange(K - 1)
    kernel[idx, idx + 1] += spread
    kernel[idx + 1, idx] += spread
    kernel[0, 0] += spread
    kernel[K - 1, K - 1] += spread
    return kernel


@dataclass(frozen=True, eq=False)
class IsHsmmParams:
    base: HsmmParams
    A2: np.ndarray
    A2_start: np.ndarray
    gap_stats: np.ndarray
    interval_id: int = INTERVAL_ID
    # uniform when omitted
    gap_length: Optional[np.ndarray] = None
    gap_spread: float = DEFAULT_GAP_SPREAD

    def __post_init__(self):
        M, D = self.base.M, self.base.Dmax
        A2 = hsmm._frozen_array(self.A2, "A2")
        A2_start = hsmm._frozen_array(self.A2_start, "A2_start")
        gap_stats = hsmm._frozen_array(self.gap_stats, "gap_stats")
        if A2.ndim != 5 or A2.shape[:2] != (M, D) or A2.shape[3:] != (M, D) or A2.shape[2] < 1:
            raise ValidationError(f"A2 must be M x Dmax x Dmax_int x M x Dmax, got {A2.shape}")
        K = A2.shape[2]
        if A2_start.shape != (K, M, D):
            raise ValidationError(f"A2_start must be Dmax_int x M x Dmax, got {A2_start.shape}")
        if gap_stats.shape != (M, D, K + 1):
            raise ValidationError(f"gap_stats must be M x Dmax x (Dmax_int + 1), got {gap_stats.shape}")
        if self.gap_length is None:
            gap_length = hsmm._frozen_array(np.full((M, D, K), 1.0 / K), "gap_length")
        else:
            gap_length = hsmm._frozen_array(self.gap_length, "gap_length")
        if gap_length.shape != (M, D, K):
            raise ValidationError(f"gap_length must be M x Dmax x Dmax_int, got {gap_length.shape}")
        if not 0.0 <= self.gap_spread <= 0.5:
            raise ValidationError(f"gap_spread must be in [0, 0.5], got {self.gap_spread}")
        if not 0 <= self.interval_id < self.base.N:
            raise ValidationError(f"interval id {self.interval_id} outside the alphabet")
        if np.any(self.base.B[:, self.interval_id] != 0):
            raise ValidationError("ordinary states must not emit the interval symbol")
        for i in range(M):
            if np.any(A2[i, :, :, i, :] != 0):
                raise ValidationError(f"A2 bridges state {i} back to itself")
        hsmm.check_rows("A2", A2.reshape(M * D * K, M * D), allow_empty=M == 1)
        hsmm.check_rows("A2_start", A2_start.reshape(K, M * D))
        hsmm.check_rows("gap_stats", gap_stats.reshape(M * D, K + 1))
        hsmm.check_rows("gap_length", gap_length.reshape(M * D, K))
        object.__setattr__(self, "A2", A2)
        object.__setattr__(self, "A2_start", A2_start)
        object.__setattr__(self, "gap_stats", gap_stats)
        object.__setattr__(self, "gap_length", gap_length)

    @property
    def gap_probs(self) -> np.ndarray:
        """P(observed bucket | segment before the gap), M x Dmax x Dmax_int."""
        return self.gap_length @ spread_kernel(self.Dmax_int, self.gap_spread)

    @property
    def M(self) -> int:
        return self.base.M

    @property
    def N(self) -> int:
        return self.base.N

    @property
    def Dmax(self) -> int:
        return self.base.Dmax

    @property
    def Dmax_int(self) -> int:
        return self.A2.shape[2]

    def to_dict(self) -> Dict:
        data = self.base.to_dict()
        data.update({"A2": self.A2.tolist(), "A2_start": self.A2_start.tolist(),
                     "gap_stats": self.gap_stats.tolist(), "gap_length": self.gap_length.tolist(),
                     "gap_spread": self.gap_spread, "Dmax_int": self.Dmax_int})
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "IsHsmmParams":
        params = cls(base=HsmmParams.from_dict(data), A2=data["A2"], A2_start=data["A2_start"],
                     gap_stats=data["gap_stats"], gap_length=data.get("gap_length"),
                     gap_spread=data.get("gap_spread", DEFAULT_GAP_SPREAD))
        if params.Dmax_int != data["Dmax_int"]:
            raise ValidationError("Dmax_int does not match the stored A2")
        return params


def _normalized(values: np.ndarray, rows: int) -> np.ndarray:
    flat = values.reshape(rows, -1)
    totals = flat.sum(axis=1, keepdims=True)
    return np.divide(flat, totals, out=np.zeros_like(flat), where=totals > 0).reshape(values.shape)


def init_is_params(num_states: int, num_symbols: int, max_duration: int,
                   max_interval: int = DEFAULT_MAX_INTERVAL, seed: int = 0,
                   interval_id: int = INTERVAL_ID, gap_spread: float = DEFAULT_GAP_SPREAD) -> IsHsmmParams:
    """Baseline initialization with the interval column removed, plus random bridge rows."""
    if max_interval < 1:
        raise InvalidDims(f"Dmax_int must be >= 1, got {max_interval}")
    if num_symbols < 2:
        raise InvalidDims("the alphabet needs at least one symbol besides the interval symbol")
    base = hsmm.init_params(num_states, num_symbols, max_duration, seed)
    B = np.array(base.B)
    B[:, interval_id] = 0.0
    B /= B.sum(axis=1, keepdims=True)
    base = HsmmParams(pi=base.pi, A=base.A, B=B)

    M, D, K = num_states, max_duration, max_interval
    rng = np.random.default_rng([seed, 1])
    mask = hsmm.transition_mask(M, D)[:, :, None, :, :]
    A2 = (rng.random((M, D, K, M, D)) + 1e-3) * mask
    A2_start = rng.random((K, M, D)) + 1e-3
    gap_stats = np.full((M, D, K + 1), 1.0 / (K + 1))
    return IsHsmmParams(base=base, A2=_normalized(A2, M * D * K), A2_start=_normalized(A2_start, K),
                        gap_stats=gap_stats, interval_id=interval_id, gap_spread=gap_spread)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------

def interval_runs(obs: np.ndarray, interval_id: int) -> List[Tuple[int, int]]:
    """Maximal runs of interval ticks as 1-based (first, last) tick pairs."""
    runs = []
    t = 0
    while t < len(obs):
        if obs[t] == interval_id:
            first = t
            while t < len(obs) and obs[t] == interval_id:
                t += 1
            runs.append((first + 1, t))
        else:
            t += 1
    return runs


def bridge_links(params: IsHsmmParams, obs: np.ndarray) -> Tuple[Dict[int, Link], int]:
    """Links for the interval-state lattice and the final boundary."""
    length = len(obs)
    base = params.base
    log_A, log_A2, log_A2_start = base.log_A, safe_log(params.A2), safe_log(params.A2_start)
    log_gap = safe_log(params.gap_probs)
    interval = params.interval_id
    links: Dict[int, Link] = {}

    gaps = interval_runs(obs, interval)
    leading = gaps[0] if gaps and gaps[0][0] == 1 else None
    if leading is None:
        links[0] = Link(start=0, weight=base.log_pi, key=("pi",))
    elif leading[1] < length:
        b = bucket_of(leading[1], params.Dmax_int)
        links[leading[1]] = Link(start=leading[1], weight=log_A2_start[b], key=("A2_start", b))

    for t in range(1, length):
        if obs[t - 1] != interval and obs[t] != interval:
            links[t] = Link(start=t, weight=log_A, source=t, key=("A",))

    for first, last in gaps:
        if first > 1 and last < length:
            b = bucket_of(last - first + 1, params.Dmax_int)
            weight = log_A2[:, :, b] + log_gap[:, :, b, None, None]
            links[last] = Link(start=last, weight=weight, source=first - 1, key=("A2", b))

    if obs[-1] != interval:
        final = length
    else:
        final = gaps[-1][0] - 1
    return links, final


def _prepare(params: IsHsmmParams, seq, strict: bool):
    obs = np.asarray(seq.obs if isinstance(seq, Sequence) else seq, dtype=int)
    if strict:
        hsmm.check_run_lengths(obs, params.Dmax, skip=params.interval_id)
    table = lattice.emission_table(params.base.log_B, obs, params.Dmax)
    links, final = bridge_links(params, obs)
    return table, links, final


def infer_is(params: IsHsmmParams, seq, strict: bool = False) -> Lattice:
    return lattice.infer(*_prepare(params, seq, strict))


def forward_is(params: IsHsmmParams, seq, strict: bool = False) -> Tuple[np.ndarray, float]:
    return lattice.forward(*_prepare(params, seq, strict))


def backward_is(params: IsHsmmParams, seq, strict: bool = False) -> np.ndarray:
    return lattice.backward(*_prepare(params, seq, strict))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def reestimate_is(params: IsHsmmParams, batch: List[Tuple[np.ndarray, Lattice]],
                  kappa: float = hsmm.DEFAULT_KAPPA) -> IsHsmmParams:
    """Base A from plain boundaries, A2 from bridged ones, B without the interval column."""
    M, N, D, K = params.M, params.N, params.Dmax, params.Dmax_int
    link_counts, emission_counts, used = hsmm.collect_statistics(batch, M, N)
    if used == 0:
        raise DegenerateLattice("every sequence in the batch has zero likelihood")

    emission_mask = np.ones((M, N))
    emission_mask[:, params.interval_id] = 0.0
    base = hsmm.update_base(params.base, link_counts, emission_counts, kappa, emission_mask)

    a2_counts = np.zeros((M, D, K, M, D))
    start_counts = np.zeros((K, M, D))
    gap_counts = np.zeros((M, D, K + 1))
    for key, value in link_counts.items():
        if key[0] == "A2":
            a2_counts[:, :, key[1]] += value
            gap_counts[:, :, key[1] + 1] += value.sum(axis=(2, 3))
        elif key[0] == "A2_start":
            start_counts[key[1]] += value
        elif key[0] == "A":
            gap_counts[:, :, 0] += value.sum(axis=(2, 3))

    bridge_mask = np.broadcast_to(hsmm.transition_mask(M, D)[:, :, None, :, :], (M, D, K, M, D))
    A2 = hsmm.normalize_rows(a2_counts.reshape(M * D * K, M * D), kappa,
                             bridge_mask.reshape(M * D * K, M * D), _bridge_fallback(params.A2, a2_counts))
    A2_start = hsmm.normalize_rows(start_counts.reshape(K, M * D), kappa, np.ones((K, M * D)),
                                   params.A2_start.reshape(K, M * D))
    gap_stats = hsmm.normalize_rows(gap_counts.reshape(M * D, K + 1), kappa, np.ones((M * D, K + 1)),
                                    params.gap_stats.reshape(M * D, K + 1))
    gap_length = hsmm.normalize_rows(_latent_bucket_counts(params, gap_counts[:, :, 1:]).reshape(M * D, K),
                                     kappa, np.ones((M * D, K)), params.gap_length.reshape(M * D, K))
    return IsHsmmParams(base=base, A2=A2.reshape(M, D, K, M, D), A2_start=A2_start.reshape(K, M, D),
                        gap_stats=gap_stats.reshape(M, D, K + 1), interval_id=params.interval_id,
                        gap_length=gap_length.reshape(M, D, K), gap_spread=params.gap_spread)


def _bridge_fallback(A2: np.ndarray, a2_counts: np.ndarray) -> np.ndarray:
    """Rows for buckets never bridged in training: the segment's bridges pooled over all buckets.

    Such rows carry no posterior mass, so replacing them leaves the training
    likelihood unchanged.
    """
    M, D, K = A2.shape[:3]
    pooled = a2_counts.sum(axis=2)
    totals = pooled.sum(axis=(2, 3), keepdims=True)
    pooled = np.divide(pooled, totals, out=np.zeros_like(pooled), where=totals > 0)
    fallback = np.where(totals[:, :, None] > 0, pooled[:, :, None], A2)
    return fallback.reshape(M * D * K, M * D)


def _latent_bucket_counts(params: IsHsmmParams, observed: np.ndarray) -> np.ndarray:
    """Split observed bucket counts over the buckets that leaked into them (M x Dmax x Dmax_int)."""
    kernel = spread_kernel(params.Dmax_int, params.gap_spread)
    joint = params.gap_length[:, :, :, None] * kernel[None, None]
    probs = joint.sum(axis=2, keepdims=True)
    resp = np.divide(joint, probs, out=np.zeros_like(joint), where=probs > 0)
    return (resp * observed[:, :, None, :]).sum(axis=3)


def train_is(sequences: SequenceType[Sequence], num_states: int, max_duration: int, num_symbols: int,
             max_interval: int = DEFAULT_MAX_INTERVAL, config: TrainConfig = TrainConfig(),
             label: Optional[str] = None, initial_params: Optional[IsHsmmParams] = None,
             interval_id: int = INTERVAL_ID, gap_spread: float = DEFAULT_GAP_SPREAD) -> TrainedModel:
    """EM for the interval-state model of one label."""
    if not sequences:
        raise ValidationError("training needs at least one sequence")
    obs_list = [np.asarray(s.obs, dtype=int) for s in sequences]
    if config.strict:
        for obs in obs_list:
            hsmm.check_run_lengths(obs, max_duration, skip=interval_id)
    params = initial_params or init_is_params(num_states, num_symbols, max_duration, max_interval,
                                              config.seed, interval_id, gap_spread)

    def e_step(p):
        return [(obs, infer_is(p, obs)) for obs in obs_list]

    def m_step(p, batch):
        return reestimate_is(p, batch, config.kappa)

    params, history, iterations = hsmm.run_em(params, e_step, m_step, config, label=label)
    logger.info(f"Trained {KIND} model for label {label}: log-likelihood {history[-1]:.4f} "
                f"after {iterations} iterations")
    return TrainedModel(label=label, kind=KIND, params=params, log_likelihood=history[-1],
                        iterations=iterations, history=tuple(history),
                        config={"train": asdict(config), "states": num_states, "dmax": max_duration,
                                "dmax_int": params.Dmax_int, "gap_spread": params.gap_spread})


# ---------------------------------------------------------------------------
# Recognition and generation
# ---------------------------------------------------------------------------

def recognize_is(bank: SequenceType[TrainedModel], seq) -> Recognition:
    return hsmm.rank_scores({model.label: forward_is(model.params, seq)[1] for model in bank})


def generate_is(model, length: int, mode: str = "most-likely", seed: int = 0) -> Sequence:
    """Like hsmm.generate, with gaps drawn from gap_stats and bridged through A2."""
    params: IsHsmmParams = model.params if isinstance(model, TrainedModel) else model
    label = model.label if isinstance(model, TrainedModel) else None
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = np.random.default_rng(seed)
    base = params.base
    state, d_index = divmod(hsmm.choose(base.pi.reshape(-1), mode, rng), base.Dmax)
    obs: List[int] = []
    while len(obs) < length:
        obs.extend(hsmm.emit(base.B[state], d_index + 1, mode, rng))
        gap = hsmm.choose(params.gap_stats[state, d_index], mode, rng)
        if gap == 0:
            row = base.A[state, d_index]
        else:
            obs.extend([params.interval_id] * gap)
            row = params.A2[state, d_index, gap - 1]
        state, d_index = hsmm.next_segment(row, (state, d_index), mode, rng)
    return Sequence(obs=tuple(obs[:length]), label=label)
