"""
Interval-Length-Probability HSMM.

The baseline HSMM runs over the interval-stripped tick sequence. Every
interior gap forces a segment boundary at its position, and the transition
across that boundary is multiplied by p(L[i, j] = l), a truncated Gaussian
density over gap lengths per state pair. Leading and trailing gaps carry no
state pair and are ignored.

Training alternates a base EM step (gaps only force boundaries), a Viterbi
assignment with the interval factors, and a refit of L and gap_rate from the
assigned boundaries. Convergence is checked on the joint score: base
log-likelihood plus the interval log densities along the Viterbi paths.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence as SequenceType, Tuple

import numpy as np
from scipy.stats import norm

import hsmm
import lattice
from core import INTERVAL_ID, Sequence
from errors import DegenerateLattice, ImpossibleSequence, ValidationError
from hsmm import HsmmParams, Recognition, TrainConfig, TrainedModel
from lattice import Lattice, Link, Segment, safe_log

logger = logging.getLogger(__name__)

KIND = "ilp-hsmm"

DEFAULT_DELTA_PT = 1e-4
DEFAULT_ATTENUATION = 0.5
DEFAULT_SIGMA_MIN = 0.5
SCORE_MODES = ("viterbi", "forward")


@dataclass(frozen=True)
class IlpConfig:
    delta_pt: float = DEFAULT_DELTA_PT
    c: float = DEFAULT_ATTENUATION
    sigma_min: float = DEFAULT_SIGMA_MIN
    score_mode: str = "viterbi"

    def __post_init__(self):
        if not self.delta_pt > 0:
            raise ValidationError(f"delta_pt must be > 0, got {self.delta_pt}")
        if not 0 <= self.c <= 1:
            raise ValidationError(f"c must be in [0, 1], got {self.c}")
        if not self.sigma_min > 0:
            raise ValidationError(f"sigma_min must be > 0, got {self.sigma_min}")
        if self.score_mode not in SCORE_MODES:
            raise ValidationError(f"score_mode must be one of {SCORE_MODES}, got '{self.score_mode}'")


@dataclass(frozen=True)
class IntervalGaussian:
    """Gap-length density for one state pair, truncated to [lo, hi] where it stays >= delta_pt."""

    mu: float
    sigma: float
    lo: float
    hi: float
    observed: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma <= 0:
            raise ValidationError(f"invalid interval Gaussian mu={self.mu}, sigma={self.sigma}")
        if not self.lo <= self.mu <= self.hi:
            raise ValidationError(f"support [{self.lo}, {self.hi}] does not contain mu={self.mu}")

    @classmethod
    def fit(cls, mu: float, sigma: float, delta_pt: float, observed: bool = True) -> "IntervalGaussian":
        peak = 1.0 / (sigma * math.sqrt(2 * math.pi))
        half_width = sigma * math.sqrt(2 * math.log(peak / delta_pt)) if peak >= delta_pt else 0.0
        return cls(mu=mu, sigma=sigma, lo=mu - half_width, hi=mu + half_width, observed=observed)

    def contains(self, gap: float) -> bool:
        return self.lo <= gap <= self.hi

    def min_density(self) -> Optional[float]:
        """Smallest density over the integer gap lengths (>= 1) inside the support."""
        ks = np.arange(max(1, math.ceil(self.lo)), math.floor(self.hi) + 1)
        if ks.size == 0:
            return None
        return float(np.min(norm.pdf(ks, self.mu, self.sigma)))

    def to_dict(self) -> Dict:
        return asdict(self)


def out_of_range_density(L, config: IlpConfig) -> float:
    """c times the smallest in-support density over every pair (delta_pt when no pair has one)."""
    minima = [m for row in L for g in row for m in [g.min_density()] if m is not None]
    return config.c * (min(minima) if minima else config.delta_pt)


def interval_pdf(g: IntervalGaussian, gap: float, out_of_range: float) -> float:
    if gap < 0:
        raise ValidationError(f"gap length must be >= 0, got {gap}")
    if g.contains(gap):
        return float(norm.pdf(gap, g.mu, g.sigma))
    return out_of_range


@dataclass(frozen=True, eq=False)
class IlpParams:
    base: HsmmParams
    L: Tuple[Tuple[IntervalGaussian, ...], ...]
    gap_rate: np.ndarray
    config: IlpConfig = field(default_factory=IlpConfig)

    def __post_init__(self):
        M = self.base.M
        L = tuple(tuple(row) for row in self.L)
        if len(L) != M or any(len(row) != M for row in L):
            raise ValidationError(f"L must be {M} x {M}")
        for row in L:
            for g in row:
                if g.sigma < self.config.sigma_min:
                    raise ValidationError(f"sigma {g.sigma} is below sigma_min {self.config.sigma_min}")
        gap_rate = hsmm._frozen_array(self.gap_rate, "gap_rate")
        if gap_rate.shape != (M, M) or np.any(gap_rate > 1):
            raise ValidationError(f"gap_rate must be an {M} x {M} matrix of probabilities")
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "gap_rate", gap_rate)
        object.__setattr__(self, "_mu", np.array([[g.mu for g in row] for row in L]))
        object.__setattr__(self, "_sigma", np.array([[g.sigma for g in row] for row in L]))
        object.__setattr__(self, "_lo", np.array([[g.lo for g in row] for row in L]))
        object.__setattr__(self, "_hi", np.array([[g.hi for g in row] for row in L]))
        object.__setattr__(self, "out_of_range", out_of_range_density(L, self.config))

    @property
    def M(self) -> int:
        return self.base.M

    @property
    def N(self) -> int:
        return self.base.N

    @property
    def Dmax(self) -> int:
        return self.base.Dmax

    def density(self, gap: int) -> np.ndarray:
        """p(L[i, j] = gap) for every pair, shape (M, M)."""
        inside = (self._lo <= gap) & (gap <= self._hi)
        return np.where(inside, norm.pdf(gap, self._mu, self._sigma), self.out_of_range)

    def log_density(self, gap: int) -> np.ndarray:
        return safe_log(self.density(gap))

    def to_dict(self) -> Dict:
        data = self.base.to_dict()
        data.update({
            "L": [[g.to_dict() for g in row] for row in self.L],
            "gap_rate": self.gap_rate.tolist(),
            "delta_pt": self.config.delta_pt,
            "c": self.config.c,
            "sigma_min": self.config.sigma_min,
            "score_mode": self.config.score_mode,
        })
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "IlpParams":
        config = IlpConfig(delta_pt=data["delta_pt"], c=data["c"], sigma_min=data["sigma_min"],
                           score_mode=data.get("score_mode", "viterbi"))
        L = [[IntervalGaussian(**entry) for entry in row] for row in data["L"]]
        return cls(base=HsmmParams.from_dict(data), L=L, gap_rate=data["gap_rate"], config=config)


# ---------------------------------------------------------------------------
# Stripped view
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StrippedView:
    """Ordinary ticks only; gaps maps a boundary (ticks before it) to the interior gap length there."""

    obs: np.ndarray
    gaps: Dict[int, int]

    @property
    def length(self) -> int:
        return len(self.obs)


def strip(seq, interval_id: int = INTERVAL_ID) -> StrippedView:
    raw = seq.obs if isinstance(seq, Sequence) else seq
    obs: List[int] = []
    gaps: Dict[int, int] = {}
    pending = 0
    for o in raw:
        if o == interval_id:
            pending += 1
            continue
        if pending and obs:
            gaps[len(obs)] = pending
        pending = 0
        obs.append(int(o))
    return StrippedView(obs=np.asarray(obs, dtype=int), gaps=gaps)


def _lattice_inputs(base: HsmmParams, view: StrippedView, params: Optional[IlpParams] = None):
    table = lattice.emission_table(base.log_B, view.obs, base.Dmax)
    lattice.forbid_crossing(table, view.gaps)
    links = hsmm.baseline_links(base.log_pi, base.log_A, view.length)
    if params is not None:
        for s, gap in view.gaps.items():
            weight = base.log_A + params.log_density(gap)[:, None, :, None]
            links[s] = Link(start=s, weight=weight, source=s, key=("A",))
    return table, links, view.length


def _view(seq, interval_id: int, strict: bool, max_duration: int) -> StrippedView:
    if isinstance(seq, StrippedView):
        return seq
    if strict:
        raw = seq.obs if isinstance(seq, Sequence) else seq
        hsmm.check_run_lengths(np.asarray(raw, dtype=int), max_duration, skip=interval_id)
    return strip(seq, interval_id)


def infer_ilp(params: IlpParams, view: StrippedView) -> Lattice:
    """Posterior lattice with the interval factors on gap boundaries."""
    return lattice.infer(*_lattice_inputs(params.base, view, params))


def decode_stripped(base: HsmmParams, seq, interval_id: int = INTERVAL_ID) -> Tuple[List[Segment], float]:
    """Base-only Viterbi on the stripped view (gaps force boundaries but add no factor)."""
    view = _view(seq, interval_id, False, base.Dmax)
    if view.length == 0:
        return [], 0.0
    return lattice.viterbi(*_lattice_inputs(base, view))


def viterbi_ilp(params: IlpParams, seq, interval_id: int = INTERVAL_ID,
                strict: bool = False) -> Tuple[List[Segment], float]:
    view = _view(seq, interval_id, strict, params.Dmax)
    if view.length == 0:
        return [], 0.0
    return lattice.viterbi(*_lattice_inputs(params.base, view, params))


def forward_ilp(params: IlpParams, seq, interval_id: int = INTERVAL_ID,
                strict: bool = False) -> Tuple[np.ndarray, float]:
    """Sum over segmentations with interval factors; the 'forward' recognition mode."""
    view = _view(seq, interval_id, strict, params.Dmax)
    return lattice.forward(*_lattice_inputs(params.base, view, params))


def path_boundaries(path: List[Segment]) -> List[Tuple[int, int, int]]:
    """(boundary position, state before, state after) for consecutive segments of a path."""
    boundaries = []
    position = 0
    for prev, nxt in zip(path, path[1:]):
        position += prev.duration
        boundaries.append((position, prev.state, nxt.state))
    return boundaries


def joint_log_prob(params: IlpParams, views: SequenceType[StrippedView]) -> float:
    """Training objective: summed forward log-likelihood with interval factors."""
    values = [forward_ilp(params, view)[1] for view in views]
    finite = [v for v in values if v > -np.inf]
    return float(np.sum(finite)) if finite else -np.inf


# ---------------------------------------------------------------------------
# Interval statistics
# ---------------------------------------------------------------------------

def _stdev(values: List[int]) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def fit_interval_stats(views: SequenceType[StrippedView], paths: SequenceType[List[Segment]],
                       num_states: int, config: IlpConfig = IlpConfig()):
    """Refit L and gap_rate from state assignments.

    Returns (L, gap_rate). Pairs without an observed gap get the corpus-wide prior,
    flagged observed=False.
    """
    samples: Dict[Tuple[int, int], List[int]] = {}
    with_gap = np.zeros((num_states, num_states))
    boundaries = np.zeros((num_states, num_states))
    for view, path in zip(views, paths):
        for position, i, j in path_boundaries(path):
            boundaries[i, j] += 1
            gap = view.gaps.get(position)
            if gap:
                with_gap[i, j] += 1
                samples.setdefault((i, j), []).append(gap)

    corpus = [gap for view in views for gap in view.gaps.values()]
    prior_mu = float(np.mean(corpus)) if corpus else 0.0
    prior = IntervalGaussian.fit(prior_mu, max(3 * _stdev(corpus), config.sigma_min), config.delta_pt,
                                 observed=False)

    L = []
    for i in range(num_states):
        row = []
        for j in range(num_states):
            gaps = samples.get((i, j))
            if gaps:
                row.append(IntervalGaussian.fit(float(np.mean(gaps)), max(_stdev(gaps), config.sigma_min),
                                                config.delta_pt))
            else:
                row.append(prior)
        L.append(tuple(row))
    gap_rate = np.divide(with_gap, boundaries, out=np.zeros_like(with_gap), where=boundaries > 0)
    return tuple(L), gap_rate


def _assign(params: IlpParams, views: SequenceType[StrippedView]) -> List[List[Segment]]:
    paths = []
    for view in views:
        try:
            paths.append(viterbi_ilp(params, view)[0])
        except ImpossibleSequence:
            paths.append([])
    return paths


def init_ilp_params(base: HsmmParams, views: SequenceType[StrippedView],
                    config: IlpConfig = IlpConfig()) -> IlpParams:
    """Interval statistics from base-only Viterbi paths."""
    paths = []
    for view in views:
        try:
            paths.append(decode_stripped(base, view)[0])
        except ImpossibleSequence:
            paths.append([])
    L, gap_rate = fit_interval_stats(views, paths, base.M, config)
    return IlpParams(base=base, L=L, gap_rate=gap_rate, config=config)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_ilp(sequences: SequenceType[Sequence], num_states: int, max_duration: int, num_symbols: int,
              config: TrainConfig = TrainConfig(), ilp_config: IlpConfig = IlpConfig(),
              label: Optional[str] = None, initial_params: Optional[HsmmParams] = None,
              interval_id: int = INTERVAL_ID) -> TrainedModel:
    """Base EM on the joint lattice, then a Viterbi refit of L kept only if the joint score holds.

    The score tracked in `history` is `joint_log_prob`, so it never falls with kappa = 0.
    """
    if not sequences:
        raise ValidationError("training needs at least one sequence")
    views = [_view(s, interval_id, config.strict, max_duration) for s in sequences]
    usable = [v for v in views if v.length > 0]
    if len(usable) < len(views):
        logger.warning(f"Skipping {len(views) - len(usable)} all-interval sequences for label {label}")
    if not usable:
        raise ValidationError("no sequence has an ordinary observation")
    base = initial_params or hsmm.init_params(num_states, num_symbols, max_duration, config.seed)
    params = init_ilp_params(base, usable, ilp_config)

    def e_step(p: IlpParams):
        return [(view.obs, infer_ilp(p, view)) for view in usable]

    def m_step(p: IlpParams, batch) -> IlpParams:
        link_counts, emission_counts, used = hsmm.collect_statistics(batch, p.M, p.N)
        if used == 0:
            raise DegenerateLattice("every sequence in the batch has zero likelihood")
        new_base = hsmm.update_base(p.base, link_counts, emission_counts, config.kappa)
        kept = IlpParams(base=new_base, L=p.L, gap_rate=p.gap_rate, config=ilp_config)
        L, gap_rate = fit_interval_stats(usable, _assign(kept, usable), p.M, ilp_config)
        refit = IlpParams(base=new_base, L=L, gap_rate=gap_rate, config=ilp_config)
        if joint_log_prob(refit, usable) >= hsmm.total_log_prob(batch):
            return refit
        logger.debug(f"[{label}] interval refit lowers the joint score, keeping the previous L")
        # gap_rate only drives generation
        return IlpParams(base=new_base, L=p.L, gap_rate=gap_rate, config=ilp_config)

    params, history, iterations = hsmm.run_em(params, e_step, m_step, config, label=label)
    observed = sum(g.observed for row in params.L for g in row)
    logger.info(f"Trained {KIND} model for label {label}: joint score {history[-1]:.4f} after "
                f"{iterations} iterations, {observed} observed interval pairs")
    return TrainedModel(label=label, kind=KIND, params=params, log_likelihood=history[-1],
                        iterations=iterations, history=tuple(history),
                        config={"train": asdict(config), "ilp": asdict(ilp_config),
                                "states": num_states, "dmax": max_duration})


# ---------------------------------------------------------------------------
# Recognition and generation
# ---------------------------------------------------------------------------

def score_ilp(params: IlpParams, seq, mode: Optional[str] = None) -> float:
    mode = mode or params.config.score_mode
    if mode == "forward":
        return forward_ilp(params, seq)[1]
    try:
        return viterbi_ilp(params, seq)[1]
    except ImpossibleSequence:
        return -np.inf


def recognize_ilp(bank: SequenceType[TrainedModel], seq, mode: Optional[str] = None) -> Recognition:
    return hsmm.rank_scores({model.label: score_ilp(model.params, seq, mode) for model in bank})


def generate_ilp(model, length: int, mode: str = "most-likely", seed: int = 0,
                 interval_id: int = INTERVAL_ID) -> Sequence:
    """Base generation with a gap inserted between segments i -> j at rate gap_rate[i, j].

    Most-likely mode inserts the gap when the rate exceeds one half and uses round(mu);
    sampled mode draws both.
    """
    params: IlpParams = model.params if isinstance(model, TrainedModel) else model
    label = model.label if isinstance(model, TrainedModel) else None
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = np.random.default_rng(seed)
    base = params.base
    state, d_index = divmod(hsmm.choose(base.pi.reshape(-1), mode, rng), base.Dmax)
    obs: List[int] = []
    while len(obs) < length:
        obs.extend(hsmm.emit(base.B[state], d_index + 1, mode, rng))
        nxt, next_d = hsmm.next_segment(base.A[state, d_index], (state, d_index), mode, rng)
        if nxt != state:
            g = params.L[state][nxt]
            rate = params.gap_rate[state, nxt]
            if mode == "most-likely":
                gap = max(1, int(round(g.mu))) if rate > 0.5 else 0
            else:
                gap = max(1, int(round(rng.normal(g.mu, g.sigma)))) if rng.random() < rate else 0
            obs.extend([interval_id] * gap)
        state, d_index = nxt, next_d
    return Sequence(obs=tuple(obs[:length]), label=label)
