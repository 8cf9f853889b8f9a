"""
Brute-force reference scorers for tiny instances.

Every segmentation is enumerated explicitly: durations outermost in
lexicographic order, then state labelings with consecutive states distinct.
Path probabilities are plain products in the linear domain so the results are
independent of the log-domain lattice code they are compared against.
"""

from itertools import product
from typing import Callable, Iterator, List, Optional, Sequence as SequenceType, Set, Tuple

import numpy as np

from core import INTERVAL_ID, Sequence
from errors import ImpossibleSequence, InvalidDims, TooLarge
from hsmm import HsmmParams
from ilp_hsmm import IlpParams, strip
from is_hsmm import IsHsmmParams, bucket_of
from lattice import Segment

MAX_PATHS = 10 ** 7


def compositions(total: int, max_part: int) -> Iterator[Tuple[int, ...]]:
    """All ordered ways to write total as parts in 1..max_part, lexicographic."""
    if total == 0:
        yield ()
        return
    for first in range(1, min(max_part, total) + 1):
        for rest in compositions(total - first, max_part):
            yield (first,) + rest


def labelings(count: int, num_states: int) -> Iterator[Tuple[int, ...]]:
    for states in product(range(num_states), repeat=count):
        if all(a != b for a, b in zip(states, states[1:])):
            yield states


def count_paths(total: int, max_part: int, num_states: int) -> int:
    """Number of (segmentation, labeling) pairs for one block of `total` ticks."""
    ways = [1] + [0] * total
    for t in range(1, total + 1):
        for d in range(1, min(max_part, t) + 1):
            ways[t] += ways[t - d] * (num_states if t == d else num_states - 1)
    return ways[total]


def _check_size(blocks: SequenceType[int], max_part: int, num_states: int) -> None:
    if num_states < 1:
        raise InvalidDims("the state space is empty")
    total = 1
    for block in blocks:
        total *= count_paths(block, max_part, num_states)
    if total > MAX_PATHS:
        raise TooLarge(f"{total} paths exceed the enumeration limit of {MAX_PATHS}")


def _obs(seq) -> np.ndarray:
    return np.asarray(seq.obs if isinstance(seq, Sequence) else seq, dtype=int)


def _boundaries(durations: Tuple[int, ...]) -> Set[int]:
    return set(np.cumsum(durations[:-1]).tolist())


def _emission(B: np.ndarray, state: int, window: np.ndarray) -> float:
    return float(np.prod(B[state, window]))


def _paths(total: int, max_part: int, num_states: int,
           forced: Set[int] = frozenset()) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    for durations in compositions(total, max_part):
        if not forced <= _boundaries(durations):
            continue
        for states in labelings(len(durations), num_states):
            yield durations, states


def _baseline_weight(params: HsmmParams, obs: np.ndarray, durations, states,
                     gap_factor: Optional[Callable[[int, int, int], float]] = None) -> float:
    t = 0
    weight = 1.0
    for k, (d, j) in enumerate(zip(durations, states)):
        if k == 0:
            weight *= params.pi[j, d - 1]
        else:
            i, di = states[k - 1], durations[k - 1]
            weight *= params.A[i, di - 1, j, d - 1]
            if gap_factor is not None:
                weight *= gap_factor(t, i, j)
        weight *= _emission(params.B, j, obs[t:t + d])
        t += d
    return weight


def _as_path(durations, states) -> List[Segment]:
    return [Segment(state=j, duration=d) for d, j in zip(durations, states)]


def _best(candidates: Iterator[Tuple[Tuple[int, ...], Tuple[int, ...], float]]) -> Tuple[List[Segment], float]:
    best_path, best_weight = None, 0.0
    for durations, states, weight in candidates:
        if weight > best_weight:
            best_path, best_weight = (durations, states), weight
    if best_path is None:
        raise ImpossibleSequence("every segmentation has zero probability")
    return _as_path(*best_path), float(np.log(best_weight))


# ---------------------------------------------------------------------------
# Baseline HSMM
# ---------------------------------------------------------------------------

def brute_likelihood(params: HsmmParams, seq) -> float:
    obs = _obs(seq)
    _check_size([len(obs)], params.Dmax, params.M)
    return float(sum(_baseline_weight(params, obs, durations, states)
                     for durations, states in _paths(len(obs), params.Dmax, params.M)))


def brute_best_path(params: HsmmParams, seq) -> Tuple[List[Segment], float]:
    obs = _obs(seq)
    _check_size([len(obs)], params.Dmax, params.M)
    return _best((durations, states, _baseline_weight(params, obs, durations, states))
                 for durations, states in _paths(len(obs), params.Dmax, params.M))


# ---------------------------------------------------------------------------
# Interval-state HSMM
# ---------------------------------------------------------------------------

def _blocks(obs: np.ndarray, interval_id: int) -> List[Tuple[int, np.ndarray]]:
    """(gap length before the block, ordinary ticks of the block) for each maximal ordinary block."""
    blocks = []
    gap = 0
    current: List[int] = []
    for o in obs:
        if o == interval_id:
            if current:
                blocks.append((gap, np.asarray(current)))
                current, gap = [], 0
            gap += 1
        else:
            current.append(int(o))
    if current:
        blocks.append((gap, np.asarray(current)))
    return blocks


def brute_likelihood_is(params: IsHsmmParams, seq) -> float:
    obs = _obs(seq)
    blocks = _blocks(obs, params.interval_id)
    if not blocks:
        return 1.0
    _check_size([len(b) for _, b in blocks], params.Dmax, params.M)
    base = params.base
    total = 0.0
    per_block = [list(compositions(len(b), params.Dmax)) for _, b in blocks]
    for split in product(*per_block):
        durations = tuple(d for part in split for d in part)
        firsts = set(np.cumsum([0] + [len(part) for part in split[:-1]]).tolist())
        gaps_before = {idx: blocks[k][0] for k, idx in enumerate(sorted(firsts))}
        ticks = np.concatenate([b for _, b in blocks])
        for states in labelings(len(durations), params.M):
            weight = 1.0
            t = 0
            for k, (d, j) in enumerate(zip(durations, states)):
                gap = gaps_before.get(k, 0)
                if k == 0:
                    if gap:
                        weight *= params.A2_start[bucket_of(gap, params.Dmax_int), j, d - 1]
                    else:
                        weight *= base.pi[j, d - 1]
                else:
                    i, di = states[k - 1], durations[k - 1]
                    if gap:
                        b = bucket_of(gap, params.Dmax_int)
                        weight *= params.A2[i, di - 1, b, j, d - 1] * params.gap_probs[i, di - 1, b]
                    else:
                        weight *= base.A[i, di - 1, j, d - 1]
                weight *= _emission(base.B, j, ticks[t:t + d])
                t += d
            total += weight
    return float(total)


# ---------------------------------------------------------------------------
# Interval-length-probability HSMM
# ---------------------------------------------------------------------------

def _ilp_weights(params: IlpParams, seq, interval_id: int):
    view = strip(_obs(seq), interval_id)
    _check_size([view.length], params.Dmax, params.M)

    def gap_factor(position: int, i: int, j: int) -> float:
        gap = view.gaps.get(position)
        return float(params.density(gap)[i, j]) if gap else 1.0

    for durations, states in _paths(view.length, params.Dmax, params.M, set(view.gaps)):
        yield durations, states, _baseline_weight(params.base, view.obs, durations, states, gap_factor)


def brute_likelihood_ilp(params: IlpParams, seq, interval_id: int = INTERVAL_ID) -> float:
    return float(sum(weight for _, _, weight in _ilp_weights(params, seq, interval_id)))


def brute_best_path_ilp(params: IlpParams, seq, interval_id: int = INTERVAL_ID) -> Tuple[List[Segment], float]:
    if strip(_obs(seq), interval_id).length == 0:
        return [], 0.0
    return _best(_ilp_weights(params, seq, interval_id))
