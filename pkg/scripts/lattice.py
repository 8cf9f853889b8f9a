"""
Segment lattice shared by the three model kinds.

Time runs over ticks 1..T. A segment (j, d) ending at tick t covers ticks
t-d+1..t and is scored by E[t, j, d-1]. Segments are chained through links:
the link at boundary s produces the log weight of every segment that starts
at tick s+1, either directly (initial links, e.g. pi) or from the segments
ending at its source boundary p <= s through a transition tensor
W[i, d_i-1, j, d_j-1]. The baseline model links every boundary to itself;
interval bridges link the boundary before a gap to the boundary after it.

alpha/beta are kept in the log domain with shape (T+1, M, Dmax); row 0 is
unused.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from errors import ImpossibleSequence

NEG_INF = -np.inf


@dataclass(frozen=True)
class Link:
    start: int
    weight: np.ndarray
    source: Optional[int] = None
    key: Tuple = ("A",)


@dataclass(frozen=True)
class Segment:
    state: int
    duration: int


@dataclass(frozen=True)
class Lattice:
    alpha: np.ndarray
    beta: np.ndarray
    log_prob: float
    emissions: np.ndarray
    links: Dict[int, Link]
    final: int

    @property
    def length(self) -> int:
        return self.emissions.shape[0] - 1


def safe_log(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(x)


def emission_table(log_b: np.ndarray, obs: np.ndarray, max_duration: int) -> np.ndarray:
    """E[t, j, d-1] = sum of log b_j(o_tau) over the d ticks ending at t (-inf where d > t)."""
    num_states = log_b.shape[0]
    length = len(obs)
    table = np.full((length + 1, num_states, max_duration), NEG_INF)
    per_tick = log_b[:, obs].T  # (T, M)
    for t in range(1, length + 1):
        table[t, :, 0] = per_tick[t - 1]
        upper = min(max_duration, t)
        if upper > 1:
            table[t, :, 1:upper] = table[t - 1, :, 0:upper - 1] + per_tick[t - 1][:, None]
    return table


def forbid_crossing(table: np.ndarray, boundaries) -> None:
    """Mask every segment that would run across one of the given boundaries (in place)."""
    length, _, max_duration = table.shape[0] - 1, table.shape[1], table.shape[2]
    for s in boundaries:
        for t in range(s + 1, min(length, s + max_duration - 1) + 1):
            # segments ending at t and starting at or before s span the boundary
            table[t, :, t - s:] = NEG_INF


def _message(link: Link, alpha: np.ndarray) -> np.ndarray:
    if link.source is None:
        return link.weight
    return logsumexp(alpha[link.source][:, :, None, None] + link.weight, axis=(0, 1))


def forward(table: np.ndarray, links: Dict[int, Link], final: int) -> Tuple[np.ndarray, float]:
    length, num_states, max_duration = table.shape[0] - 1, table.shape[1], table.shape[2]
    alpha = np.full((length + 1, num_states, max_duration), NEG_INF)
    messages: Dict[int, np.ndarray] = {}
    if 0 in links:
        messages[0] = _message(links[0], alpha)
    for t in range(1, length + 1):
        for d in range(1, min(max_duration, t) + 1):
            incoming = messages.get(t - d)
            if incoming is not None:
                alpha[t, :, d - 1] = table[t, :, d - 1] + incoming[:, d - 1]
        if t < length and t in links:
            messages[t] = _message(links[t], alpha)
    if final == 0:
        return alpha, 0.0
    return alpha, float(logsumexp(alpha[final]))


def _continuation(table: np.ndarray, beta: np.ndarray, start: int) -> np.ndarray:
    """G[j, d-1] = log score of segment (j, d) starting at start+1 and everything after it."""
    length, num_states, max_duration = table.shape[0] - 1, table.shape[1], table.shape[2]
    g = np.full((num_states, max_duration), NEG_INF)
    for d in range(1, min(max_duration, length - start) + 1):
        g[:, d - 1] = table[start + d, :, d - 1] + beta[start + d, :, d - 1]
    return g


def backward(table: np.ndarray, links: Dict[int, Link], final: int) -> np.ndarray:
    length, num_states, max_duration = table.shape[0] - 1, table.shape[1], table.shape[2]
    beta = np.full((length + 1, num_states, max_duration), NEG_INF)
    by_source = {link.source: link for link in links.values() if link.source is not None}
    if final > 0:
        beta[final] = 0.0
    for t in range(length, 0, -1):
        link = by_source.get(t)
        if link is None or t == final:
            continue
        g = _continuation(table, beta, link.start)
        beta[t] = logsumexp(link.weight + g[None, None, :, :], axis=(2, 3))
    return beta


def infer(table: np.ndarray, links: Dict[int, Link], final: int) -> Lattice:
    alpha, log_prob = forward(table, links, final)
    beta = backward(table, links, final)
    return Lattice(alpha=alpha, beta=beta, log_prob=log_prob, emissions=table, links=links, final=final)


def expected_counts(lattice: Lattice) -> Dict[Tuple, np.ndarray]:
    """Posterior expected usage of every link weight, keyed by Link.key."""
    counts: Dict[Tuple, np.ndarray] = {}
    log_prob = lattice.log_prob
    for start in sorted(lattice.links):
        link = lattice.links[start]
        g = _continuation(lattice.emissions, lattice.beta, link.start)
        if link.source is None:
            post = np.exp(link.weight + g - log_prob)
        else:
            post = np.exp(lattice.alpha[link.source][:, :, None, None] + link.weight + g[None, None] - log_prob)
        if link.key in counts:
            counts[link.key] = counts[link.key] + post
        else:
            counts[link.key] = post
    return counts


def segment_posteriors(lattice: Lattice) -> np.ndarray:
    """gamma[t, j, d-1]: probability that a segment (j, d) ends exactly at tick t."""
    with np.errstate(invalid="ignore"):
        gamma = np.exp(lattice.alpha + lattice.beta - lattice.log_prob)
    return np.nan_to_num(gamma, nan=0.0)


def occupancy(lattice: Lattice) -> np.ndarray:
    """occ[t, j]: probability that state j covers tick t (row 0 unused)."""
    gamma = segment_posteriors(lattice)
    length, num_states, max_duration = gamma.shape
    length -= 1
    occ = np.zeros((length + 1, num_states))
    for d in range(1, max_duration + 1):
        if d > length:
            break
        ending = gamma[d:length + 1, :, d - 1]
        for k in range(d):
            occ[d - k:length + 1 - k] += ending
    return occ


def viterbi(table: np.ndarray, links: Dict[int, Link], final: int) -> Tuple[List[Segment], float]:
    """Max-product pass over the same lattice; ties go to the lowest (state, duration)."""
    length, num_states, max_duration = table.shape[0] - 1, table.shape[1], table.shape[2]
    width = num_states * max_duration
    delta = np.full((length + 1, num_states, max_duration), NEG_INF)
    messages: Dict[int, np.ndarray] = {}
    pointers: Dict[int, np.ndarray] = {}

    def relax(link: Link):
        if link.source is None:
            messages[link.start] = link.weight
            return
        scores = delta[link.source].reshape(width)[:, None] + link.weight.reshape(width, width)
        best = np.argmax(scores, axis=0)
        messages[link.start] = scores[best, np.arange(width)].reshape(num_states, max_duration)
        pointers[link.start] = best.reshape(num_states, max_duration)

    if 0 in links:
        relax(links[0])
    for t in range(1, length + 1):
        for d in range(1, min(max_duration, t) + 1):
            incoming = messages.get(t - d)
            if incoming is not None:
                delta[t, :, d - 1] = table[t, :, d - 1] + incoming[:, d - 1]
        if t < length and t in links:
            relax(links[t])

    if final == 0:
        return [], 0.0
    flat = delta[final].reshape(width)
    best = int(np.argmax(flat))
    score = float(flat[best])
    if score == NEG_INF:
        raise ImpossibleSequence("every segmentation has zero probability")

    path: List[Segment] = []
    t = final
    state, d_index = divmod(best, max_duration)
    while True:
        path.append(Segment(state=state, duration=d_index + 1))
        start = t - (d_index + 1)
        link = links[start]
        if link.source is None:
            break
        state, d_index = divmod(int(pointers[start][state, d_index]), max_duration)
        t = link.source
    path.reverse()
    return path, score
