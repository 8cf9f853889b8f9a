import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "scripts"))

from core import Sequence  # noqa: E402
from datagen import GenProfile, synth_dataset  # noqa: E402
from hsmm import HsmmParams  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end comparisons on generated corpora (deselect with -m \"not slow\")")


def one_hot_params(pi, transitions, emissions, num_symbols):
    """Deterministic HSMM from {(i, d): (j, d)} successor map and {state: symbol} emissions.

    pi is the (state, duration) the chain starts in. Rows missing from
    `transitions` go to the first allowed successor so every row is stochastic.
    """
    num_states = len(emissions)
    max_duration = max([pi[1]] + [d for i, d in transitions] + [d for j, d in transitions.values()])
    P = np.zeros((num_states, max_duration))
    P[pi[0], pi[1] - 1] = 1.0
    A = np.zeros((num_states, max_duration, num_states, max_duration))
    for i in range(num_states):
        for d in range(1, max_duration + 1):
            if num_states == 1:
                continue
            j, dj = transitions.get((i, d), ((i + 1) % num_states, 1))
            A[i, d - 1, j, dj - 1] = 1.0
    B = np.zeros((num_states, num_symbols))
    for state, symbol in emissions.items():
        B[state, symbol] = 1.0
    return HsmmParams(pi=P, A=A, B=B)


def random_obs(rng, num_symbols, length, low=0):
    return Sequence(obs=tuple(int(o) for o in rng.integers(low, num_symbols, size=length)))


@pytest.fixture
def alternating_corpus():
    """Symbols a=3 / b=4 alternating in runs of two, no intervals."""
    seq = Sequence(obs=(3, 3, 4, 4, 3, 3, 4, 4), label="ab")
    return [seq, seq, seq]


@pytest.fixture(scope="session")
def gapped_labels():
    """Three labels whose interior boundaries all carry a gap of one to six ticks."""
    train_set, _ = synth_dataset(GenProfile(num_labels=3, sequences_per_label=5, l_min=1, l_max=6))
    return train_set, train_set.by_label()
