import math
from itertools import product

import numpy as np
import pytest

import hsmm
import lattice
import oracle
from conftest import one_hot_params, random_obs
from errors import DegenerateLattice, InvalidDims, LengthExceeded, ValidationError
from hsmm import HsmmParams, TrainConfig


def chain():
    # state 0 emits symbol 3 for two ticks, state 1 emits symbol 4 for one tick, forever
    return one_hot_params(pi=(0, 2), transitions={(0, 2): (1, 1), (1, 1): (0, 2)},
                          emissions={0: 3, 1: 4}, num_symbols=5)


def assert_stochastic(params: HsmmParams):
    assert abs(params.pi.sum() - 1) <= 1e-9
    assert np.allclose(params.B.sum(axis=1), 1, atol=1e-9)
    sums = params.A.reshape(params.M * params.Dmax, -1).sum(axis=1)
    assert np.all((np.abs(sums - 1) <= 1e-9) | (params.M == 1))


class TestInitParams:
    def test_single_state_single_symbol(self):
        params = hsmm.init_params(1, 1, 1, seed=0)
        assert params.A.shape == (1, 1, 1, 1)
        assert not params.A.any()
        assert params.B.tolist() == [[1.0]]
        assert params.pi.tolist() == [[1.0]]

    def test_same_seed_same_params(self):
        a = hsmm.init_params(3, 4, 2, seed=5)
        b = hsmm.init_params(3, 4, 2, seed=5)
        assert np.array_equal(a.A, b.A) and np.array_equal(a.B, b.B) and np.array_equal(a.pi, b.pi)

    def test_rows_normalized_and_no_self_transitions(self):
        params = hsmm.init_params(3, 4, 2, seed=0)
        rows = params.A.reshape(6, 6).sum(axis=1)
        assert np.all(np.abs(rows - 1) <= 1e-12)
        for i in range(3):
            assert not params.A[i, :, i, :].any()

    def test_invalid_dims(self):
        with pytest.raises(InvalidDims):
            hsmm.init_params(0, 2, 2)

    def test_params_are_read_only(self):
        params = hsmm.init_params(2, 3, 2)
        with pytest.raises(ValueError):
            params.B[0, 0] = 0.5


class TestParamValidation:
    def test_self_transition_rejected(self):
        A = np.zeros((2, 1, 2, 1))
        A[0, 0, 0, 0] = 1.0
        A[1, 0, 0, 0] = 1.0
        with pytest.raises(ValidationError):
            HsmmParams(pi=[[0.5], [0.5]], A=A, B=[[1.0], [1.0]])

    def test_nan_rejected(self):
        with pytest.raises(ValidationError):
            HsmmParams(pi=[[float("nan")]], A=np.zeros((1, 1, 1, 1)), B=[[1.0]])

    def test_row_sum_checked(self):
        with pytest.raises(ValidationError):
            HsmmParams(pi=[[1.0]], A=np.zeros((1, 1, 1, 1)), B=[[0.5, 0.4]])


class TestEmissionBlock:
    params = HsmmParams(pi=[[1.0]], A=np.zeros((1, 1, 1, 1)), B=[[0.5, 0.5, 0.0]])

    def test_single_tick(self):
        assert hsmm.emission_block(self.params, 0, 1, [0]) == pytest.approx(math.log(0.5))

    def test_product_form(self):
        assert hsmm.emission_block(self.params, 0, 2, [0, 1]) == pytest.approx(math.log(0.25))

    def test_zero_probability(self):
        assert hsmm.emission_block(self.params, 0, 1, [2]) == -np.inf

    def test_window_length_checked(self):
        with pytest.raises(ValidationError):
            hsmm.emission_block(self.params, 0, 2, [0])


class TestForwardBackward:
    def test_certain_sequence(self):
        params = HsmmParams(pi=[[1.0]], A=np.zeros((1, 1, 1, 1)), B=[[1.0]])
        _, log_p = hsmm.forward(params, [0])
        assert log_p == 0.0

    def test_impossible_first_symbol(self):
        params = HsmmParams(pi=[[0.5], [0.5]], A=one_hot_params((0, 1), {}, {0: 0, 1: 0}, 2).A,
                            B=[[1.0, 0.0], [1.0, 0.0]])
        assert hsmm.forward(params, [1, 0])[1] == -np.inf

    def test_deterministic_chain(self):
        assert hsmm.forward(chain(), [3, 3, 4, 3, 3])[1] == 0.0
        assert hsmm.forward(chain(), [3, 4, 3])[1] == -np.inf

    def test_backward_base_case(self):
        params = hsmm.init_params(2, 3, 2, seed=1)
        beta = hsmm.backward(params, [1])
        assert np.all(beta[1] == 0.0)

    def test_occupancy_covers_every_tick(self):
        params = hsmm.init_params(3, 3, 3, seed=4)
        seq = random_obs(np.random.default_rng(4), 3, 9)
        occ = hsmm.posterior_occupancy(params, seq)
        assert occ.shape == (9, 3)
        assert np.allclose(occ.sum(axis=1), 1.0, atol=1e-9)

    def test_occupancy_matches_enumeration(self):
        params = hsmm.init_params(2, 2, 2, seed=11)
        obs = [0, 1, 1, 0]
        expected = np.zeros((4, 2))
        total = 0.0
        for durations in oracle.compositions(4, 2):
            for states in oracle.labelings(len(durations), 2):
                weight = oracle._baseline_weight(params, np.array(obs), durations, states)
                total += weight
                t = 0
                for d, j in zip(durations, states):
                    expected[t:t + d, j] += weight
                    t += d
        expected /= total
        assert np.allclose(hsmm.posterior_occupancy(params, obs), expected, atol=1e-12)

    def test_long_sequence_stays_finite(self):
        params = hsmm.init_params(2, 3, 2, seed=2)
        seq = random_obs(np.random.default_rng(2), 3, 2000)
        _, log_p = hsmm.forward(params, seq)
        assert np.isfinite(log_p)

    def test_long_run_strict_and_clamped(self):
        params = HsmmParams(pi=[[0.5, 0.5]], A=np.zeros((1, 2, 1, 2)), B=[[1.0]])
        assert hsmm.forward(params, [0, 0, 0])[1] == -np.inf
        with pytest.raises(LengthExceeded):
            hsmm.forward(params, [0, 0, 0], strict=True)

    def test_viterbi_on_chain(self):
        path, score = hsmm.viterbi(chain(), [3, 3, 4, 3, 3])
        assert [(s.state, s.duration) for s in path] == [(0, 2), (1, 1), (0, 2)]
        assert score == 0.0


class TestReestimate:
    def test_single_path_gets_all_mass(self):
        params = HsmmParams(pi=[[0.5], [0.5]], A=one_hot_params((0, 1), {}, {0: 0, 1: 1}, 2).A,
                            B=[[1.0, 0.0], [0.0, 1.0]])
        obs = np.array([0, 1, 0])
        updated = hsmm.reestimate(params, [(obs, hsmm.infer(params, obs))], kappa=0.0)
        assert updated.pi.tolist() == [[1.0], [0.0]]
        assert updated.B.tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_unused_transition_drops_to_zero(self):
        params = hsmm.init_params(2, 3, 2, seed=3)
        obs = np.array([2, 2])
        updated = hsmm.reestimate(params, [(obs, hsmm.infer(params, obs))], kappa=0.0)
        # no duration-2 segment ends before the last tick, so those rows are unvisited
        assert np.array_equal(updated.A[:, 1], params.A[:, 1])
        # a duration-1 segment at tick 1 can only be followed by another one
        assert not updated.A[:, 0, :, 1].any()
        assert_stochastic(updated)

    def test_degenerate_batch(self):
        params = HsmmParams(pi=[[1.0]], A=np.zeros((1, 1, 1, 1)), B=[[1.0, 0.0]])
        obs = np.array([1])
        with pytest.raises(DegenerateLattice):
            hsmm.reestimate(params, [(obs, hsmm.infer(params, obs))])


def sampled_corpus(seed=7, count=5, length=12):
    source = hsmm.init_params(2, 3, 3, seed=seed)
    return [hsmm.generate(source, length, mode="sampled", seed=k) for k in range(count)]


class TestTrain:
    def test_huge_epsilon_stops_after_one_iteration(self):
        model = hsmm.train(sampled_corpus(), 2, 3, 3, TrainConfig(epsilon=1e9))
        assert model.iterations == 1
        assert len(model.history) == 2

    @pytest.mark.parametrize("seed", range(5))
    def test_em_is_monotone(self, seed):
        config = TrainConfig(epsilon=1e-12, max_iters=15, seed=seed, kappa=0.0)
        model = hsmm.train(sampled_corpus(), 2, 3, 3, config)
        assert model.history[-1] >= model.history[0]
        assert all(b >= a - 1e-8 for a, b in zip(model.history, model.history[1:]))

    def test_deterministic(self):
        a = hsmm.train(sampled_corpus(), 2, 3, 3, TrainConfig(seed=3, max_iters=5))
        b = hsmm.train(sampled_corpus(), 2, 3, 3, TrainConfig(seed=3, max_iters=5))
        assert np.array_equal(a.params.A, b.params.A)
        assert np.array_equal(a.params.B, b.params.B)
        assert a.history == b.history

    def test_rows_stay_stochastic(self):
        model = hsmm.train(sampled_corpus(), 3, 3, 3, TrainConfig(max_iters=5))
        assert_stochastic(model.params)

    def test_empty_training_set(self):
        with pytest.raises(ValidationError):
            hsmm.train([], 2, 2, 3)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            TrainConfig(epsilon=0)
        with pytest.raises(ValidationError):
            TrainConfig(max_iters=0)


def single_symbol_model(label, symbol, num_symbols=3):
    params = HsmmParams(pi=[[0.5, 0.5]], A=np.zeros((1, 2, 1, 2)),
                        B=[[1.0 if n == symbol else 0.0 for n in range(num_symbols)]])
    return hsmm.TrainedModel(label=label, kind=hsmm.KIND, params=params, log_likelihood=0.0, iterations=0)


class TestRecognize:
    def test_single_model_bank(self):
        bank = [single_symbol_model("only", 0)]
        assert hsmm.recognize(bank, [1]).label == "only"

    def test_picks_matching_emissions(self):
        bank = [single_symbol_model("x", 0), single_symbol_model("y", 1)]
        result = hsmm.recognize(bank, [1, 1])
        assert result.label == "y"
        assert result.scores["x"] == -np.inf
        assert not result.all_zero

    def test_bank_order_does_not_matter(self):
        models = [hsmm.TrainedModel(label=str(k), kind=hsmm.KIND, params=hsmm.init_params(2, 3, 2, seed=k),
                                    log_likelihood=0.0, iterations=0) for k in range(4)]
        seq = random_obs(np.random.default_rng(0), 3, 6)
        winners = {hsmm.recognize(list(order), seq).label for order in [models, models[::-1], models[1:] + models[:1]]}
        assert len(winners) == 1

    def test_all_zero_falls_back_to_lowest_label(self):
        bank = [single_symbol_model("b", 0), single_symbol_model("a", 0)]
        result = hsmm.recognize(bank, [2])
        assert result.label == "a"
        assert result.all_zero

    def test_tie_goes_to_lowest_label(self):
        bank = [single_symbol_model("b", 0), single_symbol_model("a", 0)]
        assert hsmm.recognize(bank, [0]).label == "a"


class TestGenerate:
    def test_deterministic_chain(self):
        assert hsmm.generate(chain(), 7).obs == (3, 3, 4, 3, 3, 4, 3)

    def test_truncated_first_run(self):
        assert hsmm.generate(chain(), 1).obs == (3,)

    def test_sampled_is_seeded(self):
        params = hsmm.init_params(3, 4, 3, seed=1)
        a = hsmm.generate(params, 20, mode="sampled", seed=9)
        b = hsmm.generate(params, 20, mode="sampled", seed=9)
        assert a == b
        assert len(a) == 20

    def test_sampled_chain_matches_most_likely(self):
        assert hsmm.generate(chain(), 6, mode="sampled", seed=4).obs == (3, 3, 4, 3, 3, 4)

    def test_bad_mode(self):
        with pytest.raises(ValidationError):
            hsmm.generate(chain(), 3, mode="greedy")


def test_lattice_forbid_crossing_masks_spanning_segments():
    params = hsmm.init_params(2, 2, 3, seed=0)
    table = lattice.emission_table(params.log_B, np.array([0, 1, 0, 1]), 3)
    lattice.forbid_crossing(table, [2])
    assert table[3, :, 1:].tolist() == [[-np.inf, -np.inf]] * 2
    assert np.all(np.isfinite(table[3, :, 0]))
    assert np.all(table[4, :, 2:] == -np.inf)
    assert np.all(np.isfinite(table[4, :, :2]))
    assert np.all(np.isfinite(table[2, :, :2]))


def test_enumeration_helpers_agree_with_counts():
    for total, max_part, states in product(range(1, 7), range(1, 4), range(1, 4)):
        enumerated = sum(1 for d in oracle.compositions(total, max_part)
                         for _ in oracle.labelings(len(d), states))
        assert enumerated == oracle.count_paths(total, max_part, states)
