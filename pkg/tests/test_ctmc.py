"""Tests for chain construction, transition matrices and path simulation"""
import numpy as np
import pytest

from shared.data_layer.errors import (
    EmptyContinuation, InvalidParameter, NegativeRate, NegativeStateValue, NegativeTime, RowSumViolation
)
from shared.data_layer.models import StoppingRegion
from shared.data_generators.chain_generator import ChainGenerator
from shared.engine import ctmc
from shared.engine.equilibrium import two_state_chain


class TestBuildChain:

    def test_example_chain(self, example_chain):
        assert example_chain.n_states == 4
        assert example_chain.labels == ('x1', 'x2', 'x3', 'x4')
        assert np.allclose(example_chain.holding_rates, [3.0, 1.0, 2.0, 3.0])
        assert example_chain.payoff_bound == 100.0

    def test_rows_sum_to_zero(self, example_chain):
        assert np.allclose(example_chain.generator.sum(axis=1), 0.0, atol=1e-12)

    def test_chain_is_immutable(self, example_chain):
        with pytest.raises(ValueError):
            example_chain.generator[0, 0] = 1.0

    def test_singleton_chain(self):
        chain = ctmc.build_chain([5.0], [[0.0]])
        assert chain.holding_rates[0] == 0.0
        assert ctmc.is_irreducible(chain)

    def test_negative_rate_rejected(self):
        with pytest.raises(NegativeRate):
            ctmc.build_chain([1.0, 2.0], [[1.0, -1.0], [1.0, -1.0]])

    def test_row_sum_violation(self):
        with pytest.raises(RowSumViolation):
            ctmc.build_chain([1.0, 2.0], [[-1.0, 2.0], [1.0, -1.0]])

    def test_negative_state_value(self):
        with pytest.raises(NegativeStateValue):
            ctmc.build_chain([-1.0, 2.0], [[-1.0, 1.0], [1.0, -1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidParameter):
            ctmc.build_chain([1.0, 2.0, 3.0], [[-1.0, 1.0], [1.0, -1.0]])

    def test_rates_only_derives_diagonal(self):
        chain = ctmc.build_chain([1.0, 2.0], [[7.0, 2.0], [0.5, 0.0]], rates_only=True)
        assert np.allclose(chain.generator, [[-2.0, 2.0], [0.5, -0.5]])

    def test_duplicate_labels(self):
        with pytest.raises(InvalidParameter):
            ctmc.build_chain([1.0, 2.0], [[-1.0, 1.0], [1.0, -1.0]], labels=['a', 'a'])


class TestStructure:

    def test_irreducibility(self, example_chain):
        assert ctmc.is_irreducible(example_chain)
        one_way = ctmc.build_chain([1.0, 2.0], [[-1.0, 1.0], [0.0, 0.0]])
        assert not ctmc.is_irreducible(one_way)

    def test_birth_death_detection(self, example_chain):
        assert not ctmc.is_birth_death(example_chain)
        assert ctmc.is_birth_death(two_state_chain(2.0, 1.0, 1.0, 1.0))

    def test_can_reach(self):
        chain = ctmc.build_chain([1.0, 2.0, 3.0], [[-1.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, -1.0]])
        assert ctmc.can_reach(chain, [1]).tolist() == [True, True, True]
        assert ctmc.can_reach(chain, [2]).tolist() == [False, False, True]

    def test_sub_generator(self, example_chain):
        sub = ctmc.sub_generator(example_chain, [0, 1, 2])
        assert np.array_equal(sub, example_chain.generator[:3, :3])

    def test_sub_generator_empty_continuation(self, example_chain):
        with pytest.raises(EmptyContinuation):
            ctmc.sub_generator(example_chain, StoppingRegion.everything(4).complement)


class TestTransitionMatrix:

    def test_identity_at_zero(self, example_chain):
        assert np.array_equal(ctmc.transition_matrix(example_chain, 0.0), np.eye(4))

    def test_negative_time(self, example_chain):
        with pytest.raises(NegativeTime):
            ctmc.transition_matrix(example_chain, -1.0)

    def test_rows_are_distributions(self, example_chain):
        P = ctmc.transition_matrix(example_chain, 0.7)
        assert np.all(P >= -1e-15)
        assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)

    def test_two_state_closed_form(self):
        lambda_a, lambda_b, t = 1.3, 0.4, 2.0
        chain = two_state_chain(2.0, 1.0, lambda_a, lambda_b)
        total = lambda_a + lambda_b
        expected = lambda_b / total * (1.0 - np.exp(-total * t))
        assert ctmc.transition_matrix(chain, t)[1, 0] == pytest.approx(expected, abs=1e-12)

    def test_small_time_expansion(self):
        lambda_a, lambda_b, eps = 1.0, 2.0, 1e-3
        chain = two_state_chain(2.0, 1.0, lambda_a, lambda_b)
        P = ctmc.transition_matrix(chain, eps, tol=1e-15)
        second = (P[1, 0] - lambda_b * eps) / eps ** 2
        assert second == pytest.approx(-(lambda_b ** 2 + lambda_a * lambda_b) / 2.0, rel=1e-2)

    def test_semigroup(self, example_chain):
        s, t = 0.3, 1.1
        P = ctmc.transition_matrix(example_chain, s + t)
        PQ = ctmc.transition_matrix(example_chain, s) @ ctmc.transition_matrix(example_chain, t)
        assert np.allclose(P, PQ, atol=1e-10)

    def test_long_run_matches_stationary(self, example_chain):
        pi = ctmc.stationary_distribution(example_chain)
        P = ctmc.transition_matrix(example_chain, 50.0)
        assert np.allclose(pi @ example_chain.generator, 0.0, atol=1e-12)
        assert np.allclose(P, np.tile(pi, (4, 1)), atol=1e-8)

    def test_random_chains_semigroup(self):
        generator = ChainGenerator(seed=11)
        for _ in range(5):
            chain = generator.chain()
            P = ctmc.transition_matrix(chain, 0.9)
            PQ = ctmc.transition_matrix(chain, 0.4) @ ctmc.transition_matrix(chain, 0.5)
            assert np.allclose(P, PQ, atol=1e-10)


class TestSimulation:

    def test_path_is_reproducible(self, example_chain):
        first = ctmc.simulate_path(example_chain, 0, 10.0, seed=3)
        second = ctmc.simulate_path(example_chain, 0, 10.0, seed=3)
        assert first == second
        assert first.initial_state == 0
        assert all(t < 10.0 for t in first.jump_times)
        assert list(first.jump_times) == sorted(first.jump_times)

    def test_path_follows_rates(self, example_chain):
        path = ctmc.simulate_path(example_chain, 1, 20.0, seed=5)
        # x2 only jumps to x4
        if len(path.states) > 1:
            assert path.states[1] == 3
        assert path.state_at(0.0) == 1

    def test_absorbing_state_never_jumps(self):
        chain = ctmc.build_chain([5.0], [[0.0]])
        path = ctmc.simulate_path(chain, 0, 100.0, seed=0)
        assert path.jump_times == ()
        assert path.first_holding_time is None

    def test_bad_horizon(self, example_chain):
        with pytest.raises(InvalidParameter):
            ctmc.simulate_path(example_chain, 0, 0.0, seed=0)

    def test_simulated_path_statistics(self, example_chain):
        # one long path from x2; the jump chain visits x2 about 23% of the time
        path = ctmc.simulate_path(example_chain, 1, 3e5, seed=13)
        times = np.concatenate([[0.0], path.jump_times])
        states = np.asarray(path.states)
        holding, left, entered = np.diff(times), states[:-1], states[1:]

        at_x2 = holding[left == 1]
        assert at_x2.size > 100_000
        # Exp(1) holding time at x2
        assert abs(at_x2.mean() - 1.0) < 3 / np.sqrt(at_x2.size)

        # x3 jumps to x2 at rate 0.4 out of 2
        from_x3 = entered[left == 2]
        share = (from_x3 == 1).mean()
        assert abs(share - 0.2) < 3 * np.sqrt(0.2 * 0.8 / from_x3.size)
        assert set(from_x3) == {1, 3}

    def test_holding_time_and_jump_frequencies(self, example_chain):
        n = 100_000
        rng = np.random.default_rng(7)
        others = np.array([False, True, True, True])
        times, states, hit = ctmc.sample_first_entry(example_chain, 0, others, n, 1e6, rng)
        assert hit.all()
        # Exp(3) holding time at x1
        assert abs(times.mean() - 1.0 / 3.0) < 4 * (1.0 / 3.0) / np.sqrt(n)
        # x1 jumps uniformly to x2, x3, x4
        se = np.sqrt((1 / 3) * (2 / 3) / n)
        for target in (1, 2, 3):
            assert abs((states == target).mean() - 1.0 / 3.0) < 4 * se
