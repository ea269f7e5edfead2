"""Property-based checks over random chains and discount functions"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shared.data_generators.chain_generator import ChainGenerator
from shared.engine import ctmc, discount
from shared.engine.equilibrium import is_mild, iterate_optimal
from shared.engine.valuation import hitting_value

seeds = st.integers(min_value=0, max_value=2 ** 31 - 1)
betas = st.floats(min_value=0.05, max_value=20.0)
gammas = st.floats(min_value=0.1, max_value=3.0)

SETTINGS = settings(max_examples=25, deadline=None)


@SETTINGS
@given(seed=seeds)
def test_generator_rows_sum_to_zero(seed):
    chain = ChainGenerator(seed).chain()
    assert np.allclose(chain.generator.sum(axis=1), 0.0, atol=1e-12)
    off = chain.generator - np.diag(np.diag(chain.generator))
    assert np.all(off >= 0)
    assert chain.max_rate <= ChainGenerator.MAX_RATE + 1e-9


@SETTINGS
@given(seed=seeds, s=st.floats(0.0, 2.0), t=st.floats(0.0, 2.0))
def test_transition_semigroup(seed, s, t):
    chain = ChainGenerator(seed).chain()
    P = ctmc.transition_matrix
    assert np.allclose(P(chain, s) @ P(chain, t), P(chain, s + t), atol=1e-9)
    assert np.allclose(P(chain, t).sum(axis=1), 1.0, atol=1e-10)


@SETTINGS
@given(seed=seeds)
def test_hitting_value_bounds(seed):
    generator = ChainGenerator(seed)
    chain = generator.chain()
    d = generator.discount()
    region = generator.region(chain)
    values = hitting_value(chain, d, region).values
    assert np.all(values >= 0.0)
    assert np.all(values <= chain.payoff_bound + 1e-9)
    stop = region.mask
    assert np.allclose(values[stop], chain.values[stop])


@SETTINGS
@given(beta=betas, gamma=gammas)
def test_generalized_hyperbolic_is_log_subadditive(beta, gamma):
    report = discount.check_log_subadditive(discount.generalized_hyperbolic(beta, gamma), method='grid')
    assert report.holds


@SETTINGS
@given(beta=betas, gamma=gammas)
def test_derivatives_match_finite_differences(beta, gamma):
    d = discount.generalized_hyperbolic(beta, gamma)
    first, second = discount.derivatives_at_zero(d)
    h = 1e-4 / beta
    forward = (discount.evaluate(d, h) - 1.0) / h
    assert forward == pytest.approx(first, rel=1e-3 + abs(second) * h / abs(first))
    assert first < 0 < second


@pytest.mark.slow
@settings(max_examples=10, deadline=None)
@given(seed=seeds)
def test_iteration_ends_in_a_mild_region(seed):
    generator = ChainGenerator(seed)
    chain = generator.chain(n=4)
    d = generator.discount()
    trace = iterate_optimal(chain, d)
    assert is_mild(chain, d, trace.final).holds
