"""Seeded random chains, regions and discount functions for randomized sweeps"""
import logging
from typing import Optional, Tuple

import numpy as np

from shared.data_layer.models import Chain, DiscountFn, StoppingRegion
from shared.engine import discount
from shared.engine.ctmc import build_chain

logger = logging.getLogger(__name__)


def random_chain(n: int, rng: np.random.Generator, max_rate: float = 5.0,
                 value_range: Tuple[float, float] = (0.0, 100.0), density: float = 0.6,
                 irreducible: bool = True, birth_death: bool = False) -> Chain:
    """Random generator with every holding rate at most `max_rate`

    Irreducible chains get a random cycle through all states on top of the sparse
    rates; birth-death chains only connect neighbours.
    """
    if birth_death:
        mask = np.abs(np.subtract.outer(np.arange(n), np.arange(n))) == 1
    else:
        mask = rng.random((n, n)) < density
        if irreducible and n > 1:
            order = rng.permutation(n)
            mask[order, np.roll(order, -1)] = True
    np.fill_diagonal(mask, False)

    rates = np.where(mask, rng.uniform(0.1, 1.0, size=(n, n)), 0.0)
    totals = rates.sum(axis=1)
    target = rng.uniform(0.2, 1.0, size=n) * max_rate
    scale = np.divide(target, totals, out=np.zeros(n), where=totals > 0)
    rates *= scale[:, None]

    values = np.round(rng.uniform(*value_range, size=n), 2)
    return build_chain(values, rates, rates_only=True)


def random_region(n: int, rng: np.random.Generator, nonempty: bool = True) -> StoppingRegion:
    """Uniform random subset of the n states"""
    while True:
        members = np.flatnonzero(rng.random(n) < 0.5)
        if members.size or not nonempty:
            return StoppingRegion.of(n, members)


def random_discount(rng: np.random.Generator, family: Optional[str] = None) -> DiscountFn:
    """Hyperbolic with beta in [0.5, 5] or the gamma = 1/2 generalized hyperbolic family"""
    family = family or rng.choice(['hyperbolic', 'generalized_hyperbolic'])
    beta = float(rng.uniform(0.5, 5.0))
    if family == 'hyperbolic':
        return discount.hyperbolic(beta)
    return discount.generalized_hyperbolic(beta, 0.5)


class ChainGenerator:
    """Reproducible stream of random sweep instances"""

    STATE_RANGE = (3, 8)
    MAX_RATE = 5.0
    VALUE_RANGE = (0.0, 100.0)

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def chain(self, n: Optional[int] = None, **options) -> Chain:
        n = n or int(self.rng.integers(self.STATE_RANGE[0], self.STATE_RANGE[1] + 1))
        options.setdefault('max_rate', self.MAX_RATE)
        options.setdefault('value_range', self.VALUE_RANGE)
        return random_chain(n, self.rng, **options)

    def region(self, chain: Chain, nonempty: bool = True) -> StoppingRegion:
        return random_region(chain.n_states, self.rng, nonempty=nonempty)

    def discount(self, family: Optional[str] = None) -> DiscountFn:
        return random_discount(self.rng, family)

    def exponential_rate(self) -> float:
        return float(self.rng.uniform(0.2, 3.0))

    def instances(self, count: int, family: Optional[str] = None):
        """Yield (chain, discount) pairs"""
        for index in range(count):
            chain = self.chain()
            logger.debug('instance %d: %d states', index, chain.n_states)
            yield chain, self.discount(family)
