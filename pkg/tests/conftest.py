"""Shared fixtures: the four-state worked example and two-state chains"""
import sys
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from shared.data_layer.models import StoppingRegion
from shared.engine import ctmc, discount

EXAMPLE_STATES = (10.0, 40.0, 46.0, 100.0)
EXAMPLE_GENERATOR = (
    (-3.0, 1.0, 1.0, 1.0),
    (0.0, -1.0, 0.0, 1.0),
    (0.0, 0.4, -2.0, 1.6),
    (1.0, 1.0, 1.0, -3.0),
)
EXAMPLE_BETA = 3.0


@pytest.fixture
def example_chain():
    return ctmc.build_chain(EXAMPLE_STATES, EXAMPLE_GENERATOR)


@pytest.fixture
def hyperbolic3():
    return discount.hyperbolic(EXAMPLE_BETA)


@pytest.fixture
def region_of():
    """region_of(chain, 'x2', 'x4') -> StoppingRegion"""
    def build(chain, *labels):
        return StoppingRegion.of(chain.n_states, [chain.index_of(label) for label in labels])
    return build


@pytest.fixture
def example_model():
    """Model-file document for the worked example"""
    return {
        'schema': 1,
        'chain': {
            'states': [{'label': f'x{i + 1}', 'value': v} for i, v in enumerate(EXAMPLE_STATES)],
            'rates': [[0.0 if i == j else q for j, q in enumerate(row)] for i, row in enumerate(EXAMPLE_GENERATOR)],
        },
        'discount': {'kind': 'hyperbolic', 'beta': EXAMPLE_BETA},
    }
