"""Model file access for the equilibrium stopping toolkit"""
import json
import logging
from pathlib import Path
from typing import Iterable, Optional, Union

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import ConfigError
from shared.data_layer.models import Chain, ModelConfig, StoppingRegion

logger = logging.getLogger(__name__)

CHAIN_FORMS = ('chain', 'two_state', 'put')
TWO_STATE_KEYS = ('a', 'b', 'lambda_a', 'lambda_b')
PUT_KEYS = ('u', 'p', 'lambda', 'beta', 'K')
PUT_OPTION_KEYS = ('horizon', 'dt')


class ModelConfigRepository:
    """Repository for JSON model files"""

    @staticmethod
    def load(path: Union[str, Path]) -> dict:
        """Read a model file into a plain dict"""
        try:
            with open(path, encoding='utf-8') as handle:
                document = json.load(handle)
        except OSError as exc:
            raise ConfigError(f'Cannot read model file {path}: {exc.strerror}')
        except json.JSONDecodeError as exc:
            raise ConfigError(f'Model file {path} is not valid JSON: {exc}')
        logger.debug('loaded model file %s', path)
        return document

    @staticmethod
    def parse(document: dict) -> ModelConfig:
        """Validate the schema and build the chain (or shorthand) and discount"""
        # engine imports stay local: the engine depends on this package
        from shared.engine import discount
        from shared.engine.putmodel import put_model

        if not isinstance(document, dict):
            raise ConfigError('Model file must contain a JSON object')
        schema = document.get('schema', AppConfig.SCHEMA_VERSION)
        if schema != AppConfig.SCHEMA_VERSION:
            raise ConfigError(f'Unsupported schema version {schema!r}; expected {AppConfig.SCHEMA_VERSION}')

        forms = [form for form in CHAIN_FORMS if form in document]
        if len(forms) != 1:
            raise ConfigError(f'Exactly one of {", ".join(CHAIN_FORMS)} is required, found {forms or "none"}')
        kind = forms[0]

        config = ModelConfig(kind=kind)
        if kind == 'chain':
            config.chain = ModelConfigRepository.parse_chain(document['chain'])
        elif kind == 'two_state':
            config.two_state = ModelConfigRepository._numbers(document['two_state'], TWO_STATE_KEYS, 'two_state')
        else:
            spec = document['put']
            values = ModelConfigRepository._numbers(spec, PUT_KEYS, 'put')
            config.put = put_model(values['u'], values['p'], values['lambda'], values['beta'], values['K'],
                                   i_min=ModelConfigRepository._optional_int(spec, 'i_min'),
                                   i_max=ModelConfigRepository._optional_int(spec, 'i_max'))
            config.put_options = {key: float(spec[key]) for key in PUT_OPTION_KEYS if key in spec}

        if 'discount' in document:
            config.discount = discount.from_spec(document['discount'])
        elif kind == 'put':
            config.discount = discount.hyperbolic(config.put.beta)
        else:
            raise ConfigError('A "discount" entry is required for chain and two_state models')

        if 'region' in document:
            region = document['region']
            if not isinstance(region, list) or not all(isinstance(label, str) for label in region):
                raise ConfigError('"region" must be a list of state labels')
            config.region = tuple(region)

        tolerances = document.get('tolerances', {})
        config.tol = ModelConfigRepository._positive(tolerances.get('tol'), 'tolerances.tol')
        config.value_tol = ModelConfigRepository._positive(tolerances.get('value_tol'), 'tolerances.value_tol')
        if 'eps_grid' in document:
            grid = document['eps_grid']
            if not isinstance(grid, list) or not grid:
                raise ConfigError('"eps_grid" must be a non-empty list of delays')
            config.eps_grid = tuple(ModelConfigRepository._positive(eps, 'eps_grid') for eps in grid)
        try:
            config.seed = int(document.get('seed', AppConfig.SEED))
        except (TypeError, ValueError):
            raise ConfigError('"seed" must be an integer')
        config.monte_carlo = dict(document.get('monte_carlo', {}))
        config.grid = dict(document.get('grid', {}))
        return config

    @staticmethod
    def parse_chain(spec: dict) -> Chain:
        """{"states": [{"label", "value"}], "rates": off-diagonal matrix} -> Chain"""
        from shared.engine.ctmc import build_chain

        try:
            states = spec['states']
            rates = spec['rates']
            labels = [str(state['label']) for state in states]
            values = [float(state['value']) for state in states]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f'Chain entry needs "states" with label/value and "rates": {exc}')
        if not isinstance(rates, list) or len(rates) != len(states) \
                or not all(isinstance(row, list) and len(row) == len(states) for row in rates):
            raise ConfigError(f'"rates" must be a {len(states)} x {len(states)} matrix')
        try:
            matrix = [[float(v) for v in row] for row in rates]
        except (TypeError, ValueError):
            raise ConfigError('"rates" entries must be numbers')
        return build_chain(values, matrix, labels=labels, rates_only=True)

    @staticmethod
    def parse_region(chain: Chain, labels: Optional[Iterable[str]]) -> StoppingRegion:
        """State labels -> StoppingRegion (unknown labels are invariant violations)"""
        labels = list(labels or [])
        return StoppingRegion.of(chain.n_states, [chain.index_of(label) for label in labels])

    @staticmethod
    def _numbers(spec, keys, name) -> dict:
        if not isinstance(spec, dict):
            raise ConfigError(f'"{name}" must be an object')
        missing = [key for key in keys if key not in spec]
        if missing:
            raise ConfigError(f'"{name}" is missing {", ".join(missing)}')
        try:
            return {key: float(spec[key]) for key in keys}
        except (TypeError, ValueError):
            raise ConfigError(f'"{name}" parameters must be numbers')

    @staticmethod
    def _optional_int(spec: dict, key: str) -> Optional[int]:
        if key not in spec:
            return None
        try:
            return int(spec[key])
        except (TypeError, ValueError):
            raise ConfigError(f'"put.{key}" must be an integer')

    @staticmethod
    def _positive(value, name: str) -> Optional[float]:
        if value is None:
            return None
        try:
            value = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f'"{name}" must be a number')
        if not value > 0:
            raise ConfigError(f'"{name}" must be positive, got {value}')
        return value
