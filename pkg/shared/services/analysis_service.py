"""Analysis service: turns parsed model files into JSON documents and CSV tables"""
import logging
from dataclasses import asdict
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import ConfigError
from shared.data_layer.models import Chain, Classification, IterationTrace, ModelConfig
from shared.data_layer.repositories import ModelConfigRepository
from shared.engine import discount, equilibrium, putmodel
from shared.engine.ctmc import is_birth_death, is_irreducible
from shared.engine.valuation import hitting_value, mc_hitting_value
from shared.utils.helpers import to_builtin

logger = logging.getLogger(__name__)

GRID_DEFAULTS = {
    'ratio_min': 0.05, 'ratio_max': 0.95, 'ratio_points': 50,
    'lambda_b_min': 0.1, 'lambda_b_max': 5.0, 'lambda_b_points': 50,
    'cross_check': True,
}


class AnalysisService:
    """Service for the validate/classify/iterate/enumerate/two-state-map/put commands"""

    @staticmethod
    def document(command: str, body: dict) -> dict:
        """Wrap a command result in the versioned top-level envelope"""
        return to_builtin({'schema': AppConfig.SCHEMA_VERSION, 'command': command, **body})

    @staticmethod
    def chain_for(config: ModelConfig) -> Chain:
        """The chain a model file describes, whatever its form"""
        if config.kind == 'chain':
            return config.chain
        if config.kind == 'two_state':
            params = config.two_state
            equilibrium.check_two_state(params['a'], params['b'], params['lambda_a'], params['lambda_b'])
            return equilibrium.two_state_chain(params['a'], params['b'], params['lambda_a'], params['lambda_b'])
        return putmodel.build_put_chain(config.put)

    @staticmethod
    def tolerance(config: ModelConfig, chain: Chain, tol: Optional[float] = None) -> float:
        """CLI flag, then model file, then AppConfig default"""
        if tol is not None:
            if not tol > 0:
                raise ConfigError(f'Tolerance must be positive, got {tol}')
            return tol
        return config.tol if config.tol is not None else AppConfig.tolerance_for(chain.payoff_bound)

    @staticmethod
    def validate(config: ModelConfig) -> dict:
        """Construction report with irreducibility and log-subadditivity certificates"""
        chain = AnalysisService.chain_for(config)
        d = config.discount
        first, second = discount.derivatives_at_zero(d)
        report = discount.check_log_subadditive(d)
        return AnalysisService.document('validate', {
            'valid': True,
            'kind': config.kind,
            'n_states': chain.n_states,
            'labels': list(chain.labels),
            'values': chain.values,
            'holding_rates': chain.holding_rates,
            'irreducible': is_irreducible(chain),
            'birth_death': is_birth_death(chain),
            'discount': {
                **asdict(d),
                'derivative_at_zero': first,
                'second_derivative_at_zero': second,
                'log_subadditive': asdict(report),
            },
        })

    @staticmethod
    def classification_dict(chain: Chain, result: Classification) -> dict:
        label = chain.labels.__getitem__
        return {
            'region': result.region.labels(chain),
            'mild': {
                'holds': result.mild.holds,
                'worst_gap': result.mild.worst_gap,
                'worst_state': label(result.mild.worst_state) if result.mild.worst_state is not None else None,
                'gaps': {label(x): gap for x, gap in result.mild.gaps.items()},
            },
            'weak': {
                'holds': result.weak.holds,
                'evaluated': result.weak.evaluated,
                'gaps': {label(x): gap for x, gap in result.weak.gaps.items()},
            },
            'strong': {
                'verdict': result.strong.verdict,
                'method': result.strong.method,
                'states': {label(x): {'verdict': s.verdict, 'method': s.method, 'detail': list(s.detail)}
                           for x, s in result.strong.per_state.items()},
            },
            'is_mild': result.is_mild,
            'is_weak': result.is_weak,
            'is_strong': result.is_strong,
            'irreducibility_warning': result.irreducibility_warning,
            'tol': result.tol,
            'eps_grid': list(result.eps_grid),
        }

    @staticmethod
    def classify(config: ModelConfig, region_labels: Optional[Iterable[str]] = None,
                 tol: Optional[float] = None) -> dict:
        """Classification of one region, plus an optional Monte Carlo cross-check of J"""
        chain = AnalysisService.chain_for(config)
        labels = list(region_labels) if region_labels is not None else config.region
        if labels is None:
            raise ConfigError('classify needs a region: pass --region or set "region" in the model file')
        region = ModelConfigRepository.parse_region(chain, labels)
        tol = AnalysisService.tolerance(config, chain, tol)

        result = equilibrium.classify(chain, config.discount, region, tol=tol, eps_grid=config.eps_grid,
                                      value_tol=config.value_tol)
        body = AnalysisService.classification_dict(chain, result)

        if config.monte_carlo and len(region):
            values = hitting_value(chain, config.discount, region, tol=config.value_tol).values
            paths = int(config.monte_carlo.get('paths', AppConfig.MC_PATHS))
            horizon = float(config.monte_carlo.get('horizon', 200.0))
            body['monte_carlo'] = {}
            for offset, x in enumerate(region.complement):
                estimate = mc_hitting_value(chain, config.discount, region, x, paths, horizon,
                                            seed=config.seed + offset)
                body['monte_carlo'][chain.labels[x]] = {**asdict(estimate), 'quadrature': values[x]}
        return AnalysisService.document('classify', body)

    @staticmethod
    def trace_frame(chain: Chain, trace: IterationTrace) -> pd.DataFrame:
        """One row per (step, evaluated state)"""
        rows = []
        for step in trace.steps:
            for x, response in step.best_responses.items():
                rows.append({
                    'step': step.index,
                    'state': chain.labels[x],
                    'value': response.state_value,
                    'sup_value': response.sup_value,
                    'margin': response.margin,
                    'argmax': '|'.join(response.argmax.labels(chain)) if response.argmax else '',
                    'candidates': response.candidates,
                    'added': x in step.added,
                })
        return pd.DataFrame(rows, columns=['step', 'state', 'value', 'sup_value', 'margin', 'argmax',
                                           'candidates', 'added'])

    @staticmethod
    def iterate(config: ModelConfig, tol: Optional[float] = None) -> Tuple[dict, pd.DataFrame]:
        """Optimal mild equilibrium iteration trace"""
        chain = AnalysisService.chain_for(config)
        tol = AnalysisService.tolerance(config, chain, tol)
        trace = equilibrium.iterate_optimal(chain, config.discount, tol=tol, value_tol=config.value_tol)

        body = {
            'initial': trace.initial.labels(chain),
            'steps': [
                {
                    'index': step.index,
                    'region': step.region.labels(chain),
                    'added': [chain.labels[x] for x in step.added],
                    'certificates': {chain.labels[x]: margin for x, margin in step.certificates.items()},
                    'sup_values': {chain.labels[x]: br.sup_value for x, br in step.best_responses.items()},
                }
                for step in trace.steps
            ],
            'final': trace.final.labels(chain),
            'augmenting_steps': trace.augmenting_steps,
            'tol': tol,
        }
        if config.discount.kind == 'exponential':
            classical, _ = equilibrium.classical_stopping_region(chain, config.discount.rate, tol=tol)
            body['classical_region'] = classical.labels(chain)
            body['matches_classical'] = classical == trace.final
        return AnalysisService.document('iterate', body), AnalysisService.trace_frame(chain, trace)

    @staticmethod
    def enumerate(config: ModelConfig, tol: Optional[float] = None) -> dict:
        """All mild regions, with the smallest/optimal check for the first one"""
        chain = AnalysisService.chain_for(config)
        tol = AnalysisService.tolerance(config, chain, tol)
        regions = equilibrium.enumerate_mild(chain, config.discount, tol=tol, value_tol=config.value_tol)
        body = {'count': len(regions), 'mild_regions': [r.labels(chain) for r in regions]}
        if regions:
            report = equilibrium.verify_optimal(chain, config.discount, regions[0], tol=tol,
                                                value_tol=config.value_tol)
            body['smallest'] = {'region': regions[0].labels(chain), 'is_smallest': report.smallest,
                                'is_optimal': report.optimal}
        return AnalysisService.document('enumerate', body)

    @staticmethod
    def grid_settings(config: ModelConfig) -> Dict[str, float]:
        settings = {**GRID_DEFAULTS, **config.grid}
        unknown = set(config.grid) - set(GRID_DEFAULTS)
        if unknown:
            raise ConfigError(f'Unknown grid keys: {", ".join(sorted(unknown))}')
        return settings

    @staticmethod
    def two_state_map(config: ModelConfig, tol: Optional[float] = None) -> Tuple[dict, pd.DataFrame]:
        """Case labels over a (b/a, lambda_b) grid; a and lambda_a come from the model

        Each lambda_b row also gets the critical ratio lambda_b / (lambda_b - delta'(0))
        so the boundary case (iv) is always sampled.
        """
        if config.kind != 'two_state':
            raise ConfigError('two-state-map needs a "two_state" model')
        model = config.two_state
        equilibrium.check_two_state(model['a'], model['b'], model['lambda_a'], model['lambda_b'])
        a, lambda_a = model['a'], model['lambda_a']
        settings = AnalysisService.grid_settings(config)
        d = config.discount
        first, _ = discount.derivatives_at_zero(d)
        tol = tol if tol is not None else (config.tol if config.tol is not None else AppConfig.tolerance_for(a))

        ratios = np.linspace(settings['ratio_min'], settings['ratio_max'], int(settings['ratio_points']))
        lambdas = np.linspace(settings['lambda_b_min'], settings['lambda_b_max'], int(settings['lambda_b_points']))
        rows = []
        for lambda_b in lambdas:
            critical = lambda_b / (lambda_b - first)
            for ratio, is_critical in [(r, False) for r in ratios] + [(critical, True)]:
                if not 0 < ratio < 1:
                    continue
                report = equilibrium.classify_two_state(a, ratio * a, lambda_a, lambda_b, d, tol=tol,
                                                        cross_check=bool(settings['cross_check']))
                full = report.closed_form['{a,b}']
                rows.append({
                    'lambda_b': lambda_b,
                    'ratio': ratio,
                    'critical_row': is_critical,
                    'case': report.case,
                    'first_order_ratio': report.first_order_ratio,
                    'expected_discount': report.expected_discount,
                    'second_order': report.second_order,
                    'singleton_mild': report.closed_form['{a}'].mild,
                    'full_weak': full.weak,
                    'full_strong': full.strong,
                    'full_optimal': full.optimal,
                    'weak_not_strong': bool(full.weak) and full.strong is False,
                    'agrees': report.agrees,
                })
        frame = pd.DataFrame(rows)
        logger.info('two-state map: %d cells', len(frame))
        body = {
            'a': a,
            'lambda_a': lambda_a,
            'cells': len(frame),
            'cases': frame['case'].value_counts().sort_index().to_dict() if len(frame) else {},
            'weak_not_strong': int(frame['weak_not_strong'].sum()) if len(frame) else 0,
            'disagreements': int((~frame['agrees']).sum()) if len(frame) else 0,
            'cross_check': bool(settings['cross_check']),
        }
        return AnalysisService.document('two-state-map', body), frame

    @staticmethod
    def put(config: ModelConfig, tol: Optional[float] = None) -> Tuple[dict, pd.DataFrame]:
        """Equilibrium against pre-commitment exercise for the put model"""
        if config.kind != 'put':
            raise ConfigError('put needs a "put" model')
        m = config.put
        chain = putmodel.build_put_chain(m)
        tol = AnalysisService.tolerance(config, chain, tol)
        comparison = putmodel.compare_exercise(m, horizon=config.put_options.get('horizon'),
                                               dt=config.put_options.get('dt'), tol=tol)
        threshold = comparison.threshold
        body = {
            'alpha1': comparison.alpha1,
            'n0': threshold.n0,
            'm0': threshold.m0,
            'log_value': threshold.log_value,
            'sandwich_holds': threshold.sandwich_holds,
            'S_inf': comparison.equilibrium_region.labels(chain),
            'S_inf_max_exponent': int(m.exponents[max(comparison.equilibrium_region.indices)])
            if len(comparison.equilibrium_region) else None,
            'A0': comparison.precommitment_region.labels(chain),
            'containment_holds': comparison.containment_holds,
            'augmenting_steps': comparison.trace.augmenting_steps,
            'step_bound': comparison.step_bound,
            'richardson_error': comparison.precommitment.richardson_error,
            'truncation': [m.i_min, m.i_max],
        }
        equilibrium_values = hitting_value(chain, putmodel.put_discount(m), comparison.equilibrium_region).values
        frame = pd.DataFrame({
            'i': m.exponents,
            'payoff': chain.values,
            'J': equilibrium_values,
            'U': comparison.precommitment.values,
            'in_S_inf': comparison.equilibrium_region.mask,
            'in_A0': comparison.precommitment_region.mask,
        })
        return AnalysisService.document('put', body), frame
