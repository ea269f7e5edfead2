"""End-to-end tests for scripts/stopping_cli.py"""
import importlib.util
import json
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest

from shared.data_layer.errors import ToleranceUnreachable

CLI = Path(__file__).parent.parent / 'scripts' / 'stopping_cli.py'

TWO_STATE_II = {
    'two_state': {'a': 1.0, 'b': 0.3, 'lambda_a': 1.0, 'lambda_b': 1.0},
    'discount': {'kind': 'hyperbolic', 'beta': 1.0},
}


def run_cli(*args):
    return subprocess.run([sys.executable, str(CLI), *map(str, args)], capture_output=True, text=True)


@pytest.fixture
def write_model(tmp_path):
    def write(document, name='model.json'):
        path = tmp_path / name
        path.write_text(json.dumps(document))
        return path
    return write


def test_validate(write_model, example_model):
    result = run_cli('validate', '--config', write_model(example_model))
    assert result.returncode == 0, result.stderr
    document = json.loads(result.stdout)
    assert document['schema'] == 1
    assert document['command'] == 'validate'
    assert document['irreducible'] is True
    assert document['labels'] == ['x1', 'x2', 'x3', 'x4']
    assert document['discount']['derivative_at_zero'] == pytest.approx(-3.0)


def test_classify_region_flag(write_model, example_model):
    result = run_cli('classify', '--config', write_model(example_model), '--region', 'x2,x3,x4')
    assert result.returncode == 0, result.stderr
    document = json.loads(result.stdout)
    assert document['is_mild'] and document['is_weak'] and document['is_strong']
    assert document['region'] == ['x2', 'x3', 'x4']


def test_classify_not_mild(write_model, example_model):
    result = run_cli('classify', '--config', write_model(example_model), '--region', 'x4')
    document = json.loads(result.stdout)
    assert document['is_mild'] is False
    assert document['mild']['worst_state'] == 'x2'
    assert document['strong']['verdict'] == 'not_evaluated'


def test_iterate_writes_steps_table(write_model, example_model, tmp_path):
    prefix = tmp_path / 'run'
    result = run_cli('iterate', '--config', write_model(example_model), '--out', prefix)
    assert result.returncode == 0, result.stderr
    document = json.loads(result.stdout)
    assert document['final'] == ['x2', 'x3', 'x4']
    assert document['augmenting_steps'] == 2
    assert [step['region'] for step in document['steps']][:2] == [['x2', 'x4'], ['x2', 'x3', 'x4']]

    table = pd.read_csv(f'{prefix}_steps.csv')
    assert list(table.columns) == ['step', 'state', 'value', 'sup_value', 'margin', 'argmax',
                                   'candidates', 'added']
    added = table[table['added']]
    assert sorted(added['state']) == ['x2', 'x3', 'x4']


def test_iterate_exponential_matches_classical(write_model, example_model):
    example_model['discount'] = {'kind': 'exponential', 'rate': 0.5}
    result = run_cli('iterate', '--config', write_model(example_model))
    document = json.loads(result.stdout)
    assert document['matches_classical'] is True
    assert document['augmenting_steps'] == 1


def test_single_state_chain(write_model):
    model = {
        'chain': {'states': [{'label': 'only', 'value': 5.0}], 'rates': [[0.0]]},
        'discount': {'kind': 'hyperbolic', 'beta': 1.0},
    }
    result = run_cli('iterate', '--config', write_model(model))
    assert result.returncode == 0, result.stderr
    assert json.loads(result.stdout)['final'] == ['only']


def test_enumerate_two_state(write_model):
    result = run_cli('enumerate', '--config', write_model(TWO_STATE_II))
    assert result.returncode == 0, result.stderr
    document = json.loads(result.stdout)
    assert document['mild_regions'] == [['a'], ['a', 'b']]
    assert document['smallest'] == {'region': ['a'], 'is_smallest': True, 'is_optimal': True}


def test_two_state_map_table(write_model, tmp_path):
    model = dict(TWO_STATE_II, grid={'ratio_points': 4, 'lambda_b_points': 3})
    prefix = tmp_path / 'map'
    result = run_cli('two-state-map', '--config', write_model(model), '--out', prefix)
    assert result.returncode == 0, result.stderr
    document = json.loads(result.stdout)
    assert document['disagreements'] == 0
    table = pd.read_csv(f'{prefix}_cases.csv')
    assert len(table) == document['cells'] == 15
    assert set(table['case']) <= {'i', 'ii', 'iii', 'iv', 'only_full'}


def test_monte_carlo_is_reproducible(write_model, example_model):
    example_model['region'] = ['x4']
    example_model['monte_carlo'] = {'paths': 2000, 'horizon': 50.0}
    example_model['seed'] = 7
    path = write_model(example_model)
    first = run_cli('classify', '--config', path)
    second = run_cli('classify', '--config', path)
    assert first.returncode == 0, first.stderr
    assert first.stdout == second.stdout
    estimates = json.loads(first.stdout)['monte_carlo']
    assert set(estimates) == {'x1', 'x2', 'x3'}


@pytest.mark.parametrize('mutate, exit_code, error_type', [
    (lambda m: m['chain']['rates'][0].__setitem__(1, -1.0), 3, 'NegativeRate'),
    (lambda m: m['chain']['states'][0].__setitem__('value', -5.0), 3, 'NegativeStateValue'),
    (lambda m: m.pop('discount'), 2, 'ConfigError'),
    (lambda m: m.__setitem__('schema', 7), 2, 'ConfigError'),
    (lambda m: m.__setitem__('discount', {'kind': 'quasi_hyperbolic', 'beta': 0.7}), 3, 'InvalidParameter'),
])
def test_error_exit_codes(write_model, example_model, mutate, exit_code, error_type):
    mutate(example_model)
    result = run_cli('validate', '--config', write_model(example_model))
    assert result.returncode == exit_code
    assert json.loads(result.stdout)['type'] == error_type


def test_malformed_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"chain": [')
    result = run_cli('validate', '--config', path)
    assert result.returncode == 2


def test_missing_file(tmp_path):
    result = run_cli('validate', '--config', tmp_path / 'nope.json')
    assert result.returncode == 2


def test_unknown_region_label(write_model, example_model):
    result = run_cli('classify', '--config', write_model(example_model), '--region', 'x9')
    assert result.returncode == 3


def test_enumeration_too_large(write_model):
    n = 22
    model = {
        'chain': {
            'states': [{'label': f's{i}', 'value': float(i + 1)} for i in range(n)],
            'rates': [[0.0 if i == j else 1.0 for j in range(n)] for i in range(n)],
        },
        'discount': {'kind': 'hyperbolic', 'beta': 1.0},
    }
    result = run_cli('iterate', '--config', write_model(model))
    assert result.returncode == 4
    assert json.loads(result.stdout)['type'] == 'EnumerationTooLarge'


@pytest.mark.slow
def test_put_command(write_model, tmp_path):
    model = {'put': {'u': 2.0, 'p': 0.55, 'lambda': 1.0, 'beta': 1.0, 'K': 10.0, 'i_min': -12, 'i_max': 30}}
    prefix = tmp_path / 'put'
    result = run_cli('put', '--config', write_model(model), '--out', prefix)
    assert result.returncode == 0, result.stderr
    document = json.loads(result.stdout)
    assert document['S_inf_max_exponent'] == document['n0']
    assert document['containment_holds'] is True
    assert document['augmenting_steps'] <= document['step_bound']

    table = pd.read_csv(f'{prefix}_values.csv')
    assert list(table.columns) == ['i', 'payoff', 'J', 'U', 'in_S_inf', 'in_A0']
    assert len(table) == 43


def test_two_state_map_rejects_equal_values(write_model):
    model = {
        'two_state': {'a': 1.0, 'b': 1.0, 'lambda_a': 1.0, 'lambda_b': 1.0},
        'discount': {'kind': 'hyperbolic', 'beta': 1.0},
        'grid': {'ratio_points': 3, 'lambda_b_points': 2},
    }
    result = run_cli('two-state-map', '--config', write_model(model))
    assert result.returncode == 3
    assert json.loads(result.stdout)['type'] == 'ParameterOrderViolation'


@pytest.fixture
def cli_module():
    spec = importlib.util.spec_from_file_location('stopping_cli', CLI)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def test_numerical_failure_exit_code(cli_module, monkeypatch, capsys, write_model, example_model):
    def fail(config):
        raise ToleranceUnreachable('quadrature did not converge')

    monkeypatch.setattr(cli_module.AnalysisService, 'validate', staticmethod(fail))
    code = cli_module.main(['validate', '--config', str(write_model(example_model))])
    assert code == 5
    assert json.loads(capsys.readouterr().out)['type'] == 'ToleranceUnreachable'


def test_unexpected_error_exit_code(cli_module, monkeypatch, capsys, write_model, example_model):
    def crash(config):
        raise RuntimeError('boom')

    monkeypatch.setattr(cli_module.AnalysisService, 'validate', staticmethod(crash))
    code = cli_module.main(['validate', '--config', str(write_model(example_model))])
    assert code == 1
    captured = capsys.readouterr()
    assert captured.out == ''
    assert 'RuntimeError' in captured.err
