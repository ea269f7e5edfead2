"""Flask application exposing equilibrium stopping analysis over HTTP"""
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from flask import Flask, jsonify, request
from flask_cors import CORS

# Add project root to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import ConfigError, StoppingError
from shared.data_layer.repositories import ModelConfigRepository
from shared.services.analysis_service import AnalysisService
from shared.utils.helpers import parse_labels, to_builtin

logger = logging.getLogger(__name__)

# Create Flask app
app = Flask(__name__)
app.config.from_object(AppConfig)
CORS(app, origins=AppConfig.CORS_ORIGINS)


def _model_from_request():
    """Parse the JSON body as a model file; returns (config, body)"""
    body = request.get_json(silent=True)
    if not isinstance(body, dict):
        raise ConfigError('Request body must be a JSON model object')
    model = dict(body)
    model.pop('tol', None)
    if isinstance(model.get('region'), str):
        model['region'] = parse_labels(model['region'])
    return ModelConfigRepository.parse(model), body


def _tolerance(body):
    tol = body.get('tol')
    if tol is None:
        return None
    try:
        return float(tol)
    except (TypeError, ValueError):
        raise ConfigError('"tol" must be a number')


@app.route('/')
def index():
    """Root endpoint with API information"""
    return jsonify({
        'message': 'Equilibrium Stopping Analysis API',
        'version': '1.0.0',
        'schema': AppConfig.SCHEMA_VERSION,
        'endpoints': {
            'health': '/api/health',
            'validate': '/api/validate',
            'classify': '/api/classify',
            'iterate': '/api/iterate',
            'enumerate': '/api/enumerate',
            'two_state_map': '/api/two-state-map',
            'put': '/api/put'
        }
    })


@app.route('/api/health')
def health():
    """Health check endpoint"""
    return jsonify({
        'status': 'healthy',
        'timestamp': datetime.now(timezone.utc).isoformat()
    })


@app.route('/api/validate', methods=['POST'])
def validate():
    """Chain and discount construction report"""
    config, _ = _model_from_request()
    return jsonify(AnalysisService.validate(config))


@app.route('/api/classify', methods=['POST'])
def classify():
    """Mild/weak/strong classification of the body's region"""
    config, body = _model_from_request()
    return jsonify(AnalysisService.classify(config, tol=_tolerance(body)))


@app.route('/api/iterate', methods=['POST'])
def iterate():
    """Optimal mild equilibrium trace; the step table is returned as records"""
    config, body = _model_from_request()
    document, frame = AnalysisService.iterate(config, tol=_tolerance(body))
    document['table'] = to_builtin(frame.to_dict(orient='records'))
    return jsonify(document)


@app.route('/api/enumerate', methods=['POST'])
def enumerate_mild():
    """All mild regions of a small chain"""
    config, body = _model_from_request()
    return jsonify(AnalysisService.enumerate(config, tol=_tolerance(body)))


@app.route('/api/two-state-map', methods=['POST'])
def two_state_map():
    """Case map over the (b/a, lambda_b) grid"""
    config, body = _model_from_request()
    document, frame = AnalysisService.two_state_map(config, tol=_tolerance(body))
    document['table'] = to_builtin(frame.to_dict(orient='records'))
    return jsonify(document)


@app.route('/api/put', methods=['POST'])
def put():
    """Put model: equilibrium vs pre-commitment exercise"""
    config, body = _model_from_request()
    document, frame = AnalysisService.put(config, tol=_tolerance(body))
    document['table'] = to_builtin(frame.to_dict(orient='records'))
    return jsonify(document)


@app.errorhandler(StoppingError)
def stopping_error(error):
    """Model errors are 400, invariant and numerical failures 422"""
    status = 400 if isinstance(error, ConfigError) else 422
    logger.warning('%s: %s', type(error).__name__, error)
    return jsonify({'error': str(error), 'type': type(error).__name__, 'exit_code': error.exit_code}), status


@app.errorhandler(404)
def not_found(error):
    """Handle 404 errors"""
    return jsonify({'error': 'Not found'}), 404


@app.errorhandler(500)
def internal_error(error):
    """Handle 500 errors"""
    return jsonify({'error': 'Internal server error'}), 500


if __name__ == '__main__':
    logging.basicConfig(stream=sys.stderr, level=AppConfig.LOG_LEVEL)
    port = AppConfig.API_PORT
    print(f"\n🚀 Starting Equilibrium Stopping Analysis API on port {port}...")
    print(f"📊 API Documentation: http://localhost:{port}/")
    print(f"🏥 Health Check: http://localhost:{port}/api/health\n")

    app.run(
        host='0.0.0.0',
        port=port,
        debug=AppConfig.DEBUG
    )
