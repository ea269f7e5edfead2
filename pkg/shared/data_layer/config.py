"""Runtime configuration for the equilibrium stopping toolkit"""
import os
from pathlib import Path

from dotenv import load_dotenv

# Get the base directory (project root)
BASE_DIR = Path(__file__).parent.parent.parent
load_dotenv(BASE_DIR / '.env')


def _float_list(raw: str):
    return tuple(float(v) for v in raw.split(',') if v.strip())


class AppConfig:
    """Application configuration"""

    BASE_DIR = BASE_DIR

    # Numerical tolerances, expressed relative to C = max state value
    TOL_SCALE = float(os.getenv('STOPPING_TOL_SCALE', '1e-9'))
    VALUE_TOL_SCALE = float(os.getenv('STOPPING_VALUE_TOL_SCALE', '1e-11'))
    EPS_GRID = _float_list(os.getenv('STOPPING_EPS_GRID', '1e-2,1e-3,1e-4'))
    VALUATION_METHOD = os.getenv('STOPPING_VALUATION_METHOD', 'mixture')
    ENUMERATION_LIMIT = int(os.getenv('STOPPING_ENUMERATION_LIMIT', 20))
    MILD_ENUMERATION_LIMIT = int(os.getenv('STOPPING_MILD_ENUMERATION_LIMIT', 16))

    # Monte Carlo oracle
    SEED = int(os.getenv('STOPPING_SEED', 0))
    MC_PATHS = int(os.getenv('STOPPING_MC_PATHS', 100000))

    # Pre-commitment dynamic programming
    PUT_DT = float(os.getenv('STOPPING_PUT_DT', '5e-4'))
    GRID_TOL_SCALE = float(os.getenv('STOPPING_GRID_TOL_SCALE', '1e-3'))

    # Output
    SCHEMA_VERSION = 1
    LOG_LEVEL = os.getenv('STOPPING_LOG_LEVEL', 'WARNING').upper()

    # API configuration
    DEBUG = os.getenv('FLASK_DEBUG', '0') == '1'
    API_PORT = int(os.getenv('API_PORT', 5004))
    CORS_ORIGINS = os.getenv('CORS_ORIGINS', 'http://localhost:3000').split(',')

    @classmethod
    def tolerance_for(cls, payoff_bound: float) -> float:
        """Default equilibrium tolerance tol = TOL_SCALE * C (C floored at 1)"""
        return cls.TOL_SCALE * max(payoff_bound, 1.0)

    @classmethod
    def value_tolerance_for(cls, payoff_bound: float) -> float:
        """Default quadrature tolerance for J, well below the equilibrium tolerance"""
        return cls.VALUE_TOL_SCALE * max(payoff_bound, 1.0)
