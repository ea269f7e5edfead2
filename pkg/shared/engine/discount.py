"""Discount functions with the derivative data and structural checks equilibrium analysis needs

Only continuous, completely monotone families are built in. Quasi-hyperbolic
discounting jumps at t = 0, so delta'(0) does not exist and the weak/strong
criteria cannot be evaluated; it is rejected rather than approximated.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import integrate

from shared.data_layer.errors import ConfigError, InvalidParameter, NegativeTime, NonpositiveRate
from shared.data_layer.models import DiscountFn, LogSubadditivityReport

logger = logging.getLogger(__name__)

KINDS = ('exponential', 'hyperbolic', 'generalized_hyperbolic')
UNSUPPORTED_KINDS = {
    'quasi_hyperbolic': 'discontinuous at t=0, so delta\'(0) does not exist',
    'pseudo_exponential': 'not a built-in family',
}
SUBADDITIVITY_TOL = 1e-12
TRUNCATION_MASS = 1e-14


def exponential(rate: float) -> DiscountFn:
    if not rate > 0:
        raise InvalidParameter(f'Exponential discount rate must be positive, got {rate}')
    return DiscountFn(kind='exponential', rate=float(rate))


def hyperbolic(beta: float) -> DiscountFn:
    if not beta > 0:
        raise InvalidParameter(f'Hyperbolic beta must be positive, got {beta}')
    return DiscountFn(kind='hyperbolic', beta=float(beta), gamma=1.0)


def generalized_hyperbolic(beta: float, gamma: float) -> DiscountFn:
    if not beta > 0 or not gamma > 0:
        raise InvalidParameter(f'Generalized hyperbolic needs beta, gamma > 0, got {beta}, {gamma}')
    return DiscountFn(kind='generalized_hyperbolic', beta=float(beta), gamma=float(gamma))


def from_spec(spec: dict) -> DiscountFn:
    """Build a DiscountFn from a model-file entry {kind, parameters}"""
    if not isinstance(spec, dict) or 'kind' not in spec:
        raise ConfigError('Discount entry must be an object with a "kind" field')
    kind = spec['kind']
    if kind in UNSUPPORTED_KINDS:
        raise InvalidParameter(f'Discount kind {kind!r} is unsupported: {UNSUPPORTED_KINDS[kind]}')
    try:
        if kind == 'exponential':
            return exponential(float(spec['rate']))
        if kind == 'hyperbolic':
            return hyperbolic(float(spec['beta']))
        if kind == 'generalized_hyperbolic':
            return generalized_hyperbolic(float(spec['beta']), float(spec['gamma']))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f'Discount entry for {kind!r} is missing or has a bad parameter: {exc}')
    raise ConfigError(f'Unknown discount kind {kind!r}; expected one of {", ".join(KINDS)}')


def evaluate(d: DiscountFn, t):
    """delta(t); accepts scalars or arrays, and delta(inf) = 0"""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise NegativeTime('Discount function is only defined for t >= 0')
    if d.kind == 'exponential':
        out = np.exp(-d.rate * t_arr)
    elif d.kind == 'hyperbolic':
        out = 1.0 / (1.0 + d.beta * t_arr)
    else:
        out = (1.0 + d.beta * t_arr) ** (-d.gamma)
    return float(out) if out.ndim == 0 else out


def derivatives_at_zero(d: DiscountFn) -> Tuple[float, float]:
    """(delta'(0), delta''(0))"""
    if d.kind == 'exponential':
        return -d.rate, d.rate ** 2
    return -d.gamma * d.beta, d.gamma * (d.gamma + 1.0) * d.beta ** 2


def check_log_subadditive(d: Union[DiscountFn, Callable], grid_max: float = 10.0, grid_points: int = 200,
                          method: str = 'auto') -> LogSubadditivityReport:
    """Check delta(s) delta(t) <= delta(s + t)

    Built-in kinds have decreasing impatience and get an analytic certificate unless
    method='grid'; any other callable is checked on a (grid_points x grid_points) grid.
    """
    if grid_max <= 0:
        raise InvalidParameter('grid_max must be positive')
    if isinstance(d, DiscountFn) and d.kind in KINDS and method != 'grid':
        return LogSubadditivityReport(holds=True, worst_violation=0.0, method='analytic')

    fn = (lambda t: evaluate(d, t)) if isinstance(d, DiscountFn) else d
    grid = np.linspace(0.0, grid_max, grid_points)
    s, t = np.meshgrid(grid, grid)
    excess = np.asarray(fn(s)) * np.asarray(fn(t)) - np.asarray(fn(s + t))
    worst = max(float(excess.max()), 0.0)
    return LogSubadditivityReport(holds=worst <= SUBADDITIVITY_TOL, worst_violation=worst, method='grid')


def expected_discount_of_exponential(d: DiscountFn, rate: float, shift: float = 0.0) -> float:
    """E[delta(shift + T)] for T ~ Exp(rate), i.e. int_0^inf rate delta(shift+t) e^{-rate t} dt"""
    if not rate > 0:
        raise NonpositiveRate(f'Holding rate must be positive, got {rate}')
    if shift < 0:
        raise NegativeTime(f'Shift must be nonnegative, got {shift}')
    upper = -math.log(TRUNCATION_MASS) / rate
    value, abserr = integrate.quad(
        lambda t: rate * evaluate(d, shift + t) * math.exp(-rate * t),
        0.0, upper, epsabs=0.0, epsrel=1e-11, limit=200
    )
    logger.debug('E[delta(%g + T)] for rate %g: %.12g (err %.1e)', shift, rate, value, abserr)
    return value


def _exponential_reference(d: DiscountFn, rate: float) -> float:
    """c_x = lambda / (lambda - delta'(0)): E[delta(T)] when delta is exponential with delta'(0)"""
    first, _ = derivatives_at_zero(d)
    return rate / (rate - first)


@dataclass(frozen=True)
class DiscountMixture:
    """delta(shift + t) written as a mixture of exponentials in t

    delta(shift + t) = atom_weight e^{-atom_rate t}              (exponential)
                     = int_0^upper mass(w) e^{-decay(w) t} dw    (generalized hyperbolic)
    """
    d: DiscountFn
    shift: float
    atom_rate: Optional[float] = None
    atom_weight: Optional[float] = None
    upper: float = 0.0

    @property
    def is_atomic(self) -> bool:
        return self.atom_rate is not None

    def decay(self, w):
        return self.d.beta * np.asarray(w, dtype=float) ** (1.0 / self.d.gamma)

    def mass(self, w):
        v = np.asarray(w, dtype=float) ** (1.0 / self.d.gamma)
        return np.exp(-(1.0 + self.d.beta * self.shift) * v) / math.gamma(self.d.gamma + 1.0)


def mixture(d: DiscountFn, shift: float = 0.0) -> DiscountMixture:
    """Exponential-mixture representation of t -> delta(shift + t)"""
    if shift < 0:
        raise NegativeTime(f'Shift must be nonnegative, got {shift}')
    if d.kind == 'exponential':
        return DiscountMixture(d=d, shift=shift, atom_rate=d.rate, atom_weight=math.exp(-d.rate * shift))
    # substituting v = w^{1/gamma} in the Gamma-mixture makes the weight smooth at 0
    upper = (-math.log(TRUNCATION_MASS) / (1.0 + d.beta * shift)) ** d.gamma
    return DiscountMixture(d=d, shift=shift, upper=upper)
