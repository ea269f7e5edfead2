"""Continuation values J(x, S) = E_x[delta(tau_S) X_{tau_S}] and their delayed variants

Two deterministic evaluators share one reduction. Only continuation states that
can reach S carry mass; mass absorbed where S is unreachable never pays, which
is the convention delta(inf) * payoff := 0 (consistent with delta -> 0 and a
bounded payoff). On the reduced set R,

    J_R = int_0^inf delta(shift + t) e^{Q_R t} r dt,   r = Q_{R,S} X_S.

* ``quadrature`` integrates that expression in t with adaptive Gauss-Kronrod
  panels on [0, T*]; T* is doubled until C delta(shift + T*) |e^{Q_R T*} 1|_inf
  is below tol / 2.
* ``mixture`` writes delta(shift + t) as a mixture of exponentials and
  integrates the resolvent (sigma I - Q_R)^{-1} r against the mixing weight with
  the same adaptive Gauss-Kronrod rule; exponential discounting needs one solve.
"""
import logging
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import integrate, linalg

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import InvalidParameter, NegativeTime, ToleranceUnreachable
from shared.data_layer.models import Chain, DiscountFn, MonteCarloEstimate, StoppingRegion, ValueVector
from shared.engine import discount
from shared.engine.ctmc import can_reach, reachable_within, sample_first_entry, transition_matrix

logger = logging.getLogger(__name__)

METHODS = ('quadrature', 'mixture')
MAX_HORIZON = 1e12


def _continuation_system(chain: Chain, region: StoppingRegion,
                         sources: Optional[Iterable[int]] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Continuation states that reach S, their sub-generator and payoff flux into S"""
    stop = region.mask
    active = can_reach(chain, region.indices) & ~stop
    if sources is not None:
        active &= reachable_within(chain, sources, ~stop)
    active = np.flatnonzero(active)
    Q = np.asarray(chain.generator)
    stop_idx = np.asarray(region.indices, dtype=int)
    sub = Q[np.ix_(active, active)]
    flux = Q[np.ix_(active, stop_idx)] @ np.asarray(chain.values)[stop_idx]
    return active, sub, flux


def _check_quad(info, what: str):
    if not info.success:
        raise ToleranceUnreachable(f'{what} did not reach tolerance: {info.message}')


def _mixture_solve(sub: np.ndarray, flux: np.ndarray, d: DiscountFn, shift: float,
                   tol: float) -> Tuple[np.ndarray, np.ndarray]:
    mix = discount.mixture(d, shift)
    eye = np.eye(len(flux))
    if mix.is_atomic:
        values = mix.atom_weight * linalg.solve(mix.atom_rate * eye - sub, flux)
        return values, np.zeros_like(values)

    def integrand(w):
        return mix.mass(w) * linalg.solve(mix.decay(w) * eye - sub, flux)

    values, err, info = integrate.quad_vec(integrand, 0.0, mix.upper, epsabs=tol, epsrel=1e-13,
                                           norm='max', full_output=True)
    _check_quad(info, 'Mixture quadrature')
    logger.debug('mixture quadrature: %d states, %d evaluations', len(flux), info.neval)
    return values, np.full_like(values, err)


def _time_domain_solve(sub: np.ndarray, flux: np.ndarray, d: DiscountFn, shift: float,
                       payoff_bound: float, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    ones = np.ones(len(flux))
    horizon = 1.0
    while True:
        survival = float((linalg.expm(sub * horizon) @ ones).max())
        tail = payoff_bound * discount.evaluate(d, shift + horizon) * survival
        if tail < tol / 2:
            break
        horizon *= 2.0
        if horizon > MAX_HORIZON:
            raise ToleranceUnreachable(f'Tail bound {tail:.3g} still above {tol / 2:.3g} at T={horizon:.3g}')

    def integrand(t):
        return discount.evaluate(d, shift + t) * (linalg.expm(sub * t) @ flux)

    values, err, info = integrate.quad_vec(integrand, 0.0, horizon, epsabs=tol / 2, epsrel=1e-13,
                                           norm='max', full_output=True)
    _check_quad(info, 'Time-domain quadrature')
    logger.debug('time-domain quadrature: T*=%g, %d evaluations, tail %.2e', horizon, info.neval, tail)
    return values, np.full_like(values, err + tail)


def _solve(chain: Chain, d: DiscountFn, sub: np.ndarray, flux: np.ndarray, shift: float, tol: float,
           method: str) -> Tuple[np.ndarray, np.ndarray]:
    if method == 'mixture':
        return _mixture_solve(sub, flux, d, shift, tol)
    if method == 'quadrature':
        return _time_domain_solve(sub, flux, d, shift, chain.payoff_bound, tol)
    raise InvalidParameter(f'Unknown valuation method {method!r}; expected one of {", ".join(METHODS)}')


def hitting_value(chain: Chain, d: DiscountFn, region: StoppingRegion, shift: float = 0.0,
                  tol: Optional[float] = None, method: Optional[str] = None) -> ValueVector:
    """E_x[delta(shift + tau_S) X_{tau_S}] for every state x (J(x, S) when shift = 0)

    For x in S this is delta(shift) * x. An empty region stops nowhere, so every
    value is 0 and the result carries `empty_region_warning`.
    """
    if shift < 0:
        raise NegativeTime(f'Shift must be nonnegative, got {shift}')
    tol = tol if tol is not None else AppConfig.value_tolerance_for(chain.payoff_bound)
    method = method or AppConfig.VALUATION_METHOD

    values = np.zeros(chain.n_states)
    errors = np.zeros(chain.n_states)
    if len(region) == 0:
        warn = chain.payoff_bound > 0
        if warn:
            logger.warning('Empty stopping region: J is identically 0')
        return ValueVector(values, errors, method, region, shift, empty_region_warning=warn)

    stop = region.mask
    values[stop] = discount.evaluate(d, shift) * np.asarray(chain.values)[stop]

    active, sub, flux = _continuation_system(chain, region)
    if active.size:
        solved, err = _solve(chain, d, sub, flux, shift, tol, method)
        values[active] = np.clip(solved, 0.0, chain.payoff_bound)
        errors[active] = err
    return ValueVector(values, errors, method, region, shift)


def region_values(chain: Chain, d: DiscountFn, region: StoppingRegion, sources: Iterable[int],
                  shift: float = 0.0, tol: Optional[float] = None, method: Optional[str] = None) -> np.ndarray:
    """J(x, S) for x in `sources` only; solves just the part of S^c those states can visit"""
    sources = list(sources)
    tol = tol if tol is not None else AppConfig.value_tolerance_for(chain.payoff_bound)
    method = method or AppConfig.VALUATION_METHOD
    out = np.zeros(len(sources))
    if len(region) == 0:
        return out

    outside = [k for k, x in enumerate(sources) if x not in region]
    for k, x in enumerate(sources):
        if x in region:
            out[k] = discount.evaluate(d, shift) * chain.values[x]
    if not outside:
        return out

    active, sub, flux = _continuation_system(chain, region, sources=[sources[k] for k in outside])
    if active.size:
        solved, _ = _solve(chain, d, sub, flux, shift, tol, method)
        lookup = dict(zip(active.tolist(), np.clip(solved, 0.0, chain.payoff_bound)))
        for k in outside:
            out[k] = lookup.get(sources[k], 0.0)
    return out


def delayed_values(chain: Chain, d: DiscountFn, region: StoppingRegion, eps: float,
                   tol: Optional[float] = None, method: Optional[str] = None) -> np.ndarray:
    """E_x[delta(tau_S^eps) X_{tau_S^eps}] for every x, tau_S^eps = inf{t >= eps : X_t in S}

    By the Markov property at time eps this is sum_z P(X_eps = z | X_0 = x) times
    the eps-shifted hitting value at z.
    """
    if not eps > 0:
        raise InvalidParameter(f'Delay must be positive, got {eps}')
    shifted = hitting_value(chain, d, region, shift=eps, tol=tol, method=method)
    kernel = transition_matrix(chain, eps, tol=1e-15)
    return kernel @ shifted.values


def delayed_value(chain: Chain, d: DiscountFn, region: StoppingRegion, x: int, eps: float,
                  tol: Optional[float] = None, method: Optional[str] = None) -> float:
    """Delayed deviation value at a single state x"""
    return float(delayed_values(chain, d, region, eps, tol=tol, method=method)[x])


def mc_hitting_value(chain: Chain, d: DiscountFn, region: StoppingRegion, x: int, n_paths: int,
                     horizon: float, seed: int) -> MonteCarloEstimate:
    """Plain Monte Carlo estimate of J(x, S)

    Paths that have not entered S by `horizon` add nothing to the mean; their
    possible contribution is reported as bias_bound = delta(horizon) C * share.
    """
    if n_paths < 100:
        raise InvalidParameter(f'Monte Carlo needs at least 100 paths, got {n_paths}')
    if x in region:
        return MonteCarloEstimate(float(chain.values[x]), 0.0, 0.0, n_paths, 0)
    if len(region) == 0:
        return MonteCarloEstimate(0.0, 0.0, 0.0, n_paths, n_paths)

    rng = np.random.default_rng(seed)
    times, states, hit = sample_first_entry(chain, x, region.mask, n_paths, horizon, rng)
    samples = np.zeros(n_paths)
    samples[hit] = discount.evaluate(d, times[hit]) * np.asarray(chain.values)[states[hit]]

    censored = int((~hit).sum())
    estimate = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(n_paths))
    bias = discount.evaluate(d, horizon) * chain.payoff_bound * censored / n_paths
    return MonteCarloEstimate(estimate, stderr, float(bias), n_paths, censored)
