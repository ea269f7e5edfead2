"""American put under hyperbolic discounting on a geometric birth-death price chain

Prices live on u^i. The walk moves up at rate p * lambda and down at rate
(1 - p) * lambda, and the payoff of stopping at u^i is (K - u^i)^+. The infinite
lattice is truncated to [i_min, i_max]: the bottom state only moves up and the top
state absorbs.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, special

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import (
    DegenerateThreshold, GridTooCoarse, InvalidParameter, SeriesDivergence, TruncationTooNarrow
)
from shared.data_layer.models import (
    Chain, ExerciseComparison, MonteCarloEstimate, PrecommitmentResult, PutModel, StoppingRegion,
    ThresholdResult
)
from shared.engine import discount
from shared.engine.ctmc import build_chain, transition_matrix, with_values
from shared.engine.equilibrium import iterate_optimal
from shared.engine.valuation import region_values
from shared.utils.helpers import safe_divide

logger = logging.getLogger(__name__)

BOTTOM_PAYOFF_SHARE = 1e-6
RETURN_PROBABILITY = 1e-6
MAX_TOP_LEVELS = 60
SERIES_BLOCK = 256
SERIES_TERM_CAP = 2 ** 22
DEGENERACY_TOL = 1e-9


def put_model(u: float, p: float, lam: float, beta: float, K: float, i_min: Optional[int] = None,
              i_max: Optional[int] = None) -> PutModel:
    """Validated PutModel; missing truncation bounds come from default_truncation"""
    if not u > 1:
        raise InvalidParameter(f'Up factor u must exceed 1, got {u}')
    if not 1.0 / (1.0 + u) <= p < 1:
        raise InvalidParameter(f'Up probability p must lie in [1/(1+u), 1) = [{1.0 / (1.0 + u):.4g}, 1), got {p}')
    if not (lam > 0 and beta > 0 and K > 0):
        raise InvalidParameter(f'lambda, beta and K must be positive, got {lam}, {beta}, {K}')
    if i_min is None or i_max is None:
        default_min, default_max = default_truncation(u, p, lam, beta, K)
        i_min = default_min if i_min is None else i_min
        i_max = default_max if i_max is None else i_max
    if not i_min < i_max:
        raise InvalidParameter(f'Truncation needs i_min < i_max, got {i_min}, {i_max}')
    return PutModel(u=float(u), p=float(p), lam=float(lam), beta=float(beta), K=float(K),
                    i_min=int(i_min), i_max=int(i_max))


def default_truncation(u: float, p: float, lam: float, beta: float, K: float) -> Tuple[int, int]:
    """(i_min, i_max) for the put lattice

    i_min is the largest exponent with u^i below 1e-6 K. Above log_u K the lattice
    keeps enough levels that an upward-drifting walk returns from the top with
    probability below 1e-6, at most 60 levels.
    """
    i_min = math.ceil(math.log(BOTTOM_PAYOFF_SHARE * K, u)) - 1
    if p > 0.5:
        levels = math.ceil(math.log(RETURN_PROBABILITY) / math.log((1.0 - p) / p))
        levels = min(max(levels, 10), MAX_TOP_LEVELS)
    else:
        levels = MAX_TOP_LEVELS
    i_max = math.ceil(math.log(K, u)) + levels
    logger.debug('default truncation for u=%g p=%g K=%g: [%d, %d]', u, p, K, i_min, i_max)
    return i_min, i_max


def build_put_chain(m: PutModel) -> Chain:
    """Chain over u^i, i in [i_min, i_max], valued (K - u^i)^+"""
    if m.u ** m.i_max <= m.K:
        raise TruncationTooNarrow(f'u^i_max = {m.u ** m.i_max:.4g} must exceed K = {m.K}')
    if m.u ** m.i_min >= BOTTOM_PAYOFF_SHARE * m.K:
        logger.warning('u^i_min = %.3g is not below %.0e K; bottom truncation may distort values',
                       m.u ** m.i_min, BOTTOM_PAYOFF_SHARE)

    n = m.n_states
    rates = np.zeros((n, n))
    up = np.arange(n - 1)
    rates[up, up + 1] = m.p * m.lam
    rates[up[1:], up[1:] - 1] = (1.0 - m.p) * m.lam
    # top state absorbs: its row stays zero
    rates[n - 1, :] = 0.0

    labels = [f'u^{i}' for i in m.exponents]
    return build_chain(m.payoff(m.exponents), rates, labels=labels, rates_only=True)


def put_discount(m: PutModel):
    return discount.hyperbolic(m.beta)


def _passage_weights(p: float, ks: np.ndarray) -> np.ndarray:
    """P(first passage one level down takes exactly 2k - 1 jumps)"""
    ks = ks.astype(float)
    log_weights = (special.gammaln(2 * ks) - special.gammaln(ks + 1) - special.gammaln(ks)
                   + (ks - 1) * math.log(p) + ks * math.log1p(-p) - np.log(2 * ks - 1))
    return np.exp(log_weights)


def _gamma_discount_moments(m: PutModel, shapes: np.ndarray) -> np.ndarray:
    """E[delta(G)] for G ~ Gamma(shape, lambda), one entry per shape"""
    mix = discount.mixture(put_discount(m))
    shapes = np.asarray(shapes, dtype=float)

    # delta is an exponential mixture and E[e^{-s G}] = (lambda / (lambda + s))^shape
    def integrand(w):
        return mix.mass(w) * np.exp(-shapes * np.log1p(mix.decay(w) / m.lam))

    moments, _, info = integrate.quad_vec(integrand, 0.0, mix.upper, epsabs=1e-14, epsrel=1e-11,
                                          norm='max', full_output=True)
    if not info.success:
        raise SeriesDivergence(f'Gamma-discount moments did not converge: {info.message}')
    return moments


def alpha1_series(m: PutModel, tol: float = 1e-8) -> float:
    """alpha_1 = E_{u^i}[delta(tau_{u^(i-1)})] from the first-passage series

    Terms are summed in doubling blocks. The moments decrease in the shape, so
    the remaining sum is at most (last moment) x (remaining passage probability).
    """
    if not tol > 0:
        raise InvalidParameter(f'Series tolerance must be positive, got {tol}')
    total = min(1.0, (1.0 - m.p) / m.p)
    alpha, partial = 0.0, 0.0
    start, block = 1, SERIES_BLOCK
    while True:
        ks = np.arange(start, start + block)
        weights = _passage_weights(m.p, ks)
        moments = _gamma_discount_moments(m, 2 * ks - 1)
        alpha += float(weights @ moments)
        partial += float(weights.sum())
        tail = float(moments[-1]) * max(total - partial, 0.0)
        if tail < tol:
            break
        start += block
        block *= 2
        if start > SERIES_TERM_CAP:
            raise SeriesDivergence(f'alpha_1 series tail {tail:.3g} still above {tol:.3g} after {start} terms')
    logger.debug('alpha_1 = %.12g from %d terms (tail bound %.2e)', alpha, start + block - 1, tail)
    return alpha


def threshold_n0(m: PutModel, alpha1: Optional[float] = None) -> ThresholdResult:
    """n_0 = ceil(log_u((1 - alpha_1) / (u - alpha_1) K)) with its defining sandwich"""
    alpha = alpha1 if alpha1 is not None else alpha1_series(m)
    if not 0 < alpha < 1:
        raise InvalidParameter(f'alpha_1 must lie in (0, 1), got {alpha}')
    u, K = m.u, m.K

    log_value = math.log((1.0 - alpha) / (u - alpha) * K, u)
    if abs(log_value - round(log_value)) < DEGENERACY_TOL:
        raise DegenerateThreshold(f'log_u((1-alpha_1)/(u-alpha_1) K) = {log_value:.12g} is an integer')
    n0 = math.ceil(log_value)
    m0 = math.ceil(math.log(K * (1.0 - alpha), u)) - 1

    upper = safe_divide(K - u ** n0, K - u ** (n0 - 1))
    lower = safe_divide(K - u ** (n0 + 1), K - u ** n0)
    return ThresholdResult(n0=n0, m0=m0, log_value=log_value, alpha1=alpha,
                           sandwich_holds=upper > alpha >= lower)


def threshold_region(m: PutModel, n0: int) -> StoppingRegion:
    """{u^i : i <= n0} as state indices of the truncated chain"""
    return StoppingRegion.of(m.n_states, [k for k, i in enumerate(m.exponents) if i <= n0])


def time_grid(m: PutModel, horizon: float, dt: float) -> np.ndarray:
    """Step sizes covering [0, horizon]; each step grows with 1 + beta t

    The step is dt 2^b while 1 + beta t lies in [2^b, 2^(b+1)), capped at the
    first power of two with lambda dt 2^b >= 1. A late step then costs about as
    much, in time-0 units, as an early one. The last step is cut at the horizon.
    """
    cap = max(0, math.ceil(math.log2(1.0 / (m.lam * dt))))
    steps = []
    t = 0.0
    while t < horizon:
        power = min(int(math.floor(math.log2(1.0 + m.beta * t))), cap)
        step = min(dt * 2.0 ** power, horizon - t)
        steps.append(step)
        t += step
    return np.asarray(steps)


def _backward_values(chain: Chain, m: PutModel, horizon: float, dt: float) -> np.ndarray:
    # V(t, y) in units of delta(t): max(f(y), delta(t') / delta(t) E[V(t', Y_t')]) for the next grid time t'
    payoff = np.asarray(chain.values)
    steps = time_grid(m, horizon, dt)
    starts = np.concatenate([[0.0], np.cumsum(steps)[:-1]])
    kernels = {}
    value = payoff.copy()
    for t, step in zip(starts[::-1], steps[::-1]):
        kernel = kernels.get(step)
        if kernel is None:
            kernel = kernels[step] = transition_matrix(chain, step)
        ratio = (1.0 + m.beta * t) / (1.0 + m.beta * (t + step))
        value = np.maximum(payoff, ratio * (kernel @ value))
    logger.debug('backward induction: %d steps, %d distinct step sizes', len(steps), len(kernels))
    return value


def precommitment_region(m: PutModel, horizon: Optional[float] = None, dt: Optional[float] = None,
                         tol: Optional[float] = None) -> PrecommitmentResult:
    """A_0 = {y : 0 < (K - y)^+ and (K - y)^+ >= U(y) - tol}, U the time-0 pre-commitment value

    Backward induction on time_grid(dt), forced exercise at the horizon. The
    run is repeated with dt / 2 and the finer values are kept.
    """
    dt = dt if dt is not None else AppConfig.PUT_DT
    horizon = horizon if horizon is not None else 1e4 / m.beta
    tol = tol if tol is not None else AppConfig.tolerance_for(m.K)
    if not dt > 0 or m.lam * dt > 0.1:
        raise InvalidParameter(f'Time step must satisfy 0 < lambda dt <= 0.1, got dt={dt}')
    if m.K / (1.0 + m.beta * horizon) >= 1e-4 * m.K:
        raise InvalidParameter(f'Horizon {horizon} is too short: discount at the horizon must fall below 1e-4')

    chain = build_put_chain(m)
    coarse = _backward_values(chain, m, horizon, dt)
    fine = _backward_values(chain, m, horizon, dt / 2.0)
    error = float(np.abs(coarse - fine).max())
    limit = AppConfig.GRID_TOL_SCALE * m.K
    if error > limit:
        raise GridTooCoarse(f'Halving dt={dt} moves U by {error:.3g} > {limit:.3g}')

    payoff = np.asarray(chain.values)
    # the absorbing top state has U = 0 = payoff and stays out
    region = StoppingRegion.of(m.n_states, np.flatnonzero((payoff > tol) & (payoff >= fine - tol)))
    logger.debug('pre-commitment: %d exercise states, Richardson error %.2e', len(region), error)
    return PrecommitmentResult(region=region, values=fine, richardson_error=error, dt=dt / 2.0, horizon=horizon)


def s1_membership_check(m: PutModel, i: int, tol: Optional[float] = None) -> bool:
    """K - u^i > (K - u^m) alpha_{i-m} for every m in [i_min, i - 1]

    alpha_n is the discounted first passage n levels down, valued on the truncated
    chain with unit payoff at the target.
    """
    if not m.u ** i < m.K:
        raise InvalidParameter(f'u^{i} = {m.u ** i:.4g} is not below K = {m.K}')
    tol = tol if tol is not None else AppConfig.tolerance_for(m.K)
    chain = build_put_chain(m)
    unit = with_values(chain, np.ones(chain.n_states))
    d = put_discount(m)
    start = m.index_of_exponent(i)
    payoff = m.K - m.u ** i

    for target in range(start):
        alpha_n = float(region_values(unit, d, StoppingRegion.of(chain.n_states, [target]), [start])[0])
        if not payoff > float(chain.values[target]) * alpha_n + tol:
            return False
    return True


def first_passage_mc(m: PutModel, n_paths: int, seed: int, horizon: Optional[float] = None) -> MonteCarloEstimate:
    """Monte Carlo alpha_1: simulate the embedded walk until it first drops one level

    Walks still above their start at `horizon` contribute nothing; their share
    times delta(horizon) is the bias bound.
    """
    if n_paths < 100:
        raise InvalidParameter(f'Monte Carlo needs at least 100 paths, got {n_paths}')
    horizon = horizon if horizon is not None else 1e4 / m.beta
    rng = np.random.default_rng(seed)

    level = np.zeros(n_paths, dtype=np.int64)
    time = np.zeros(n_paths)
    active = np.ones(n_paths, dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        time[idx] += rng.exponential(1.0 / m.lam, size=idx.size)
        late = time[idx] >= horizon
        active[idx[late]] = False
        idx = idx[~late]
        level[idx] += np.where(rng.random(idx.size) < m.p, 1, -1)
        active[idx[level[idx] < 0]] = False

    hit = level < 0
    samples = np.where(hit, 1.0 / (1.0 + m.beta * time), 0.0)
    censored = int((~hit).sum())
    return MonteCarloEstimate(estimate=float(samples.mean()),
                              stderr=float(samples.std(ddof=1) / math.sqrt(n_paths)),
                              bias_bound=censored / n_paths / (1.0 + m.beta * horizon),
                              n_paths=n_paths, n_censored=censored)


def compare_exercise(m: PutModel, horizon: Optional[float] = None, dt: Optional[float] = None,
                     tol: Optional[float] = None) -> ExerciseComparison:
    """Equilibrium region S_inf against the pre-commitment exercise region A_0"""
    chain = build_put_chain(m)
    alpha1 = alpha1_series(m)
    threshold = threshold_n0(m, alpha1)
    trace = iterate_optimal(chain, put_discount(m), tol=tol)
    precommitment = precommitment_region(m, horizon=horizon, dt=dt, tol=tol)

    containment = precommitment.region.issubset(trace.final)
    if not containment:
        logger.warning('Pre-commitment region is not contained in the equilibrium region')
    return ExerciseComparison(equilibrium_region=trace.final, precommitment_region=precommitment.region,
                              containment_holds=containment, alpha1=alpha1, threshold=threshold,
                              trace=trace, step_bound=threshold.n0 - threshold.m0 + 1,
                              precommitment=precommitment)
