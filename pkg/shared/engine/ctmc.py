"""Finite continuous-time Markov chains: validation, transition matrices, simulation"""
import logging
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from shared.data_layer.errors import (
    EmptyContinuation, InvalidParameter, NegativeRate, NegativeStateValue,
    NegativeTime, RowSumViolation, ToleranceUnreachable
)
from shared.data_layer.models import Chain, Path

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
POISSON_TAIL = 1e-14
MAX_UNIFORMIZATION_TERMS = 1_000_000


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _off_diagonal(generator: np.ndarray) -> np.ndarray:
    off = generator.copy()
    np.fill_diagonal(off, 0.0)
    return off


def build_chain(states: Sequence[float], generator, labels: Optional[Sequence[str]] = None,
                rates_only: bool = False) -> Chain:
    """Validate a generator and state values and return an immutable Chain

    Args:
        states: Payoff value of each state (finite, nonnegative)
        generator: n x n rate matrix Q
        labels: Optional state names (default x1..xn)
        rates_only: Ignore the diagonal of `generator` and derive it from the rates

    Returns:
        Chain with diagonal q_xx = -sum_{y != x} q_xy
    """
    values = np.array(states, dtype=float).reshape(-1)
    Q = np.array(generator, dtype=float)
    n = len(values)

    if Q.ndim != 2 or Q.shape != (n, n):
        raise InvalidParameter(f'Generator shape {Q.shape} does not match {n} states')
    if not np.all(np.isfinite(Q)):
        raise InvalidParameter('Generator contains non-finite entries')
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise NegativeStateValue('State values must be finite and nonnegative')

    off = _off_diagonal(Q)
    if np.any(off < 0):
        x, y = np.argwhere(off < 0)[0]
        raise NegativeRate(f'Negative rate q[{x},{y}] = {off[x, y]}')

    if not rates_only:
        scale = np.abs(Q).max() if n else 0.0
        scale = scale if scale > 0 else 1.0
        row_sums = Q.sum(axis=1)
        bad = np.flatnonzero(np.abs(row_sums) > ROW_SUM_TOL * scale)
        if bad.size:
            raise RowSumViolation(f'Row {int(bad[0])} sums to {row_sums[bad[0]]}, expected 0')

    # diagonal is re-derived so lambda_x is exactly the sum of the rates
    np.fill_diagonal(Q, -off.sum(axis=1))

    if labels is None:
        labels = tuple(f'x{i + 1}' for i in range(n))
    labels = tuple(str(label) for label in labels)
    if len(labels) != n or len(set(labels)) != n:
        raise InvalidParameter('Labels must be unique and match the number of states')

    return Chain(values=_frozen(values), generator=_frozen(Q), labels=labels)


def with_values(chain: Chain, values: Sequence[float]) -> Chain:
    """Same generator, new state values"""
    return build_chain(values, chain.generator, labels=chain.labels)


def rate_graph(chain: Chain) -> np.ndarray:
    """Adjacency matrix of strictly positive off-diagonal rates"""
    return _off_diagonal(np.asarray(chain.generator)) > 0


def is_irreducible(chain: Chain) -> bool:
    if chain.n_states <= 1:
        return True
    n_components, _ = connected_components(csr_matrix(rate_graph(chain)), directed=True,
                                           connection='strong')
    return n_components == 1


def is_birth_death(chain: Chain) -> bool:
    """True when only nearest neighbours (in state order) communicate directly"""
    rows, cols = np.nonzero(rate_graph(chain))
    return bool(np.all(np.abs(rows - cols) <= 1))


def can_reach(chain: Chain, targets: Iterable[int]) -> np.ndarray:
    """Boolean mask of states from which `targets` is reachable (targets included)"""
    adjacency = rate_graph(chain)
    reach = np.zeros(chain.n_states, dtype=bool)
    reach[list(targets)] = True
    while True:
        grown = reach | adjacency[:, reach].any(axis=1)
        if np.array_equal(grown, reach):
            return reach
        reach = grown


def reachable_within(chain: Chain, sources: Iterable[int], allowed: np.ndarray) -> np.ndarray:
    """States of `allowed` reachable from `sources` without leaving `allowed`"""
    adjacency = rate_graph(chain) & allowed[None, :]
    reach = np.zeros(chain.n_states, dtype=bool)
    reach[list(sources)] = True
    reach &= allowed
    while True:
        grown = reach | adjacency[reach].any(axis=0)
        if np.array_equal(grown, reach):
            return reach
        reach = grown


def sub_generator(chain: Chain, continuation: Sequence[int]) -> np.ndarray:
    """Q restricted to the continuation set C = S^c"""
    continuation = np.asarray(list(continuation), dtype=int)
    if continuation.size == 0:
        raise EmptyContinuation('Continuation set is empty; the region covers every state')
    return np.asarray(chain.generator)[np.ix_(continuation, continuation)]


def transition_matrix(chain: Chain, t: float, tol: float = 1e-12) -> np.ndarray:
    """e^{Qt} by uniformization: Poisson(Lambda t)-weighted powers of I + Q/Lambda"""
    if t < 0:
        raise NegativeTime(f'Time must be nonnegative, got {t}')
    n = chain.n_states
    rate = chain.max_rate
    if t == 0 or rate == 0:
        return np.eye(n)

    kernel = np.eye(n) + np.asarray(chain.generator) / rate
    mean = rate * t
    tail = min(tol, POISSON_TAIL)
    n_terms = int(stats.poisson.isf(tail, mean)) + 2
    if n_terms > MAX_UNIFORMIZATION_TERMS:
        raise ToleranceUnreachable(
            f'Uniformization needs {n_terms} terms (Lambda t = {mean:.3g}); cap is {MAX_UNIFORMIZATION_TERMS}'
        )
    weights = stats.poisson.pmf(np.arange(n_terms), mean)

    result = np.zeros((n, n))
    power = np.eye(n)
    for weight in weights:
        result += weight * power
        power = power @ kernel
    logger.debug('transition_matrix t=%g used %d uniformization terms', t, n_terms)
    return result


def stationary_distribution(chain: Chain) -> np.ndarray:
    """Probability vector pi with pi Q = 0 (unique when the chain is irreducible)"""
    n = chain.n_states
    system = np.vstack([np.asarray(chain.generator).T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def _jump_cdf(chain: Chain) -> np.ndarray:
    rates = chain.holding_rates
    off = _off_diagonal(np.asarray(chain.generator))
    safe = np.where(rates > 0, rates, 1.0)
    return np.cumsum(off / safe[:, None], axis=1)


def simulate_path(chain: Chain, start: int, horizon: float, seed: int) -> Path:
    """Exact (Gillespie) simulation of one path on [0, horizon]"""
    if horizon <= 0:
        raise InvalidParameter(f'Horizon must be positive, got {horizon}')
    if not 0 <= start < chain.n_states:
        raise InvalidParameter(f'Start state {start} out of range')

    rng = np.random.default_rng(seed)
    rates = chain.holding_rates
    cdf = _jump_cdf(chain)

    times = []
    states = [int(start)]
    state, t = int(start), 0.0
    while True:
        rate = rates[state]
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= horizon:
            break
        state = int(min(np.searchsorted(cdf[state], rng.random() * cdf[state, -1], side='right'),
                        chain.n_states - 1))
        times.append(t)
        states.append(state)

    return Path(jump_times=tuple(times), states=tuple(states), horizon=float(horizon))


def sample_first_entry(chain: Chain, start: int, targets: np.ndarray, n_paths: int, horizon: float,
                       rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Simulate n_paths paths from `start` until they enter `targets` or pass `horizon`

    All paths advance together, one jump per sweep.

    Returns:
        (entry_times, entry_states, hit) arrays; entry values are only meaningful where hit
    """
    targets = np.asarray(targets, dtype=bool)
    rates = chain.holding_rates
    cdf = _jump_cdf(chain)
    last = chain.n_states - 1

    state = np.full(n_paths, int(start))
    time = np.zeros(n_paths)
    hit = np.full(n_paths, bool(targets[start]))
    active = ~hit

    while active.any():
        idx = np.flatnonzero(active)
        current = state[idx]
        current_rates = rates[current]

        stuck = current_rates <= 0
        active[idx[stuck]] = False
        idx, current, current_rates = idx[~stuck], current[~stuck], current_rates[~stuck]
        if idx.size == 0:
            break

        time[idx] += rng.exponential(size=idx.size) / current_rates
        late = time[idx] >= horizon
        active[idx[late]] = False
        idx, current = idx[~late], current[~late]
        if idx.size == 0:
            break

        u = rng.random(idx.size) * cdf[current, -1]
        nxt = np.minimum((cdf[current] <= u[:, None]).sum(axis=1), last)
        state[idx] = nxt
        entered = targets[nxt]
        hit[idx[entered]] = True
        active[idx[entered]] = False

    return time, state, hit
