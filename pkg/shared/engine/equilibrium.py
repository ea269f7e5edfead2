"""Mild, weak and strong equilibrium tests and the optimal mild equilibrium iteration

Tolerance convention: non-strict inequalities (mild, weak) get +tol slack, strict
ones (the iteration's x > sup J, a strictly positive first-order gap) must clear tol.
"""
import logging
from typing import Dict, Iterable, List, MutableMapping, Optional, Sequence, Tuple

import numpy as np

from shared.data_layer.config import AppConfig
from shared.data_layer.errors import (
    EnumerationTooLarge, FirstOrderNotCritical, InvalidParameter, NonpositiveRate, NotMild,
    ParameterOrderViolation, StateNotInRegion
)
from shared.data_layer.models import (
    BestResponse, Chain, Classification, DiscountFn, IterationStep, IterationTrace, MildVerdict,
    OptimalityReport, StateStrongVerdict, StoppingRegion, StrongVerdict, TwoStateRegionVerdict,
    TwoStateReport, WeakVerdict
)
from shared.engine import discount
from shared.engine.ctmc import build_chain, is_birth_death, is_irreducible
from shared.engine.valuation import delayed_values, hitting_value, region_values
from shared.utils.helpers import format_region, iter_subsets

logger = logging.getLogger(__name__)

STRATEGIES = ('auto', 'exhaustive', 'birth_death')
TIER_METHODS = ('strict_first_order', 'second_order_closed_form', 'epsilon_grid')
# worst verdict wins when a region is summarised
VERDICT_RANK = {'strong': 0, 'indeterminate': 1, 'weak_only': 2, 'not_weak': 3}
EPS_NOISE_FACTOR = 100.0

Cache = MutableMapping[object, object]


def _tolerances(chain: Chain, tol: Optional[float], value_tol: Optional[float]) -> Tuple[float, float]:
    C = chain.payoff_bound
    return (tol if tol is not None else AppConfig.tolerance_for(C),
            value_tol if value_tol is not None else AppConfig.value_tolerance_for(C))


def _values(chain: Chain, d: DiscountFn, region: StoppingRegion, value_tol: float,
            method: Optional[str]) -> np.ndarray:
    return hitting_value(chain, d, region, tol=value_tol, method=method).values


def is_mild(chain: Chain, d: DiscountFn, region: StoppingRegion, tol: Optional[float] = None,
            values: Optional[np.ndarray] = None, value_tol: Optional[float] = None,
            method: Optional[str] = None) -> MildVerdict:
    """x <= J(x, S) + tol at every x outside S"""
    tol, value_tol = _tolerances(chain, tol, value_tol)
    if values is None:
        values = _values(chain, d, region, value_tol, method)

    gaps = {x: float(values[x] - chain.values[x]) for x in region.complement}
    if not gaps:
        return MildVerdict(holds=True, worst_gap=0.0, worst_state=None, gaps=gaps)
    worst_state = min(gaps, key=gaps.get)
    worst_gap = gaps[worst_state]
    return MildVerdict(holds=worst_gap >= -tol, worst_gap=worst_gap, worst_state=worst_state, gaps=gaps)


def first_order_gap(chain: Chain, d: DiscountFn, region: StoppingRegion, x: int,
                    values: Optional[np.ndarray] = None, value_tol: Optional[float] = None,
                    method: Optional[str] = None) -> float:
    """x (lambda_x - delta'(0)) - sum_{y != x} q_xy J(y, S) for x in S

    J(y, S) = y on S, so the two sums over S minus {x} and over S^c collapse
    into one product with the off-diagonal row of Q.
    """
    if x not in region:
        raise StateNotInRegion(f'State {x} is not in the region; the first-order test applies to S only')
    _, value_tol = _tolerances(chain, None, value_tol)
    if values is None:
        values = _values(chain, d, region, value_tol, method)

    first, _ = discount.derivatives_at_zero(d)
    row = np.array(chain.generator[x], dtype=float)
    row[x] = 0.0
    payoff = float(chain.values[x])
    return payoff * (chain.holding_rates[x] - first) - float(row @ values)


def is_weak(chain: Chain, d: DiscountFn, region: StoppingRegion, tol: Optional[float] = None,
            values: Optional[np.ndarray] = None, mild: Optional[MildVerdict] = None,
            value_tol: Optional[float] = None, method: Optional[str] = None) -> WeakVerdict:
    """Mild and every first-order gap on S is >= -tol"""
    tol, value_tol = _tolerances(chain, tol, value_tol)
    if values is None:
        values = _values(chain, d, region, value_tol, method)
    if mild is None:
        mild = is_mild(chain, d, region, tol, values=values)
    if not mild.holds:
        return WeakVerdict(holds=False, evaluated=False)

    gaps = {x: first_order_gap(chain, d, region, x, values=values) for x in region}
    return WeakVerdict(holds=all(g >= -tol for g in gaps.values()), evaluated=True, gaps=gaps)


def two_state_second_order(a: float, b: float, lambda_a: float, lambda_b: float, d: DiscountFn,
                           tol: Optional[float] = None) -> float:
    """(delta''(0) - 2 delta'(0)^2) / (-delta'(0)) - (lambda_a + lambda_b)

    Only meaningful when the first-order gap at b for S = {a, b} vanishes;
    positive means a short delay at b pays off at second order (not strong).
    """
    tol = tol if tol is not None else AppConfig.tolerance_for(max(a, b))
    first, second = discount.derivatives_at_zero(d)
    gap = b * (lambda_b - first) - a * lambda_b
    if abs(gap) > tol:
        raise FirstOrderNotCritical(f'First-order gap {gap:.3g} exceeds tol {tol:.3g}; second-order test does not apply')
    return (second - 2.0 * first ** 2) / (-first) - (lambda_a + lambda_b)


def _epsilon_grid_verdict(payoff: float, delayed: Sequence[float], noise: float) -> str:
    diffs = [payoff - v for v in delayed]
    signs = [0 if abs(diff) <= noise else (1 if diff > 0 else -1) for diff in diffs]
    if all(s > 0 for s in signs):
        return 'strong'
    # the smallest delay carries the evidence for the limit epsilon -> 0
    if signs[-1] < 0:
        return 'weak_only'
    return 'indeterminate'


def is_strong(chain: Chain, d: DiscountFn, region: StoppingRegion, tol: Optional[float] = None,
              eps_grid: Optional[Sequence[float]] = None, values: Optional[np.ndarray] = None,
              gaps: Optional[Dict[int, float]] = None, closed_form: bool = True,
              value_tol: Optional[float] = None, method: Optional[str] = None) -> StrongVerdict:
    """Per-state strong test

    1. a first-order gap above tol is strong outright;
    2. a vanishing gap on a two-state chain with S = both states uses the
       closed-form second-order sign;
    3. anything else evaluates x - delayed value on the decreasing eps grid.

    closed_form=False sends every state to the eps grid.
    """
    tol, value_tol = _tolerances(chain, tol, value_tol)
    eps_grid = tuple(sorted(eps_grid or AppConfig.EPS_GRID, reverse=True))
    if values is None:
        values = _values(chain, d, region, value_tol, method)
    if gaps is None:
        gaps = {x: first_order_gap(chain, d, region, x, values=values) for x in region}

    per_state: Dict[int, StateStrongVerdict] = {}
    pending: List[int] = []
    for x in region:
        gap = gaps[x]
        if closed_form and gap > tol:
            per_state[x] = StateStrongVerdict('strong', 'strict_first_order', (gap,))
        elif closed_form and gap < -tol:
            per_state[x] = StateStrongVerdict('not_weak', 'strict_first_order', (gap,))
        elif closed_form and chain.n_states == 2 and len(region) == 2:
            other = 1 - x
            rates = chain.holding_rates
            value = two_state_second_order(chain.values[other], chain.values[x], rates[other], rates[x], d,
                                           tol=tol)
            rate_tol = AppConfig.TOL_SCALE * max(rates[other] + rates[x], 1.0)
            if value > rate_tol:
                per_state[x] = StateStrongVerdict('weak_only', 'second_order_closed_form', (gap, value))
            elif value < -rate_tol:
                per_state[x] = StateStrongVerdict('strong', 'second_order_closed_form', (gap, value))
            else:
                pending.append(x)
        else:
            pending.append(x)

    if pending:
        # a tighter value tolerance keeps quadrature noise well under the eps^2 terms
        grid_tol = value_tol / 10.0
        noise = EPS_NOISE_FACTOR * grid_tol
        delayed = [delayed_values(chain, d, region, eps, tol=grid_tol, method=method) for eps in eps_grid]
        for x in pending:
            column = [float(v[x]) for v in delayed]
            verdict = _epsilon_grid_verdict(float(chain.values[x]), column, noise)
            detail = tuple(float(chain.values[x]) - v for v in column)
            per_state[x] = StateStrongVerdict(verdict, 'epsilon_grid', detail)
            logger.debug('eps-grid verdict at state %d: %s %s', x, verdict, detail)

    if not per_state:
        return StrongVerdict(verdict='strong', method=None, per_state=per_state)
    verdict = max((s.verdict for s in per_state.values()), key=VERDICT_RANK.get)
    used = max((s.method for s in per_state.values()), key=TIER_METHODS.index)
    return StrongVerdict(verdict=verdict, method=used, per_state=per_state)


def classify(chain: Chain, d: DiscountFn, region: StoppingRegion, tol: Optional[float] = None,
             eps_grid: Optional[Sequence[float]] = None, closed_form: bool = True,
             value_tol: Optional[float] = None, method: Optional[str] = None) -> Classification:
    """Mild, then weak if mild, then strong if weak"""
    tol, value_tol = _tolerances(chain, tol, value_tol)
    eps_grid = tuple(eps_grid or AppConfig.EPS_GRID)
    irreducible = is_irreducible(chain)
    if not irreducible:
        logger.warning('Chain is not irreducible; equilibrium verdicts are reported with a warning flag')

    values = _values(chain, d, region, value_tol, method)
    mild = is_mild(chain, d, region, tol, values=values)
    weak = is_weak(chain, d, region, tol, values=values, mild=mild)
    if weak.holds:
        strong = is_strong(chain, d, region, tol, eps_grid, values=values, gaps=weak.gaps,
                           closed_form=closed_form, value_tol=value_tol, method=method)
    else:
        strong = StrongVerdict(verdict='not_evaluated', method=None)
    return Classification(region=region, mild=mild, weak=weak, strong=strong,
                          irreducibility_warning=not irreducible, tol=tol, eps_grid=eps_grid)


def _region_vector(chain: Chain, d: DiscountFn, members: frozenset, cache: Cache, value_tol: float,
                   method: Optional[str]) -> np.ndarray:
    values = cache.get(members)
    if values is None:
        values = _values(chain, d, StoppingRegion(members, chain.n_states), value_tol, method)
        cache[members] = values
    return values


def _exhaustive_response(chain: Chain, d: DiscountFn, x: int, base: StoppingRegion, cache: Cache,
                         value_tol: float, method: Optional[str]) -> BestResponse:
    free = [y for y in range(chain.n_states) if y != x and y not in base]
    if len(free) > AppConfig.ENUMERATION_LIMIT:
        raise EnumerationTooLarge(
            f'{len(free)} free states exceed the enumeration limit of {AppConfig.ENUMERATION_LIMIT}'
        )

    best_value, best_members, count = 0.0, None, 0
    for extra in iter_subsets(free):
        members = base.members | frozenset(extra)
        if not members:
            continue
        count += 1
        value = float(_region_vector(chain, d, members, cache, value_tol, method)[x])
        if best_members is None or value > best_value:
            best_value, best_members = value, members

    argmax = StoppingRegion(best_members, chain.n_states) if best_members is not None else None
    return BestResponse(x, float(chain.values[x]), best_value, argmax, count, 'exhaustive')


def _nearest_pairs(chain: Chain, x: int, base: StoppingRegion) -> List[Tuple[Optional[int], Optional[int]]]:
    n = chain.n_states
    below = [s for s in base if s < x]
    above = [s for s in base if s > x]
    lows = list(range(max(below), x)) if below else [None] + list(range(0, x))
    highs = list(range(x + 1, min(above) + 1)) if above else list(range(x + 1, n)) + [None]

    def worth_adding(s):
        # stopping at a zero-payoff state pays less than carrying on to the next candidate out
        return s is None or s in base or chain.values[s] > 0

    pairs = [(low, high) for low in lows if worth_adding(low) for high in highs if worth_adding(high)
             if low is not None or high is not None]
    if pairs:
        return pairs
    return [(low, high) for low in lows for high in highs if low is not None or high is not None]


def _pair_values(chain: Chain, d: DiscountFn, low: Optional[int], high: Optional[int], cache: Cache,
                 value_tol: float, method: Optional[str]) -> Dict[int, float]:
    key = ('nearest', low, high)
    values = cache.get(key)
    if values is None:
        members = [s for s in (low, high) if s is not None]
        start = -1 if low is None else low
        stop = chain.n_states if high is None else high
        inside = list(range(start + 1, stop))
        pair = StoppingRegion.of(chain.n_states, members)
        values = dict(zip(inside, region_values(chain, d, pair, inside, tol=value_tol, method=method)))
        cache[key] = values
    return values


def _birth_death_response(chain: Chain, d: DiscountFn, x: int, base: StoppingRegion, cache: Cache,
                          value_tol: float, method: Optional[str]) -> BestResponse:
    # skip-free paths: tau_S from x only sees the nearest members of S on each side
    best_value, best_pair, count = 0.0, None, 0
    for low, high in _nearest_pairs(chain, x, base):
        count += 1
        value = _pair_values(chain, d, low, high, cache, value_tol, method)[x]
        if best_pair is None or value > best_value:
            best_value, best_pair = value, (low, high)

    argmax = None
    if best_pair is not None:
        argmax = base.union(s for s in best_pair if s is not None)
    return BestResponse(x, float(chain.values[x]), float(best_value), argmax, count, 'birth_death')


def best_response_sup(chain: Chain, d: DiscountFn, x: int, base: StoppingRegion,
                      tol: Optional[float] = None, strategy: str = 'auto', cache: Optional[Cache] = None,
                      value_tol: Optional[float] = None, method: Optional[str] = None) -> BestResponse:
    """sup of J(x, S) over nonempty S with base <= S <= states minus {x}

    An empty family (single-state chain) has sup 0 and no argmax. `cache` maps
    regions to value vectors and may be shared across calls on the same chain.
    """
    if x in base:
        raise InvalidParameter(f'State {x} already belongs to the base region')
    if strategy not in STRATEGIES:
        raise InvalidParameter(f'Unknown strategy {strategy!r}; expected one of {", ".join(STRATEGIES)}')
    _, value_tol = _tolerances(chain, tol, value_tol)
    cache = cache if cache is not None else {}

    if strategy == 'auto':
        strategy = 'birth_death' if is_birth_death(chain) else 'exhaustive'
    if strategy == 'birth_death':
        if not is_birth_death(chain):
            raise InvalidParameter('birth_death strategy needs a tridiagonal generator')
        return _birth_death_response(chain, d, x, base, cache, value_tol, method)
    return _exhaustive_response(chain, d, x, base, cache, value_tol, method)


def iterate_optimal(chain: Chain, d: DiscountFn, tol: Optional[float] = None, strategy: str = 'auto',
                    value_tol: Optional[float] = None, method: Optional[str] = None) -> IterationTrace:
    """S_0 = {} and S_{n+1} = S_n plus every x outside S_n with x > sup J(x, S) + tol

    The last recorded step adds nothing; its region is S_inf.
    """
    tol, value_tol = _tolerances(chain, tol, value_tol)
    cache: Dict[object, object] = {}
    region = StoppingRegion.empty(chain.n_states)
    initial = region
    steps: List[IterationStep] = []

    for index in range(1, chain.n_states + 2):
        # sup J >= 0, so a payoff within tol of zero can never enter
        responses = {
            x: best_response_sup(chain, d, x, region, strategy=strategy, cache=cache,
                                 value_tol=value_tol, method=method)
            for x in region.complement if chain.values[x] > tol
        }
        added = tuple(x for x, br in responses.items() if br.state_value > br.sup_value + tol)
        region = region.union(added)
        steps.append(IterationStep(index=index, region=region, added=added, best_responses=responses))
        logger.debug('iteration step %d: added %s -> %s', index, added, format_region(region.labels(chain)))
        if not added:
            break

    logger.info('optimal mild equilibrium %s after %d augmenting steps (%d regions valued)',
                format_region(region.labels(chain)), sum(1 for s in steps if s.added), len(cache))
    return IterationTrace(initial=initial, steps=steps, tol=tol)


def _mild_regions(chain: Chain, d: DiscountFn, tol: float, value_tol: float,
                  method: Optional[str]) -> List[Tuple[StoppingRegion, np.ndarray]]:
    if chain.n_states > AppConfig.MILD_ENUMERATION_LIMIT:
        raise EnumerationTooLarge(
            f'{chain.n_states} states exceed the mild enumeration limit of {AppConfig.MILD_ENUMERATION_LIMIT}'
        )
    found = []
    for bits in range(1, 1 << chain.n_states):
        region = StoppingRegion.from_bitmask(chain.n_states, bits)
        values = _values(chain, d, region, value_tol, method)
        if is_mild(chain, d, region, tol, values=values).holds:
            found.append((region, values))
    found.sort(key=lambda item: (len(item[0]), item[0].indices))
    return found


def enumerate_mild(chain: Chain, d: DiscountFn, tol: Optional[float] = None,
                   value_tol: Optional[float] = None, method: Optional[str] = None) -> List[StoppingRegion]:
    """Every nonempty mild region, smallest first"""
    tol, value_tol = _tolerances(chain, tol, value_tol)
    return [region for region, _ in _mild_regions(chain, d, tol, value_tol, method)]


def verify_optimal(chain: Chain, d: DiscountFn, candidate: StoppingRegion, tol: Optional[float] = None,
                   value_tol: Optional[float] = None, method: Optional[str] = None) -> OptimalityReport:
    """Brute-force check that `candidate` is the smallest and an optimal mild equilibrium"""
    tol, value_tol = _tolerances(chain, tol, value_tol)
    own = _values(chain, d, candidate, value_tol, method)
    if not is_mild(chain, d, candidate, tol, values=own).holds:
        raise NotMild(f'Region {format_region(candidate.labels(chain))} is not a mild equilibrium')

    mild = _mild_regions(chain, d, tol, value_tol, method)
    smallest = all(candidate.issubset(region) for region, _ in mild)
    failures = []
    for region, values in mild:
        for x in range(chain.n_states):
            shortfall = float(values[x] - own[x])
            if shortfall > tol:
                failures.append((region, x, shortfall))
    return OptimalityReport(optimal=not failures, smallest=smallest, mild_regions=len(mild),
                            dominance_failures=failures)


def classical_stopping_region(chain: Chain, rate: float, tol: Optional[float] = None,
                              max_iter: int = 1_000_000) -> Tuple[StoppingRegion, np.ndarray]:
    """Optimal stopping under exponential discounting by value iteration

    Uses the uniformized jump chain P = I + Q / Lambda: V = max(X, Lambda / (Lambda + r) P V).
    The region is where stopping strictly beats continuing by more than tol.
    """
    if not rate > 0:
        raise NonpositiveRate(f'Discount rate must be positive, got {rate}')
    tol = tol if tol is not None else AppConfig.tolerance_for(chain.payoff_bound)
    payoff = np.asarray(chain.values, dtype=float)
    uniform = chain.max_rate
    if uniform == 0:
        return StoppingRegion.everything(chain.n_states), payoff.copy()

    kernel = np.eye(chain.n_states) + np.asarray(chain.generator) / uniform
    factor = uniform / (uniform + rate)
    value = payoff.copy()
    # contraction with modulus `factor`; stop once the fixed point is within tol / 100
    threshold = max(tol / 100.0 * (1.0 - factor), 1e-14 * max(chain.payoff_bound, 1.0))
    for _ in range(max_iter):
        updated = np.maximum(payoff, factor * (kernel @ value))
        if np.abs(updated - value).max() <= threshold:
            value = updated
            break
        value = updated
    continuation = factor * (kernel @ value)
    region = StoppingRegion.of(chain.n_states, np.flatnonzero(payoff > continuation + tol))
    return region, value


def two_state_chain(a: float, b: float, lambda_a: float, lambda_b: float) -> Chain:
    """States a and b that switch at rates lambda_a (a -> b) and lambda_b (b -> a)"""
    return build_chain([a, b], [[-lambda_a, lambda_a], [lambda_b, -lambda_b]], labels=('a', 'b'))


def check_two_state(a: float, b: float, lambda_a: float, lambda_b: float):
    """Two-state parameters need a > b > 0 and positive switching rates"""
    if not a > b > 0:
        raise ParameterOrderViolation(f'Two-state analysis needs a > b > 0, got a={a}, b={b}')
    if not (lambda_a > 0 and lambda_b > 0):
        raise NonpositiveRate(f'Both rates must be positive, got {lambda_a}, {lambda_b}')


def _strong_flag(verdict: str) -> Optional[bool]:
    return {'strong': True, 'weak_only': False, 'not_weak': False}.get(verdict)


def classify_two_state(a: float, b: float, lambda_a: float, lambda_b: float, d: DiscountFn,
                       tol: Optional[float] = None, cross_check: bool = True) -> TwoStateReport:
    """Closed-form classification of {a} and {a, b} on the two-state chain

    Case labels by r = b / a, the first-order ratio f = lambda_b / (lambda_b - delta'(0))
    and e_b = E[delta(T_b)]: ii (r < f), iv (r = f), iii (f < r < e_b),
    i (r = e_b) and only_full (r > e_b, where {a} is no longer mild).
    """
    check_two_state(a, b, lambda_a, lambda_b)
    tol = tol if tol is not None else AppConfig.tolerance_for(a)

    first, _ = discount.derivatives_at_zero(d)
    first_order_ratio = lambda_b / (lambda_b - first)
    expected = discount.expected_discount_of_exponential(d, lambda_b)
    ratio = b / a

    gap_b = b * (lambda_b - first) - a * lambda_b   # first-order gap at b for {a, b}
    mild_gap = a * expected - b                      # J(b, {a}) - b
    if abs(mild_gap) <= tol:
        case = 'i'
    elif abs(gap_b) <= tol:
        case = 'iv'
    elif gap_b < 0:
        case = 'ii'
    elif mild_gap > 0:
        case = 'iii'
    else:
        case = 'only_full'

    singleton_mild = mild_gap >= -tol
    # from {a}, a's gap is a(lambda_a - delta'(0)) - a e_b lambda_a > 0
    closed = {
        '{a}': TwoStateRegionVerdict(mild=singleton_mild,
                                     weak=True if singleton_mild else None,
                                     strong=True if singleton_mild else None,
                                     optimal=singleton_mild,
                                     method='strict_first_order' if singleton_mild else None),
    }
    full_weak = gap_b >= -tol
    second_order = None
    if not full_weak:
        full_strong, full_method = None, None
    elif gap_b > tol:
        full_strong, full_method = True, 'strict_first_order'
    else:
        second_order = two_state_second_order(a, b, lambda_a, lambda_b, d, tol=tol)
        rate_tol = AppConfig.TOL_SCALE * max(lambda_a + lambda_b, 1.0)
        full_strong = False if second_order > rate_tol else (True if second_order < -rate_tol else None)
        full_method = 'second_order_closed_form'
    closed['{a,b}'] = TwoStateRegionVerdict(mild=True, weak=full_weak, strong=full_strong,
                                            optimal=mild_gap <= tol, method=full_method)

    generic: Dict[str, TwoStateRegionVerdict] = {}
    agrees = True
    if cross_check:
        chain = two_state_chain(a, b, lambda_a, lambda_b)
        for key, members in (('{a}', (0,)), ('{a,b}', (0, 1))):
            region = StoppingRegion.of(2, members)
            result = classify(chain, d, region, tol)
            try:
                optimal = verify_optimal(chain, d, region, tol).optimal
            except NotMild:
                optimal = False
            generic[key] = TwoStateRegionVerdict(
                mild=result.is_mild,
                weak=result.weak.holds if result.weak.evaluated else None,
                strong=_strong_flag(result.strong.verdict),
                optimal=optimal,
                method=result.strong.method,
            )
        agrees = all(
            (closed[k].mild, closed[k].weak, closed[k].strong, closed[k].optimal)
            == (generic[k].mild, generic[k].weak, generic[k].strong, generic[k].optimal)
            for k in closed
        )
        if not agrees:
            logger.warning('Closed-form and generic two-state verdicts disagree at a=%g b=%g lambda=(%g, %g)',
                           a, b, lambda_a, lambda_b)

    return TwoStateReport(case=case, ratio=ratio, first_order_ratio=first_order_ratio,
                          expected_discount=expected, second_order=second_order,
                          closed_form=closed, generic=generic, agrees=agrees)
