"""Domain records for chains, discount functions, regions and equilibrium results"""
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from shared.data_layer.errors import InvalidParameter


@dataclass(frozen=True, eq=False)
class Chain:
    """Finite continuous-time Markov chain whose state values are the payoffs"""
    values: np.ndarray
    generator: np.ndarray
    labels: Tuple[str, ...]

    @property
    def n_states(self) -> int:
        return len(self.values)

    @property
    def holding_rates(self) -> np.ndarray:
        """lambda_x = -q_xx, the rate of leaving state x"""
        return -np.diag(self.generator)

    @property
    def max_rate(self) -> float:
        return float(self.holding_rates.max()) if self.n_states else 0.0

    @property
    def payoff_bound(self) -> float:
        """C = max state value"""
        return float(self.values.max()) if self.n_states else 0.0

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidParameter(f'Unknown state label {label!r}; known: {", ".join(self.labels)}')


@dataclass(frozen=True)
class Path:
    """Right-continuous piecewise-constant realization of a chain"""
    jump_times: Tuple[float, ...]
    states: Tuple[int, ...]
    horizon: float

    @property
    def initial_state(self) -> int:
        return self.states[0]

    @property
    def first_holding_time(self) -> Optional[float]:
        """Holding time at the initial state, None when censored by the horizon"""
        return self.jump_times[0] if self.jump_times else None

    def state_at(self, t: float) -> int:
        k = int(np.searchsorted(np.asarray(self.jump_times), t, side='right'))
        return self.states[k]


@dataclass(frozen=True)
class DiscountFn:
    """Discount function; kind is exponential, hyperbolic or generalized_hyperbolic"""
    kind: str
    rate: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0

    def __call__(self, t):
        from shared.engine.discount import evaluate
        return evaluate(self, t)


@dataclass(frozen=True)
class LogSubadditivityReport:
    holds: bool
    worst_violation: float
    method: str


@dataclass(frozen=True)
class StoppingRegion:
    """Set of state indices where the agent stops"""
    members: FrozenSet[int]
    n_states: int

    @classmethod
    def of(cls, n_states: int, indices: Iterable[int]) -> 'StoppingRegion':
        members = frozenset(int(i) for i in indices)
        bad = [i for i in members if i < 0 or i >= n_states]
        if bad:
            raise InvalidParameter(f'State indices {sorted(bad)} out of range for {n_states} states')
        return cls(members=members, n_states=n_states)

    @classmethod
    def everything(cls, n_states: int) -> 'StoppingRegion':
        return cls(members=frozenset(range(n_states)), n_states=n_states)

    @classmethod
    def empty(cls, n_states: int) -> 'StoppingRegion':
        return cls(members=frozenset(), n_states=n_states)

    @classmethod
    def from_bitmask(cls, n_states: int, bits: int) -> 'StoppingRegion':
        """Bit i set means state i stops"""
        return cls.of(n_states, (i for i in range(n_states) if bits >> i & 1))

    @property
    def mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.members)] = True
        return mask

    @property
    def bitmask(self) -> int:
        return sum(1 << i for i in self.members)

    @property
    def indices(self) -> Tuple[int, ...]:
        return tuple(sorted(self.members))

    @property
    def complement(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.n_states) if i not in self.members)

    def union(self, other: Iterable[int]) -> 'StoppingRegion':
        return StoppingRegion.of(self.n_states, self.members | frozenset(other))

    def issubset(self, other: 'StoppingRegion') -> bool:
        return self.members <= other.members

    def labels(self, chain: Chain) -> List[str]:
        return [chain.labels[i] for i in self.indices]

    def __contains__(self, index) -> bool:
        return index in self.members

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)


@dataclass
class ValueVector:
    """J(x, S) (or its time-shifted variant) for every state"""
    values: np.ndarray
    errors: np.ndarray
    method: str
    region: StoppingRegion
    shift: float = 0.0
    empty_region_warning: bool = False

    def __getitem__(self, index: int) -> float:
        return float(self.values[index])


@dataclass(frozen=True)
class MonteCarloEstimate:
    estimate: float
    stderr: float
    bias_bound: float
    n_paths: int
    n_censored: int


@dataclass
class MildVerdict:
    holds: bool
    worst_gap: float
    worst_state: Optional[int]
    gaps: Dict[int, float] = field(default_factory=dict)


@dataclass
class WeakVerdict:
    holds: bool
    evaluated: bool
    gaps: Dict[int, float] = field(default_factory=dict)


@dataclass
class StateStrongVerdict:
    verdict: str
    method: str
    detail: Tuple[float, ...] = ()


@dataclass
class StrongVerdict:
    verdict: str
    method: Optional[str]
    per_state: Dict[int, StateStrongVerdict] = field(default_factory=dict)


@dataclass
class Classification:
    """Mild/weak/strong verdicts; strong is only evaluated if weak holds, weak only if mild holds"""
    region: StoppingRegion
    mild: MildVerdict
    weak: WeakVerdict
    strong: StrongVerdict
    irreducibility_warning: bool
    tol: float
    eps_grid: Tuple[float, ...]

    @property
    def is_mild(self) -> bool:
        return self.mild.holds

    @property
    def is_weak(self) -> bool:
        return self.mild.holds and self.weak.holds

    @property
    def is_strong(self) -> bool:
        return self.is_weak and self.strong.verdict == 'strong'


@dataclass
class BestResponse:
    state: int
    state_value: float
    sup_value: float
    argmax: Optional[StoppingRegion]
    candidates: int
    strategy: str

    @property
    def margin(self) -> float:
        return self.state_value - self.sup_value


@dataclass
class IterationStep:
    index: int
    region: StoppingRegion
    added: Tuple[int, ...]
    best_responses: Dict[int, BestResponse] = field(default_factory=dict)

    @property
    def certificates(self) -> Dict[int, float]:
        """x - sup J(x, S) for every state added in this step"""
        return {x: br.margin for x, br in self.best_responses.items() if x in self.added}


@dataclass
class IterationTrace:
    initial: StoppingRegion
    steps: List[IterationStep]
    tol: float

    @property
    def final(self) -> StoppingRegion:
        return self.steps[-1].region if self.steps else self.initial

    @property
    def regions(self) -> List[StoppingRegion]:
        return [self.initial] + [step.region for step in self.steps]

    @property
    def augmenting_steps(self) -> int:
        return sum(1 for step in self.steps if step.added)


@dataclass
class OptimalityReport:
    optimal: bool
    smallest: bool
    mild_regions: int
    dominance_failures: List[Tuple[StoppingRegion, int, float]] = field(default_factory=list)


@dataclass
class TwoStateRegionVerdict:
    mild: bool
    weak: Optional[bool]
    strong: Optional[bool]
    optimal: bool
    method: Optional[str] = None


@dataclass
class TwoStateReport:
    case: str
    ratio: float
    first_order_ratio: float
    expected_discount: float
    second_order: Optional[float]
    closed_form: Dict[str, TwoStateRegionVerdict]
    generic: Dict[str, TwoStateRegionVerdict]
    agrees: bool


@dataclass(frozen=True)
class PutModel:
    """American put on the geometric birth-death price chain u^i, truncated to [i_min, i_max]"""
    u: float
    p: float
    lam: float
    beta: float
    K: float
    i_min: int
    i_max: int

    @property
    def exponents(self) -> np.ndarray:
        return np.arange(self.i_min, self.i_max + 1)

    @property
    def n_states(self) -> int:
        return self.i_max - self.i_min + 1

    def index_of_exponent(self, i: int) -> int:
        if not self.i_min <= i <= self.i_max:
            raise InvalidParameter(f'Exponent {i} outside truncation [{self.i_min}, {self.i_max}]')
        return i - self.i_min

    def payoff(self, i) -> np.ndarray:
        return np.maximum(self.K - self.u ** np.asarray(i, dtype=float), 0.0)


@dataclass
class ThresholdResult:
    n0: int
    m0: int
    log_value: float
    alpha1: float
    sandwich_holds: bool


@dataclass
class PrecommitmentResult:
    region: StoppingRegion
    values: np.ndarray
    richardson_error: float
    dt: float
    horizon: float


@dataclass
class ExerciseComparison:
    equilibrium_region: StoppingRegion
    precommitment_region: StoppingRegion
    containment_holds: bool
    alpha1: float
    threshold: ThresholdResult
    trace: IterationTrace
    step_bound: int
    precommitment: PrecommitmentResult


@dataclass
class ModelConfig:
    """Parsed model file; exactly one of chain/two_state/put is set"""
    kind: str
    chain: Optional[Chain] = None
    two_state: Optional[Dict[str, float]] = None
    put: Optional[PutModel] = None
    put_options: Dict[str, float] = field(default_factory=dict)
    discount: Optional[DiscountFn] = None
    region: Optional[Tuple[str, ...]] = None
    tol: Optional[float] = None
    value_tol: Optional[float] = None
    eps_grid: Optional[Tuple[float, ...]] = None
    seed: int = 0
    monte_carlo: Dict[str, float] = field(default_factory=dict)
    grid: Dict[str, float] = field(default_factory=dict)
