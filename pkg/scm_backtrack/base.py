from __future__ import annotations

import json
import logging
from collections.abc import Callable, Mapping
from functools import wraps
from math import log, pi
from os import PathLike
from typing import Any, NamedTuple, Optional, ParamSpec, TYPE_CHECKING, TypeVar, Union

from strenum import StrEnum

from .errors import InvalidPlan
from .types import Array, Final, Mask, Self


if TYPE_CHECKING:
  from .scm.vector import StructuredVector


class MechanismKind(StrEnum):
  affine: Self = 'affine'
  sigmoid: Self = 'sigmoid'
  categorical: Self = 'categorical'
  predictor: Self = 'predictor'


class DistanceKind(StrEnum):
  weighted_squared: Self = 'weighted-squared'
  absolute_smooth: Self = 'absolute-smooth'


class InnerDistance(StrEnum):
  SQU: Self = 'SQU'
  ABS: Self = 'ABS'


class Method(StrEnum):
  mode: Self = 'mode'
  stochastic: Self = 'stochastic'
  sparse: Self = 'sparse'
  interventional: Self = 'interventional'
  deep_ce: Self = 'deep-ce'
  wrong_graph: Self = 'wrong-graph'
  control: Self = 'control'


class ModeRoute(StrEnum):
  linearized: Self = 'linearized'
  first_order: Self = 'first-order'
  reweighted: Self = 'reweighted'


class SolveForm(StrEnum):
  primal: Self = 'primal'
  dual: Self = 'dual'


# type aliases
NodeId = str
Paths = Union[PathLike, str]
Blocks = dict[NodeId, Array]
Weights = Mapping[NodeId, float]
Distances = Mapping[NodeId, str]

LOG_2PI: Final[float] = log(2 * pi)

# solver defaults, mode and stochastic
DEFAULT_LAMBDA: Final[float] = 1e3
DEFAULT_ITERATIONS: Final[int] = 30
DEFAULT_STEP: Final[float] = 1e-3
DEFAULT_WEIGHT: Final[float] = 1.0
DEFAULT_TOL: Final[float] = 1e-10
DEFAULT_SEED: Final[int] = 0

STOCHASTIC_LAMBDA: Final[float] = 1e4
STOCHASTIC_ITERATIONS: Final[int] = 1000
STOCHASTIC_STEP: Final[float] = 1e-5
DEFAULT_SAMPLES: Final[int] = 400
BURN_IN_FRACTION: Final[float] = 0.2
# mode solve that seeds the Langevin chains; stops early once the energy settles
SEED_ITERATIONS: Final[int] = 1000

PINV_RCOND: Final[float] = 1e-12
RETRY_DAMPING: Final[float] = 1e-8
OSCILLATION_PATIENCE: Final[int] = 5
OSCILLATION_RTOL: Final[float] = 1e-12

HUBER_DELTA: Final[float] = 0.1

SPARSE_RESIDUAL_FACTOR: Final[float] = 10.0
# residuals below this count as meeting the antecedent when comparing sparse and full solves
RESIDUAL_FLOOR: Final[float] = 1e-4

# mechanisms
DEFAULT_CATEGORICAL_C: Final[float] = 1.0
DEFAULT_TEMPERATURE: Final[float] = 1.0
HIDDEN_WIDTH: Final[int] = 8

# validation
PROBE_POINTS: Final[int] = 16
PROBE_SEED: Final[int] = 0
ROUND_TRIP_TOL: Final[float] = 1e-8

# training
DEFAULT_LEARNING_RATE: Final[float] = 0.05
DEFAULT_TRAIN_ITERATIONS: Final[int] = 3000
DEFAULT_BATCH_SIZE: Final[int] = 256
DEFAULT_TRAIN_TOL: Final[float] = 1e-9
DEFAULT_CHECK_EVERY: Final[int] = 100
TRAIN_SPLIT: Final[float] = 0.8


class BacktrackingConfig(NamedTuple):
  lam: float = DEFAULT_LAMBDA
  iterations: int = DEFAULT_ITERATIONS
  step: float = DEFAULT_STEP
  damping: float = 0.0
  weights: Optional[Weights] = None
  distances: Optional[Distances] = None
  sparsity: Optional[int] = None
  seed: int = DEFAULT_SEED
  tol: float = DEFAULT_TOL
  route: ModeRoute = ModeRoute.linearized
  form: SolveForm = SolveForm.dual

  @classmethod
  def stochastic(cls: type[Self], **kwargs: Any) -> Self:
    params = dict(
      lam=STOCHASTIC_LAMBDA,
      iterations=STOCHASTIC_ITERATIONS,
      step=STOCHASTIC_STEP,
    )
    params.update(kwargs)

    return cls(**params)

  def chain_start(self) -> Self:
    """Mode-solve settings for seeding Langevin chains, apart from the sampler's step and horizon."""
    route = self.route

    if route == ModeRoute.linearized and not self.is_quadratic():
      route = ModeRoute.reweighted

    return self._replace(iterations=SEED_ITERATIONS, step=DEFAULT_STEP, route=route)

  @classmethod
  def from_json(cls: type[Self], source: Union[Paths, Mapping[str, Any]]) -> Self:
    if isinstance(source, Mapping):
      data = dict(source)

    else:
      with open(source) as file:
        data = json.load(file)

    unknown = set(data) - set(cls._fields)

    if unknown:
      raise InvalidPlan(f'Unknown config keys: {sorted(unknown)}')

    if 'route' in data:
      data['route'] = ModeRoute(data['route'])

    if 'form' in data:
      data['form'] = SolveForm(data['form'])

    return cls(**data).validate()

  def to_dict(self) -> dict[str, Any]:
    data = self._asdict()
    data['weights'] = dict(self.weights) if self.weights else None
    data['distances'] = dict(self.distances) if self.distances else None
    data['route'] = str(self.route)
    data['form'] = str(self.form)

    return data

  def weight(self, node: NodeId) -> float:
    if self.weights and node in self.weights:
      return float(self.weights[node])

    return DEFAULT_WEIGHT

  def distance(self, node: NodeId) -> str:
    if self.distances and node in self.distances:
      return str(self.distances[node])

    return DistanceKind.weighted_squared

  def is_quadratic(self) -> bool:
    if not self.distances:
      return True

    return all(
      kind == DistanceKind.weighted_squared
      for kind in self.distances.values()
    )

  def validate(self) -> Self:
    if not self.lam > 0:
      raise InvalidPlan(f'Penalty lambda must be positive, got {self.lam}')

    if self.iterations < 1:
      raise InvalidPlan(f'Iteration count must be at least 1, got {self.iterations}')

    if self.step < 0:
      raise InvalidPlan(f'Step size must be non-negative, got {self.step}')

    if self.damping < 0:
      raise InvalidPlan(f'Damping must be non-negative, got {self.damping}')

    if self.sparsity is not None and self.sparsity < 1:
      raise InvalidPlan(f'Sparsity bound must be at least 1, got {self.sparsity}')

    for node, weight in (self.weights or {}).items():
      if not weight > 0:
        raise InvalidPlan(f'Weight for node {node!r} must be positive, got {weight}')

    return self


class CounterfactualResult(NamedTuple):
  u_star: StructuredVector
  x_star: StructuredVector
  residual: float
  energy_trace: tuple[float, ...] = ()
  iterations: int = 0
  changed: Optional[Mask] = None
  trajectory: Optional[Array] = None

  @property
  def energy_final(self) -> float:
    if not self.energy_trace:
      return float('nan')

    return self.energy_trace[-1]

  @property
  def changed_count(self) -> int:
    if self.changed is None:
      return 0

    return int(self.changed.sum())


class TrainingOptions(NamedTuple):
  lr: float = DEFAULT_LEARNING_RATE
  iterations: int = DEFAULT_TRAIN_ITERATIONS
  batch_size: int = DEFAULT_BATCH_SIZE
  seed: int = DEFAULT_SEED
  tol: float = DEFAULT_TRAIN_TOL
  check_every: int = DEFAULT_CHECK_EVERY

  def validate(self) -> Self:
    for name in ('lr', 'iterations', 'batch_size', 'tol', 'check_every'):
      value = getattr(self, name)

      if not value > 0:
        raise InvalidPlan(f'Training option {name} must be positive, got {value}')

    if self.seed < 0:
      raise InvalidPlan(f'Training seed must be non-negative, got {self.seed}')

    return self


T = TypeVar('T')
P = ParamSpec('P')


def log_trace(func: Callable[P, T]) -> Callable[P, T]:
  @wraps(func)
  def new_func(*args: P.args, **kwargs: P.kwargs) -> T:
    module = func.__module__.rpartition('.')[-1]
    logging.debug(f'{module}.{func.__name__}() called.')

    return func(*args, **kwargs)

  return new_func
