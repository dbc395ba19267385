from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import Any, NamedTuple, Optional, TypeVar

import numpy as np
import pandas as pd

from ..base import \
  DEFAULT_SAMPLES, DEFAULT_SEED, BacktrackingConfig, Blocks, DistanceKind, \
  InnerDistance, Method, ModeRoute, NodeId, Paths, log_trace
from ..baselines import interventional_cf
from ..errors import BacktrackError, InvalidPlan, ModelNotFound
from ..metrics import evaluate
from ..scm import Antecedent, StructuredVector, get_column_name
from ..solvers import mode_deepbc, sparse_deepbc, stochastic_deepbc
from ..types import Final, Self
from .data import TrainedModel, load_model, write_csv
from .morpho import INTENSITY, THICKNESS


R = TypeVar('R')

GRID_SEPARATOR: str = ':'

# the wrong-graph comparison needs a tight constraint so distance kinds only differ through the graph
WRONG_GRAPH_LAMBDA: Final[float] = 1e8
WRONG_GRAPH_ITERATIONS: Final[int] = 100

DEFAULT_WEIGHT_GRID: Final[tuple[float, ...]] = (0.1, 1.0, 10.0, 100.0, 1e4)
DEFAULT_DISTANCES: Final[tuple[str, ...]] = (DistanceKind.weighted_squared, DistanceKind.absolute_smooth)

SOLVER_METHODS: Final[frozenset[Method]] = frozenset({Method.mode, Method.sparse, Method.interventional})
BENCHMARK_METHODS: Final[frozenset[Method]] = SOLVER_METHODS | {Method.wrong_graph}
METRICS: Final[tuple[str, ...]] = ('plausible', 'obs', 'causal')
QUARTILES: Final[tuple[float, float, float]] = (0.25, 0.5, 0.75)


class ExperimentPlan(NamedTuple):
  model: Paths
  node: NodeId = INTENSITY
  grid: tuple[float, ...] = ()
  methods: tuple[Method, ...] = (Method.mode, Method.interventional)
  config: BacktrackingConfig = BacktrackingConfig()
  output: Optional[Paths] = None
  extra_output: Optional[Paths] = None
  repetitions: int = 1
  seed: int = DEFAULT_SEED
  factual: Optional[Blocks] = None
  reversed_model: Optional[Paths] = None
  distances: tuple[str, ...] = DEFAULT_DISTANCES
  weight_node: NodeId = THICKNESS
  weight_grid: tuple[float, ...] = DEFAULT_WEIGHT_GRID
  samples: int = DEFAULT_SAMPLES
  attributes: Optional[tuple[NodeId, ...]] = None
  workers: int = 1

  def validate(self, grid: bool = True) -> Self:
    if grid and not self.grid:
      raise InvalidPlan('Antecedent value grid is empty')

    if self.repetitions < 1:
      raise InvalidPlan(f'Repetitions must be at least 1, got {self.repetitions}')

    if self.samples < 1:
      raise InvalidPlan(f'Sample count must be at least 1, got {self.samples}')

    if not self.methods:
      raise InvalidPlan('No methods requested')

    self.config.validate()

    return self


class QueryOutcome(NamedTuple):
  x_star: StructuredVector
  u_star: StructuredVector
  residual: float
  iterations: int
  energy_final: float


class WrongGraphSummary(NamedTuple):
  correct_spread: float
  reversed_spread: float


class BenchmarkResult(NamedTuple):
  summary: pd.DataFrame
  records: pd.DataFrame
  failures: dict[str, int]


def parse_grid(text: str) -> tuple[float, ...]:
  """`LO:HI:STEPS` as evenly spaced values, or a comma separated list."""
  try:
    if GRID_SEPARATOR in text:
      low, high, steps = text.split(GRID_SEPARATOR)
      return tuple(np.linspace(float(low), float(high), int(steps)).tolist())

    return tuple(float(value) for value in text.split(',') if value.strip())

  except ValueError as e:
    raise InvalidPlan(f'Cannot parse grid {text!r}: {e}') from e


def parse_methods(text: str) -> tuple[Method, ...]:
  try:
    return tuple(Method(name.strip()) for name in text.split(',') if name.strip())

  except ValueError as e:
    raise InvalidPlan(f'Unknown method in {text!r}, expected some of {[str(m) for m in Method]}') from e


def open_model(path: Optional[Paths], role: str = 'model') -> TrainedModel:
  if path is None:
    raise ModelNotFound(f'No {role} file given')

  return load_model(path)


def parallel_map(func: Callable[..., R], items: Iterable[Any], workers: int = 1) -> list[R]:
  """Order-preserving map; results are identical for any worker count."""
  with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
    return list(executor.map(func, items))


def scalar_attributes(model: TrainedModel) -> tuple[NodeId, ...]:
  return tuple(node.id for node in model.graph.nodes if node.dim == 1)


def factual_for(model: TrainedModel, factual: Optional[Blocks], seed: int) -> StructuredVector:
  """Factual in model units, either given in raw units or drawn from the model prior."""
  if factual:
    missing = set(model.scm.ids) - set(factual)

    if missing:
      raise InvalidPlan(f'Factual values missing for nodes {sorted(missing)}')

    return model.factual_from_raw(factual)

  _, x = model.scm.sample(1, np.random.default_rng(seed))

  return x.item(0)


def grid_antecedent(model: TrainedModel, node: NodeId, value: float) -> Antecedent:
  if node not in model.scm.observed_layout:
    raise InvalidPlan(f'Unknown antecedent node {node!r}')

  return Antecedent.from_blocks({node: np.full(model.graph[node].dim, value)})


def solve_query(
  model: TrainedModel,
  x: StructuredVector,
  antecedent: Antecedent,
  method: Method,
  config: BacktrackingConfig,
) -> QueryOutcome:
  """One counterfactual in model units; `antecedent` is in model units too."""
  scm = model.scm

  if method == Method.mode:
    result = mode_deepbc(scm, x, antecedent, config)

  elif method == Method.sparse:
    result = sparse_deepbc(scm, x, antecedent, config.sparsity or 1, config)

  elif method == Method.interventional:
    x_star = interventional_cf(scm, x, antecedent).x_star
    residual = float(np.sum((x_star.select(antecedent.nodes) - antecedent.target) ** 2))

    return QueryOutcome(x_star, scm.abduct(x_star), residual, 0, float('nan'))

  else:
    raise InvalidPlan(f'Method {method} cannot answer a single counterfactual query')

  return QueryOutcome(result.x_star, result.u_star, result.residual, result.iterations, result.energy_final)


def solve_raw(
  model: TrainedModel,
  x_raw: Blocks,
  antecedent_raw: Antecedent,
  method: Method,
  config: BacktrackingConfig,
) -> tuple[StructuredVector, QueryOutcome]:
  antecedent_raw = antecedent_raw.validate(model.scm.observed_layout)
  x = model.factual_from_raw(x_raw)
  antecedent = model.scaling.antecedent_to_model(antecedent_raw)

  return x, solve_query(model, x, antecedent, method, config)


def _columns(model: TrainedModel, blocks: Blocks, prefix: str) -> dict[str, float]:
  row: dict[str, float] = {}

  for node_id, block in blocks.items():
    label = model.graph[node_id].label

    for k, value in enumerate(np.ravel(block)):
      row[get_column_name(label, k, prefix)] = float(value)

  return row


def result_row(
  model: TrainedModel,
  method: Method,
  antecedent_raw: Antecedent,
  x: StructuredVector,
  outcome: QueryOutcome,
  grid_value: float = float('nan'),
) -> dict[str, Any]:
  """CSV row with observables in raw units and latents in model units."""
  u = model.scm.abduct(x)

  return {
    'method': str(method),
    'antecedent': str(antecedent_raw),
    'grid_value': grid_value,
    **_columns(model, model.raw_blocks(x), 'x:'),
    **_columns(model, model.raw_blocks(outcome.x_star), 'x*:'),
    **_columns(model, u.blocks(), 'u:'),
    **_columns(model, outcome.u_star.blocks(), 'u*:'),
    'residual': outcome.residual,
    'iterations': outcome.iterations,
    'energy_final': outcome.energy_final,
  }


def _write(frame: pd.DataFrame, path: Optional[Paths]) -> pd.DataFrame:
  if path is not None:
    write_csv(frame, path)

  return frame


@log_trace
def run_query(
  model: TrainedModel,
  factual_raw: Optional[Blocks],
  antecedent_raw: Antecedent,
  method: Method,
  config: BacktrackingConfig,
  seed: int = DEFAULT_SEED,
  n_samples: int = DEFAULT_SAMPLES,
  output: Optional[Paths] = None,
) -> pd.DataFrame:
  """A single counterfactual query, or `n_samples` rows for the stochastic method."""
  antecedent_raw = antecedent_raw.validate(model.scm.observed_layout)
  x = factual_for(model, factual_raw, seed)
  antecedent = model.scaling.antecedent_to_model(antecedent_raw)

  if method != Method.stochastic:
    outcome = solve_query(model, x, antecedent, method, config)
    return _write(pd.DataFrame([result_row(model, method, antecedent_raw, x, outcome)]), output)

  results = stochastic_deepbc(model.scm, x, antecedent, config, n_samples)
  rows = [
    result_row(model, method, antecedent_raw, x, QueryOutcome(
      result.x_star, result.u_star, result.residual, result.iterations, result.energy_final,
    ))
    for result in results
  ]

  return _write(pd.DataFrame(rows), output)


@log_trace
def run_sweep(plan: ExperimentPlan) -> pd.DataFrame:
  plan = plan.validate()
  unsupported = set(plan.methods) - SOLVER_METHODS

  if unsupported:
    raise InvalidPlan(f'Sweeps support {sorted(SOLVER_METHODS)}, got {sorted(unsupported)}')

  model = open_model(plan.model)
  x = factual_for(model, plan.factual, plan.seed)

  def sweep_point(value: float) -> list[dict[str, Any]]:
    antecedent_raw = grid_antecedent(model, plan.node, value)
    antecedent = model.scaling.antecedent_to_model(antecedent_raw)

    return [
      result_row(model, method, antecedent_raw, x, solve_query(model, x, antecedent, method, plan.config), value)
      for method in plan.methods
    ]

  rows = [row for point in parallel_map(sweep_point, plan.grid, plan.workers) for row in point]
  logging.info(f'Sweep over {len(plan.grid)} values of {plan.node} produced {len(rows)} rows')

  return _write(pd.DataFrame(rows), plan.output)


def wrong_graph_config(config: BacktrackingConfig, nodes: Sequence[NodeId], kind: str) -> BacktrackingConfig:
  return config._replace(
    lam=max(config.lam, WRONG_GRAPH_LAMBDA),
    iterations=max(config.iterations, WRONG_GRAPH_ITERATIONS),
    distances={node_id: kind for node_id in nodes},
    route=ModeRoute.reweighted,
  )


@log_trace
def run_wrong_graph(plan: ExperimentPlan) -> tuple[pd.DataFrame, WrongGraphSummary]:
  """
  Backtrack on the antecedent node under each distance kind, once with the
  correct model and once with the edge-reversed one, and report how far the
  other scalar attributes spread across distance kinds.
  """
  plan = plan.validate()

  if len(plan.distances) < 2:
    raise InvalidPlan('Wrong-graph comparison needs at least two distance kinds')

  models = {
    'correct': open_model(plan.model),
    'reversed': open_model(plan.reversed_model, 'reversed-graph model'),
  }
  correct = models['correct']
  x_raw = correct.raw_blocks(factual_for(correct, plan.factual, plan.seed))
  responses = [node_id for node_id in (plan.attributes or scalar_attributes(correct)) if node_id != plan.node]
  rows: list[dict[str, Any]] = []
  spreads: dict[str, float] = {}

  for label, model in models.items():
    responses_by_value: dict[float, list[np.ndarray]] = {}

    for kind in plan.distances:
      config = wrong_graph_config(plan.config, model.scm.ids, kind)

      def wrong_graph_point(value: float) -> dict[str, Any]:
        antecedent_raw = grid_antecedent(model, plan.node, value)
        x, outcome = solve_raw(model, x_raw, antecedent_raw, Method.mode, config)
        row = result_row(model, Method.mode, antecedent_raw, x, outcome, value)

        return {'graph': label, 'distance': str(kind), **row}

      for value, row in zip(plan.grid, parallel_map(wrong_graph_point, plan.grid, plan.workers)):
        rows.append(row)
        x_star_raw = np.array([
          row[get_column_name(model.graph[node_id].label, 0, 'x*:')]
          for node_id in responses
        ])
        responses_by_value.setdefault(value, []).append(x_star_raw)

    spreads[label] = max(
      float(np.max(np.ptp(np.stack(values), axis=0), initial=0.0))
      for values in responses_by_value.values()
    )
    logging.info(f'{label} graph: max spread of {responses} across distances {spreads[label]:.3e}')

  frame = _write(pd.DataFrame(rows), plan.output)

  return frame, WrongGraphSummary(spreads['correct'], spreads['reversed'])


@log_trace
def run_benchmark(plan: ExperimentPlan) -> BenchmarkResult:
  """
  Repeated random queries: factual from the model prior, a uniformly chosen
  attribute, and a standard-normal antecedent value in model units. A control
  row re-asserts the factual value. Failed queries are counted and dropped.
  """
  plan = plan.validate(grid=False)
  unsupported = set(plan.methods) - BENCHMARK_METHODS

  if unsupported:
    raise InvalidPlan(f'Benchmarks support {sorted(BENCHMARK_METHODS)}, got {sorted(unsupported)}')

  model = open_model(plan.model)
  reversed_model = open_model(plan.reversed_model, 'reversed-graph model') \
    if Method.wrong_graph in plan.methods else None
  attributes = plan.attributes or scalar_attributes(model)
  seeds = np.random.SeedSequence(plan.seed).spawn(plan.repetitions)
  methods = (*plan.methods, Method.control)

  def counterfactual(method: Method, x: StructuredVector, antecedent: Antecedent) -> StructuredVector:
    if method == Method.control:
      return mode_deepbc(model.scm, x, antecedent, plan.config).x_star

    if method == Method.wrong_graph:
      x_raw = model.raw_blocks(x)
      antecedent_raw = Antecedent(model.scaling.blocks_to_raw(antecedent.values))
      _, outcome = solve_raw(reversed_model, x_raw, antecedent_raw, Method.mode, plan.config)
      return model.factual_from_raw(reversed_model.raw_blocks(outcome.x_star))

    return solve_query(model, x, antecedent, method, plan.config).x_star

  def repetition(index: int) -> tuple[list[dict[str, Any]], list[str]]:
    rng = np.random.default_rng(seeds[index])
    _, x = model.scm.sample(1, rng)
    x = x.item(0)
    attribute = attributes[int(rng.integers(len(attributes)))]
    value = rng.standard_normal(model.graph[attribute].dim)
    records: list[dict[str, Any]] = []
    failed: list[str] = []

    for method in methods:
      target = x.block(attribute) if method == Method.control else value
      antecedent = Antecedent.from_blocks({attribute: target})

      try:
        x_star = counterfactual(method, x, antecedent)
        reports = [evaluate(model.scm, x, x_star, m, attributes) for m in InnerDistance]

      except BacktrackError as e:
        logging.warning(f'Repetition {index}, method {method} failed: {e}')
        failed.append(str(method))
        continue

      records.extend(
        {'repetition': index, 'method': str(method), 'attribute': attribute, **report._asdict(), 'm': str(report.m)}
        for report in reports
      )

    return records, failed

  outcomes = parallel_map(repetition, range(plan.repetitions), plan.workers)
  records = pd.DataFrame([record for rows, _ in outcomes for record in rows])
  failures = {str(method): 0 for method in methods}

  for _, failed in outcomes:
    for method in failed:
      failures[method] += 1

  summary = summarize(records, failures)
  _write(records, plan.extra_output)

  return BenchmarkResult(_write(summary, plan.output), records, failures)


def summarize(records: pd.DataFrame, failures: dict[str, int]) -> pd.DataFrame:
  rows: list[dict[str, Any]] = []

  if records.empty:
    return pd.DataFrame(rows, columns=['method', 'metric', 'm', 'mean', 'std', 'n_repetitions', 'failures'])

  for (method, m), group in records.groupby(['method', 'm'], sort=False):
    for metric in METRICS:
      rows.append({
        'method': method,
        'metric': metric,
        'm': m,
        'mean': float(group[metric].mean()),
        'std': float(group[metric].std(ddof=0)),
        'n_repetitions': int(len(group)),
        'failures': failures.get(method, 0),
      })

  return pd.DataFrame(rows)


@log_trace
def run_stochastic_demo(plan: ExperimentPlan) -> tuple[pd.DataFrame, pd.DataFrame]:
  """Per-sample rows for every grid value, plus quartiles next to the mode."""
  plan = plan.validate()
  model = open_model(plan.model)
  x = factual_for(model, plan.factual, plan.seed)
  scalars = scalar_attributes(model)

  def demo_point(value: float) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    antecedent_raw = grid_antecedent(model, plan.node, value)
    antecedent = model.scaling.antecedent_to_model(antecedent_raw)
    results = stochastic_deepbc(model.scm, x, antecedent, plan.config, plan.samples)
    mode = mode_deepbc(model.scm, x, antecedent, plan.config.chain_start())

    samples = [
      {
        'grid_value': value,
        'sample': index,
        **_columns(model, model.raw_blocks(result.x_star), 'x*:'),
        'residual': result.residual,
      }
      for index, result in enumerate(results)
    ]
    summary = []

    for node_id in scalars:
      draws = np.array([model.raw_blocks(result.x_star)[node_id][0] for result in results])
      q1, median, q3 = np.quantile(draws, QUARTILES)
      summary.append({
        'grid_value': value,
        'node': node_id,
        'q1': float(q1),
        'median': float(median),
        'q3': float(q3),
        'mad': float(np.median(np.abs(draws - median))),
        'mode': float(model.raw_blocks(mode.x_star)[node_id][0]),
        'samples': len(draws),
      })

    return samples, summary

  points = parallel_map(demo_point, plan.grid, plan.workers)
  samples = pd.DataFrame([row for rows, _ in points for row in rows])
  summary = pd.DataFrame([row for _, rows in points for row in rows])

  return _write(samples, plan.output), _write(summary, plan.extra_output)


@log_trace
def run_weight_sweep(plan: ExperimentPlan) -> pd.DataFrame:
  """Mode counterfactual at the first grid value for each weight on `weight_node`."""
  plan = plan.validate()
  model = open_model(plan.model)
  x = factual_for(model, plan.factual, plan.seed)
  antecedent_raw = grid_antecedent(model, plan.node, plan.grid[0])
  antecedent = model.scaling.antecedent_to_model(antecedent_raw)
  factual_raw = model.raw_blocks(x)[plan.weight_node]
  interventional = model.raw_blocks(interventional_cf(model.scm, x, antecedent).x_star)[plan.weight_node]

  def weight_point(weight: float) -> dict[str, Any]:
    weights = {**(plan.config.weights or {}), plan.weight_node: weight}
    outcome = solve_query(model, x, antecedent, Method.mode, plan.config._replace(weights=weights))
    moved = model.raw_blocks(outcome.x_star)[plan.weight_node]

    return {
      'weight_node': plan.weight_node,
      'weight': weight,
      'shift': float(np.max(np.abs(moved - factual_raw))),
      'interventional_shift': float(np.max(np.abs(interventional - factual_raw))),
      **result_row(model, Method.mode, antecedent_raw, x, outcome, plan.grid[0]),
    }

  rows = parallel_map(weight_point, plan.weight_grid, plan.workers)

  return _write(pd.DataFrame(rows), plan.output)
