from __future__ import annotations

import logging
import sys
from argparse import ArgumentParser, Namespace
from collections.abc import Sequence
from typing import Any, Optional

import pandas as pd

from ..base import \
  DEFAULT_SAMPLES, DEFAULT_SEED, BacktrackingConfig, Blocks, Method, \
  NodeId, TrainingOptions
from ..distances import get_distance
from ..errors import BacktrackError, InvalidPlan
from ..scm import Antecedent, validate_scm
from ..types import Final
from .data import TrainedModel, blocks_from_frame, parse_factual, read_csv, save_model
from .experiments import \
  DEFAULT_DISTANCES, DEFAULT_WEIGHT_GRID, ExperimentPlan, open_model, parse_grid, parse_methods, \
  run_benchmark, run_query, run_stochastic_demo, run_sweep, run_weight_sweep, run_wrong_graph
from .morpho import INTENSITY, THICKNESS, generate_morpho_dataset
from .pipeline import MORPHO, ModelSpec, train_scm


PROG: Final[str] = 'scm-backtrack'
LOG_FORMAT: Final[str] = '%(levelname)s %(message)s'

QUERY_COMMANDS: Final[dict[str, Method]] = {
  'mode': Method.mode,
  'sample': Method.stochastic,
  'sparse': Method.sparse,
  'intervene': Method.interventional,
}
STOCHASTIC_COMMANDS: Final[frozenset[str]] = frozenset({'sample', 'stochastic'})

DEFAULT_WRONG_GRAPH_GRID: Final[str] = '1.5:3.5:9'
DEFAULT_BENCH_METHODS: Final[str] = 'mode,sparse,interventional'


def parse_assignments(text: Optional[str], name: str) -> dict[str, str]:
  """`NODE=VALUE,NODE=VALUE` into a mapping of strings."""
  assignments: dict[str, str] = {}

  for item in filter(None, (part.strip() for part in (text or '').split(','))):
    node_id, sep, value = item.partition('=')

    if not sep or not node_id.strip():
      raise InvalidPlan(f'{name} item {item!r} is not of the form NODE=VALUE')

    assignments[node_id.strip()] = value.strip()

  return assignments


def parse_weights(text: Optional[str]) -> Optional[dict[NodeId, float]]:
  try:
    weights = {node_id: float(value) for node_id, value in parse_assignments(text, 'Weight').items()}

  except ValueError as e:
    raise InvalidPlan(f'Weights {text!r} are not numeric') from e

  return weights or None


def parse_distances(text: Optional[str], node_ids: Sequence[NodeId]) -> Optional[dict[NodeId, str]]:
  """A single distance kind for every node, or `NODE=KIND,...`."""
  if not text:
    return None

  if '=' not in text:
    get_distance(text.strip())
    return {node_id: text.strip() for node_id in node_ids}

  distances = parse_assignments(text, 'Distance')

  for kind in distances.values():
    get_distance(kind)

  return distances


def config_from_args(args: Namespace, node_ids: Sequence[NodeId]) -> BacktrackingConfig:
  """Defaults, then the `--config` file, then individual flags."""
  if args.config:
    config = BacktrackingConfig.from_json(args.config)

  elif args.command in STOCHASTIC_COMMANDS:
    config = BacktrackingConfig.stochastic()

  else:
    config = BacktrackingConfig()

  overrides: dict[str, Any] = {
    'lam': args.lam,
    'iterations': args.iters,
    'step': args.eta,
    'damping': args.damping,
    'weights': parse_weights(args.weights),
    'distances': parse_distances(args.distance, node_ids),
    'sparsity': args.sparsity_m,
    'seed': args.seed,
  }
  overrides = {key: value for key, value in overrides.items() if value is not None}

  return config._replace(**overrides).validate()


def factual_from_args(args: Namespace, model: TrainedModel) -> Optional[Blocks]:
  if args.factual_json and args.factual_row is not None:
    raise InvalidPlan('Give either --factual-json or --factual-row, not both')

  if args.factual_json:
    return parse_factual(args.factual_json)

  if args.factual_row is None:
    return None

  if not args.data:
    raise InvalidPlan('--factual-row needs --data')

  blocks = blocks_from_frame(model.graph, read_csv(args.data))
  rows = len(next(iter(blocks.values())))

  if not 0 <= args.factual_row < rows:
    raise InvalidPlan(f'Factual row {args.factual_row} is out of range for {rows} rows')

  return {node_id: values[args.factual_row] for node_id, values in blocks.items()}


def emit(frame: pd.DataFrame, out: Optional[str]):
  if out is None:
    frame.to_csv(sys.stdout, index=False, float_format='%.17g')


def add_config_args(parser: ArgumentParser):
  group = parser.add_argument_group('backtracking')
  group.add_argument('--config', help='JSON file with backtracking settings; flags override it')
  group.add_argument('--lambda', dest='lam', type=float, help='antecedent penalty weight')
  group.add_argument('--iters', type=int, help='iterations (mode) or Langevin steps')
  group.add_argument('--eta', type=float, help='step size for first-order and Langevin updates')
  group.add_argument('--damping', type=float, help='damping of the closed-form update')
  group.add_argument('--weights', help='per-node latent weights, NODE=W,...')
  group.add_argument('--distance', help='distance kind for all nodes, or NODE=KIND,...')
  group.add_argument('--sparsity-m', dest='sparsity_m', type=int, help='number of latent blocks sparse solves may move')
  group.add_argument('--seed', type=int, help='seed for Langevin noise and prior factual draws')


def add_factual_args(parser: ArgumentParser):
  parser.add_argument('--factual-json', help='factual values in raw units, as a JSON object of node to value(s)')
  parser.add_argument('--factual-row', type=int, help='row index of --data to use as the factual')
  parser.add_argument('--data', help='dataset CSV for --factual-row')


def add_model_args(parser: ArgumentParser, out: bool = True):
  parser.add_argument('--model', required=True, help='trained model JSON')
  parser.add_argument('--workers', type=int, default=1)

  if out:
    parser.add_argument('--out', help='output CSV, standard output if omitted')


def build_parser() -> ArgumentParser:
  parser = ArgumentParser(prog=PROG, description='Backtracking counterfactuals in structural causal models.')
  parser.add_argument('-v', '--verbose', action='store_true', help='log at debug level')
  parser.add_argument('--log-level', default=None, help='any logging level name')
  commands = parser.add_subparsers(dest='command', required=True)

  gen = commands.add_parser('gen-data', help='sample the synthetic thickness/intensity/image dataset')
  gen.add_argument('--n', type=int, required=True)
  gen.add_argument('--seed', type=int, default=DEFAULT_SEED)
  gen.add_argument('--out', required=True)

  train = commands.add_parser('train', help='fit every mechanism by maximum likelihood')
  train.add_argument('--data', required=True)
  train.add_argument('--graph', default=MORPHO, help=f'graph specification JSON, or {MORPHO!r}')
  train.add_argument('--out', required=True)
  train.add_argument('--reverse-edge', nargs=2, metavar=('FROM', 'TO'))
  train.add_argument('--iters', type=int, default=TrainingOptions().iterations)
  train.add_argument('--lr', type=float, default=TrainingOptions().lr)
  train.add_argument('--batch-size', type=int, default=TrainingOptions().batch_size)
  train.add_argument('--seed', type=int, default=DEFAULT_SEED)
  train.add_argument('--workers', type=int, default=1)

  for name, method in QUERY_COMMANDS.items():
    query = commands.add_parser(name, help=f'{method} counterfactual for one factual')
    add_model_args(query)
    add_factual_args(query)
    query.add_argument('--antecedent', required=True, help='NODE=VALUE[,NODE=VALUE] in raw units')
    query.add_argument('--samples', type=int, default=DEFAULT_SAMPLES)
    add_config_args(query)

  sweep = commands.add_parser('sweep', help='counterfactuals over a grid of antecedent values')
  add_model_args(sweep)
  add_factual_args(sweep)
  sweep.add_argument('--node', default=INTENSITY)
  sweep.add_argument('--grid', required=True, help='LO:HI:STEPS or a comma separated list, raw units')
  sweep.add_argument('--methods', default='mode,interventional')
  add_config_args(sweep)

  wrong = commands.add_parser('wrong-graph', help='compare distance kinds under the correct and reversed graph')
  add_model_args(wrong)
  add_factual_args(wrong)
  wrong.add_argument('--model-reversed', required=True)
  wrong.add_argument('--node', default=THICKNESS)
  wrong.add_argument('--grid', default=DEFAULT_WRONG_GRAPH_GRID)
  wrong.add_argument('--distances', default=','.join(DEFAULT_DISTANCES))
  add_config_args(wrong)

  bench = commands.add_parser('bench', help='repeated random queries scored by the metrics')
  add_model_args(bench)
  bench.add_argument('--model-reversed', help='reversed-graph model for the wrong-graph method')
  bench.add_argument('--reps', type=int, default=500)
  bench.add_argument('--methods', default=DEFAULT_BENCH_METHODS)
  bench.add_argument('--attributes', help='comma separated attribute nodes, all scalar nodes by default')
  bench.add_argument('--records-out', help='per-repetition metrics CSV')
  add_config_args(bench)

  weights = commands.add_parser('weights', help='mode counterfactual for a range of weights on one node')
  add_model_args(weights)
  add_factual_args(weights)
  weights.add_argument('--node', default=INTENSITY)
  weights.add_argument('--value', type=float, required=True, help='antecedent value, raw units')
  weights.add_argument('--weight-node', default=THICKNESS)
  weights.add_argument('--weight-grid', default=','.join(f'{w:g}' for w in DEFAULT_WEIGHT_GRID))
  add_config_args(weights)

  stochastic = commands.add_parser('stochastic', help='Langevin samples over a grid of antecedent values')
  add_model_args(stochastic)
  add_factual_args(stochastic)
  stochastic.add_argument('--node', default=INTENSITY)
  stochastic.add_argument('--grid', required=True)
  stochastic.add_argument('--samples', type=int, default=DEFAULT_SAMPLES)
  stochastic.add_argument('--summary-out', help='quartile summary CSV')
  add_config_args(stochastic)

  check = commands.add_parser('validate', help='check acyclicity, signatures and inversion of a model')
  check.add_argument('--model', required=True)
  check.add_argument('--probes', type=int, default=16)
  check.add_argument('--seed', type=int, default=DEFAULT_SEED)

  return parser


def cmd_gen_data(args: Namespace) -> int:
  generate_morpho_dataset(args.n, args.seed, args.out)
  return 0


def cmd_train(args: Namespace) -> int:
  spec = ModelSpec.load(args.graph)

  if args.reverse_edge:
    spec = spec.reversed_edge(*args.reverse_edge)

  opts = TrainingOptions(args.lr, args.iters, args.batch_size, args.seed).validate()
  report = train_scm(args.data, spec, opts, args.workers)
  save_model(report.model, args.out)

  for node_id, nll in report.nll.items():
    print(f'{node_id}\tnll={nll:.6f}\tvalidation_nll={report.validation_nll[node_id]:.6f}\titerations={report.iterations[node_id]}')

  return 0


def cmd_query(args: Namespace) -> int:
  model = open_model(args.model)
  config = config_from_args(args, model.scm.ids)
  frame = run_query(
    model,
    factual_from_args(args, model),
    Antecedent.parse(args.antecedent),
    QUERY_COMMANDS[args.command],
    config,
    config.seed,
    args.samples,
    args.out,
  )
  emit(frame, args.out)

  return 0


def plan_from_args(args: Namespace, **fields: Any) -> ExperimentPlan:
  model = open_model(args.model)
  config = config_from_args(args, model.scm.ids)
  factual = factual_from_args(args, model) if hasattr(args, 'factual_json') else None

  return ExperimentPlan(
    model=args.model,
    config=config,
    output=args.out,
    seed=config.seed,
    factual=factual,
    workers=args.workers,
    **fields,
  )


def cmd_sweep(args: Namespace) -> int:
  plan = plan_from_args(args, node=args.node, grid=parse_grid(args.grid), methods=parse_methods(args.methods))
  emit(run_sweep(plan), args.out)

  return 0


def cmd_wrong_graph(args: Namespace) -> int:
  distances = tuple(kind.strip() for kind in args.distances.split(',') if kind.strip())

  for kind in distances:
    get_distance(kind)

  plan = plan_from_args(
    args,
    node=args.node,
    grid=parse_grid(args.grid),
    reversed_model=args.model_reversed,
    distances=distances,
  )
  frame, summary = run_wrong_graph(plan)
  emit(frame, args.out)
  print(f'correct_spread={summary.correct_spread:.6e}\treversed_spread={summary.reversed_spread:.6e}', file=sys.stderr)

  return 0


def cmd_bench(args: Namespace) -> int:
  attributes = tuple(node.strip() for node in args.attributes.split(',')) if args.attributes else None
  plan = plan_from_args(
    args,
    methods=parse_methods(args.methods),
    repetitions=args.reps,
    reversed_model=args.model_reversed,
    attributes=attributes,
    extra_output=args.records_out,
  )
  result = run_benchmark(plan)
  emit(result.summary, args.out)

  for method, count in result.failures.items():
    if count:
      logging.warning(f'{method}: {count} of {plan.repetitions} queries failed and were excluded')

  return 0


def cmd_weights(args: Namespace) -> int:
  plan = plan_from_args(
    args,
    node=args.node,
    grid=(args.value,),
    weight_node=args.weight_node,
    weight_grid=parse_grid(args.weight_grid),
  )
  emit(run_weight_sweep(plan), args.out)

  return 0


def cmd_stochastic(args: Namespace) -> int:
  plan = plan_from_args(
    args,
    node=args.node,
    grid=parse_grid(args.grid),
    samples=args.samples,
    extra_output=args.summary_out,
  )
  samples, _ = run_stochastic_demo(plan)
  emit(samples, args.out)

  return 0


def cmd_validate(args: Namespace) -> int:
  report = validate_scm(open_model(args.model).scm, args.probes, args.seed)

  for check in report.checks:
    print(f'{check.name}\t{"pass" if check.passed else "FAIL"}\t{check.detail}')

  if not report.passed:
    raise InvalidPlan(f'Model failed checks: {", ".join(check.name for check in report.failures)}')

  return 0


COMMANDS: Final[dict[str, Any]] = {
  'gen-data': cmd_gen_data,
  'train': cmd_train,
  **{name: cmd_query for name in QUERY_COMMANDS},
  'sweep': cmd_sweep,
  'wrong-graph': cmd_wrong_graph,
  'bench': cmd_bench,
  'weights': cmd_weights,
  'stochastic': cmd_stochastic,
  'validate': cmd_validate,
}


def configure_logging(args: Namespace):
  level = args.log_level.upper() if args.log_level else ('DEBUG' if args.verbose else 'WARNING')

  if not isinstance(logging.getLevelName(level), int):
    raise InvalidPlan(f'Unknown log level {args.log_level!r}')

  logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: Optional[Sequence[str]] = None) -> int:
  args = build_parser().parse_args(argv)

  try:
    configure_logging(args)
    return COMMANDS[args.command](args)

  except (BacktrackError, OSError) as e:
    print(f'error: {e}', file=sys.stderr)
    return 1


if __name__ == '__main__':
  sys.exit(main())
