from __future__ import annotations

import logging
from collections.abc import Mapping
from concurrent.futures import ThreadPoolExecutor
from typing import Any, NamedTuple, Optional, Union

import numpy as np
import pandas as pd

from ..base import TRAIN_SPLIT, MechanismKind, NodeId, Paths, TrainingOptions, log_trace
from ..errors import EmptyDataset, InvalidPlan, UnknownMechanismKind
from ..mechanisms import \
  AffineFlow, CategoricalMechanism, Mechanism, SigmoidFlow, mechanism_from_dict, train_flow_mle
from ..scm import CausalGraph, Node, Scm, read_document, topological_order
from ..types import Array, Self
from .data import Scaling, TrainedModel, blocks_from_frame, read_csv
from .morpho import IMAGE, IMAGE_DIM, INTENSITY, NAMES, THICKNESS, GroundTruthMorpho


MORPHO: str = 'morpho'
UNSCALED_KINDS: frozenset[str] = frozenset({MechanismKind.categorical, MechanismKind.predictor})


class ModelSpec(NamedTuple):
  """Graph plus an untrained mechanism template per node."""

  graph: CausalGraph
  templates: dict[NodeId, dict[str, Any]]

  @classmethod
  def from_dict(cls: type[Self], data: Mapping[str, Any]) -> Self:
    try:
      entries = data['nodes']
      graph = CausalGraph(
        Node(str(entry['id']), entry.get('name', ''), int(entry.get('dim', 1)), tuple(entry.get('parents', ())))
        for entry in entries
      )
      templates = {str(entry['id']): dict(entry.get('mechanism', {})) for entry in entries}

    except (KeyError, TypeError) as e:
      raise InvalidPlan(f'Malformed graph specification: {e}') from e

    topological_order(graph)

    return cls(graph, templates)

  @classmethod
  def load(cls: type[Self], source: Union[Paths, str]) -> Self:
    if str(source) == MORPHO:
      return morpho_spec()

    return cls.from_dict(read_document(source))

  def kind(self, node_id: NodeId) -> str:
    return str(self.templates[node_id].get('kind', MechanismKind.affine))

  def reversed_edge(self, source: NodeId, target: NodeId) -> ModelSpec:
    return ModelSpec(self.graph.reversed_edge(source, target), self.templates)


def morpho_spec(image_dim: int = IMAGE_DIM, hidden: Optional[int] = None) -> ModelSpec:
  truth = GroundTruthMorpho(image_dim=image_dim)

  return ModelSpec(truth.graph, {
    THICKNESS: {'kind': MechanismKind.affine, 'hidden': hidden},
    INTENSITY: {'kind': MechanismKind.sigmoid, 'low': truth.low, 'high': truth.high, 'hidden': hidden},
    IMAGE: {'kind': MechanismKind.affine, 'hidden': hidden},
  })


def build_mechanism(
  template: Mapping[str, Any],
  dim: int,
  parent_dim: int,
  mean: Array,
  std: Array,
  seed: int = 0,
) -> Mechanism:
  """Untrained mechanism in model units; raw-unit bounds are mapped through the scaling."""
  kind = str(template.get('kind', MechanismKind.affine))
  hidden = template.get('hidden')

  if kind == MechanismKind.affine:
    return AffineFlow(dim, parent_dim, hidden=hidden, seed=seed)

  if kind == MechanismKind.sigmoid:
    low, high = np.asarray(template['low'], dtype=float), np.asarray(template['high'], dtype=float)
    return SigmoidFlow(dim, parent_dim, amplitude=(high - low) / std, low=(low - mean) / std, hidden=hidden, seed=seed)

  if kind == MechanismKind.categorical:
    inner = AffineFlow(dim - 1, parent_dim, hidden=hidden, seed=seed)
    return CategoricalMechanism(dim, parent_dim, template.get('c', 1.0), template.get('tau', 1.0), inner)

  if kind == MechanismKind.predictor:
    return mechanism_from_dict({**template, 'dim': dim, 'parent_dim': parent_dim})

  raise UnknownMechanismKind(f'Unknown mechanism kind {kind!r} in graph specification')


class TrainingReport(NamedTuple):
  model: TrainedModel
  nll: dict[NodeId, float]
  validation_nll: dict[NodeId, float]
  iterations: dict[NodeId, int]


def split_rows(n: int, seed: int, fraction: float = TRAIN_SPLIT) -> tuple[Array, Array]:
  order = np.random.default_rng(seed).permutation(n)
  cut = min(n, max(1, int(round(fraction * n))))

  return np.sort(order[:cut]), np.sort(order[cut:])


@log_trace
def train_scm(
  data: Union[pd.DataFrame, Paths],
  spec: ModelSpec,
  opts: TrainingOptions = TrainingOptions(),
  workers: int = 1,
) -> TrainingReport:
  """
  Standardize each node on the training split, then fit every mechanism
  against its own parents only. Validation NLL is reported in raw units.
  """
  frame = data if isinstance(data, pd.DataFrame) else read_csv(data)

  if frame.empty:
    raise EmptyDataset('Training data has no rows')

  graph = spec.graph
  blocks = blocks_from_frame(graph, frame)
  train, validation = split_rows(len(frame), opts.seed)
  skip = [node_id for node_id in graph.ids if spec.kind(node_id) in UNSCALED_KINDS]
  scaling = Scaling.fit({node_id: values[train] for node_id, values in blocks.items()}, skip)
  scaled = scaling.blocks_to_model(blocks)

  def parents_of(node_id: NodeId, rows: Array) -> Array:
    parents = graph.parents(node_id)

    if not parents:
      return np.zeros((rows.size, 0))

    return np.concatenate([scaled[parent][rows] for parent in parents], axis=-1)

  def fit(node_id: NodeId):
    node = graph[node_id]
    x_pa = parents_of(node_id, train)
    mech = build_mechanism(
      spec.templates[node_id], node.dim, x_pa.shape[-1], scaling.mean[node_id], scaling.std[node_id], opts.seed,
    )
    logging.debug(f'Training {node.label} ({mech!r})')

    return train_flow_mle(mech, x_pa, scaled[node_id][train], opts)

  with ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
    results = dict(zip(graph.ids, executor.map(fit, graph.ids)))

  scm = Scm(graph, {node_id: result.mechanism for node_id, result in results.items()})
  validation_nll: dict[NodeId, float] = {}

  for node_id in graph.ids:
    if not validation.size or spec.kind(node_id) == MechanismKind.predictor:
      validation_nll[node_id] = float('nan')
      continue

    mech = scm.mechanisms[node_id]
    nll = mech.nll(parents_of(node_id, validation), scaled[node_id][validation])
    validation_nll[node_id] = float(np.mean(nll)) + scaling.log_scale(node_id)
    logging.info(f'{NAMES.get(node_id, node_id)}: validation NLL {validation_nll[node_id]:.4f}')

  return TrainingReport(
    model=TrainedModel(scm, scaling),
    nll={node_id: result.nll for node_id, result in results.items()},
    validation_nll=validation_nll,
    iterations={node_id: result.iterations for node_id, result in results.items()},
  )
