from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any, NamedTuple, Optional

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from ..base import Blocks, NodeId, Paths
from ..errors import DimensionMismatch, InvalidPlan, IoFailure
from ..scm import \
  Antecedent, CausalGraph, Scm, StructuredVector, get_column_name, \
  read_document, save_scm, scm_from_dict
from ..types import Array, Self, as_array


SCALING_KEY: str = 'scaling'


def node_columns(graph: CausalGraph, node_id: NodeId, prefix: str = '') -> list[str]:
  node = graph[node_id]
  return [get_column_name(node.label, k, prefix) for k in range(node.dim)]


def frame_columns(graph: CausalGraph, prefix: str = '') -> list[str]:
  return [
    column
    for node_id in graph.ids
    for column in node_columns(graph, node_id, prefix)
  ]


def frame_from_blocks(graph: CausalGraph, blocks: Mapping[NodeId, ArrayLike], prefix: str = '') -> pd.DataFrame:
  data: dict[str, Array] = {}

  for node_id in graph.ids:
    values = as_array(blocks[node_id]).reshape(-1, graph[node_id].dim)

    for column, series in zip(node_columns(graph, node_id, prefix), values.T):
      data[column] = series

  return pd.DataFrame(data)


def blocks_from_frame(graph: CausalGraph, frame: pd.DataFrame, prefix: str = '') -> Blocks:
  blocks: Blocks = {}

  for node_id in graph.ids:
    columns = node_columns(graph, node_id, prefix)
    missing = [column for column in columns if column not in frame.columns]

    if missing:
      raise DimensionMismatch(f'Dataset is missing columns {missing} for node {node_id!r}')

    blocks[node_id] = frame[columns].to_numpy(dtype=np.float64)

  return blocks


def write_csv(frame: pd.DataFrame, path: Paths):
  try:
    frame.to_csv(path, index=False, float_format='%.17g')

  except OSError as e:
    raise IoFailure(f'Could not write {path}: {e}') from e

  logging.info(f'Wrote {len(frame)} rows to {path}')


def read_csv(path: Paths) -> pd.DataFrame:
  if not Path(path).is_file():
    raise IoFailure(f'No data file at {path}')

  try:
    return pd.read_csv(path)

  except (OSError, ValueError) as e:
    raise IoFailure(f'Could not read {path}: {e}') from e


class Scaling(NamedTuple):
  """Per-node affine map between raw units and the standardized model units."""

  mean: dict[NodeId, Array]
  std: dict[NodeId, Array]

  @classmethod
  def identity(cls: type[Self], dims: Mapping[NodeId, int]) -> Self:
    return cls(
      {node_id: np.zeros(dim) for node_id, dim in dims.items()},
      {node_id: np.ones(dim) for node_id, dim in dims.items()},
    )

  @classmethod
  def fit(cls: type[Self], blocks: Mapping[NodeId, Array], skip: Iterable[NodeId] = ()) -> Self:
    skip = set(skip)
    mean: dict[NodeId, Array] = {}
    std: dict[NodeId, Array] = {}

    for node_id, values in blocks.items():
      if node_id in skip:
        mean[node_id], std[node_id] = np.zeros(values.shape[-1]), np.ones(values.shape[-1])
        continue

      mean[node_id] = values.mean(axis=0)
      std[node_id] = values.std(axis=0)

      if np.any(std[node_id] <= 0):
        raise DimensionMismatch(f'Node {node_id!r} is constant in the training data')

    return cls(mean, std)

  @classmethod
  def from_dict(cls: type[Self], data: Mapping[str, Any]) -> Self:
    return cls(
      {node_id: as_array(values) for node_id, values in data['mean'].items()},
      {node_id: as_array(values) for node_id, values in data['std'].items()},
    )

  def to_dict(self) -> dict[str, Any]:
    return {
      'mean': {node_id: values.tolist() for node_id, values in self.mean.items()},
      'std': {node_id: values.tolist() for node_id, values in self.std.items()},
    }

  def moments(self, node_id: NodeId) -> tuple[Array, Array]:
    if node_id not in self.mean:
      raise DimensionMismatch(f'Unknown node {node_id!r}, the model has {sorted(self.mean)}')

    return self.mean[node_id], self.std[node_id]

  def value_to_model(self, node_id: NodeId, value: ArrayLike) -> Array:
    mean, std = self.moments(node_id)
    return (as_array(value) - mean) / std

  def value_to_raw(self, node_id: NodeId, value: ArrayLike) -> Array:
    mean, std = self.moments(node_id)
    return as_array(value) * std + mean

  def blocks_to_model(self, blocks: Mapping[NodeId, ArrayLike]) -> Blocks:
    return {node_id: self.value_to_model(node_id, value) for node_id, value in blocks.items()}

  def blocks_to_raw(self, blocks: Mapping[NodeId, ArrayLike]) -> Blocks:
    return {node_id: self.value_to_raw(node_id, value) for node_id, value in blocks.items()}

  def to_model(self, x: StructuredVector) -> StructuredVector:
    return StructuredVector.from_blocks(x.layout, self.blocks_to_model(x.blocks()))

  def to_raw(self, x: StructuredVector) -> StructuredVector:
    return StructuredVector.from_blocks(x.layout, self.blocks_to_raw(x.blocks()))

  def antecedent_to_model(self, antecedent: Antecedent) -> Antecedent:
    return Antecedent(self.blocks_to_model(antecedent.values))

  def log_scale(self, node_id: NodeId) -> float:
    """Add to a model-unit NLL of `node_id` to get the raw-unit NLL."""
    return float(np.sum(np.log(self.std[node_id])))


class TrainedModel(NamedTuple):
  scm: Scm
  scaling: Scaling

  @property
  def graph(self) -> CausalGraph:
    return self.scm.graph

  def factual_from_raw(self, blocks: Mapping[NodeId, ArrayLike]) -> StructuredVector:
    return StructuredVector.from_blocks(self.scm.observed_layout, self.scaling.blocks_to_model(blocks))

  def raw_blocks(self, x: StructuredVector) -> Blocks:
    return self.scaling.blocks_to_raw(x.blocks())


def save_model(model: TrainedModel, path: Paths):
  save_scm(model.scm, path, {SCALING_KEY: model.scaling.to_dict()})


def load_model(path: Paths) -> TrainedModel:
  data = read_document(path)
  scm = scm_from_dict(data)

  if SCALING_KEY in data:
    scaling = Scaling.from_dict(data[SCALING_KEY])

  else:
    scaling = Scaling.identity(scm.observed_layout.dims)

  logging.debug(f'Loaded model {scm} from {path}')

  return TrainedModel(scm, scaling)


def parse_factual(text: Optional[str]) -> Optional[Blocks]:
  """Raw factual blocks from a JSON object of node id to value(s)."""
  if not text:
    return None

  try:
    data = json.loads(text)

  except json.JSONDecodeError as e:
    raise InvalidPlan(f'Factual values are not valid JSON: {e}') from e

  if not isinstance(data, Mapping):
    raise InvalidPlan(f'Factual values must be a JSON object of node id to value, got {type(data).__name__}')

  return {
    str(node_id): np.atleast_1d(as_array(value))
    for node_id, value in data.items()
  }
