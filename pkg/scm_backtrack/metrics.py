from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from typing import NamedTuple, Optional

import numpy as np

from .base import InnerDistance, NodeId
from .errors import DimensionMismatch
from .scm import Scm, StructuredVector
from .scm.model import Values
from .types import Array, ArrayOrFloat, Final


InnerFunc = Callable[[Array], Array]

INNER_DISTANCES: Final[dict[InnerDistance, InnerFunc]] = {
  InnerDistance.SQU: lambda r: np.sum(r ** 2, axis=-1),
  InnerDistance.ABS: lambda r: np.sum(np.abs(r), axis=-1),
}


class MetricReport(NamedTuple):
  plausible: float
  obs: float
  causal: float
  m: InnerDistance = InnerDistance.SQU
  n: int = 1


def _nodes(scm: Scm, attribute_nodes: Optional[Sequence[NodeId]]) -> list[NodeId]:
  nodes = list(scm.ids if attribute_nodes is None else attribute_nodes)

  if not nodes:
    raise DimensionMismatch('Metrics need at least one attribute node')

  for node_id in nodes:
    if node_id not in scm.observed_layout:
      raise DimensionMismatch(f'Unknown attribute node {node_id!r}')

  return nodes


def _mean(values: list[Array]) -> ArrayOrFloat:
  mean = np.mean(np.stack(values), axis=0)
  return float(mean) if np.ndim(mean) == 0 else mean


def plausible(scm: Scm, x_star: Values, attribute_nodes: Optional[Sequence[NodeId]] = None) -> ArrayOrFloat:
  """Mean conditional negative log density of the attribute nodes, in nats."""
  x_star = scm.observed(x_star)

  return _mean([
    scm.node_nll(x_star, node_id)
    for node_id in _nodes(scm, attribute_nodes)
  ])


def obs_distance(
  x: StructuredVector,
  x_star: StructuredVector,
  m: InnerDistance = InnerDistance.SQU,
  attribute_nodes: Optional[Sequence[NodeId]] = None,
  scales: Optional[Mapping[NodeId, Array]] = None,
) -> ArrayOrFloat:
  if x.layout != x_star.layout:
    raise DimensionMismatch(f'Cannot compare {x.layout} with {x_star.layout}')

  nodes = list(x.layout.ids if attribute_nodes is None else attribute_nodes)
  inner = INNER_DISTANCES[InnerDistance(m)]

  return _mean([
    inner((x_star.block(node_id) - x.block(node_id)) / (scales.get(node_id, 1.0) if scales else 1.0))
    for node_id in nodes
  ])


def causal_distance(
  scm: Scm,
  x: Values,
  x_star: Values,
  m: InnerDistance = InnerDistance.SQU,
  attribute_nodes: Optional[Sequence[NodeId]] = None,
) -> ArrayOrFloat:
  """Distance between factual and counterfactual abducted latents of the attributes."""
  u, u_star = scm.abduct(x), scm.abduct(x_star)
  inner = INNER_DISTANCES[InnerDistance(m)]

  return _mean([
    inner(u_star.block(node_id) - u.block(node_id))
    for node_id in _nodes(scm, attribute_nodes)
  ])


def evaluate(
  scm: Scm,
  x: Values,
  x_star: Values,
  m: InnerDistance = InnerDistance.SQU,
  attribute_nodes: Optional[Sequence[NodeId]] = None,
  scales: Optional[Mapping[NodeId, Array]] = None,
) -> MetricReport:
  x, x_star = scm.observed(x), scm.observed(x_star)
  nodes = _nodes(scm, attribute_nodes)

  return MetricReport(
    plausible=plausible(scm, x_star, nodes),
    obs=obs_distance(x, x_star, m, nodes, scales),
    causal=causal_distance(scm, x, x_star, m, nodes),
    m=InnerDistance(m),
    n=len(nodes),
  )
