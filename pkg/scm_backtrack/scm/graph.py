from __future__ import annotations

import heapq
import logging
from collections.abc import Iterable, Sequence
from functools import cached_property
from typing import NamedTuple, Optional

from ..base import NodeId
from ..errors import CyclicGraph, DimensionMismatch
from ..types import Self


class Node(NamedTuple):
  id: NodeId
  name: str = ''
  dim: int = 1
  parents: tuple[NodeId, ...] = ()

  @property
  def label(self) -> str:
    return self.name or self.id


def node_key(node_id: NodeId) -> tuple[int, int, str]:
  # numeric ids sort numerically, everything else lexically after them
  if node_id.isdigit():
    return 0, int(node_id), node_id

  return 1, 0, node_id


class CausalGraph:
  """
  Directed acyclic graph over named, possibly multi-dimensional nodes.

  Node order is the declaration order; it fixes the block layout of every
  StructuredVector built on this graph.
  """

  def __init__(self, nodes: Iterable[Node]):
    self.nodes: tuple[Node, ...] = tuple(
      node._replace(id=str(node.id), parents=tuple(str(p) for p in node.parents))
      for node in nodes
    )
    self._by_id: dict[NodeId, Node] = {}

    for node in self.nodes:
      if node.id in self._by_id:
        raise DimensionMismatch(f'Duplicate node id {node.id!r}')

      if node.dim < 1:
        raise DimensionMismatch(f'Node {node.id!r} has dimension {node.dim} < 1')

      self._by_id[node.id] = node

    for node in self.nodes:
      for parent in node.parents:
        if parent not in self._by_id:
          raise DimensionMismatch(f'Node {node.id!r} has unknown parent {parent!r}')

  @classmethod
  def from_edges(
    cls: type[Self],
    edges: Iterable[tuple[NodeId, NodeId]],
    dims: Optional[dict[NodeId, int]] = None,
  ) -> Self:
    dims = {str(k): v for k, v in (dims or {}).items()}
    parents: dict[NodeId, list[NodeId]] = {node: [] for node in dims}

    for parent, child in edges:
      parent, child = str(parent), str(child)
      parents.setdefault(parent, [])
      parents.setdefault(child, []).append(parent)

    return cls(
      Node(id=node, name=node, dim=dims.get(node, 1), parents=tuple(pa))
      for node, pa in parents.items()
    )

  def __len__(self) -> int:
    return len(self.nodes)

  def __contains__(self, node_id: NodeId) -> bool:
    return node_id in self._by_id

  def __getitem__(self, node_id: NodeId) -> Node:
    return self._by_id[node_id]

  def __repr__(self) -> str:
    edges = ', '.join(
      f'{parent}->{node.id}'
      for node in self.nodes
      for parent in node.parents
    )
    return f'{type(self).__name__}({edges or ",".join(self.ids)})'

  @property
  def ids(self) -> list[NodeId]:
    return [node.id for node in self.nodes]

  def parents(self, node_id: NodeId) -> tuple[NodeId, ...]:
    return self._by_id[node_id].parents

  def children(self, node_id: NodeId) -> list[NodeId]:
    return [
      node.id
      for node in self.nodes
      if node_id in node.parents
    ]

  def roots(self) -> list[NodeId]:
    return [node.id for node in self.nodes if not node.parents]

  def ancestors(self, node_ids: Iterable[NodeId]) -> set[NodeId]:
    found: set[NodeId] = set()
    stack = list(node_ids)

    while stack:
      for parent in self.parents(stack.pop()):
        if parent not in found:
          found.add(parent)
          stack.append(parent)

    return found

  def descendants(self, node_ids: Iterable[NodeId]) -> set[NodeId]:
    found: set[NodeId] = set()
    stack = list(node_ids)

    while stack:
      for child in self.children(stack.pop()):
        if child not in found:
          found.add(child)
          stack.append(child)

    return found

  def reversed_edge(self, source: NodeId, target: NodeId) -> CausalGraph:
    source, target = str(source), str(target)

    if source not in self[target].parents:
      raise DimensionMismatch(f'No edge {source}->{target} to reverse')

    nodes = []

    for node in self.nodes:
      parents = node.parents

      if node.id == target:
        parents = tuple(p for p in parents if p != source)

      elif node.id == source:
        parents = (*parents, target)

      nodes.append(node._replace(parents=parents))

    graph = CausalGraph(nodes)
    topological_order(graph)

    return graph

  @cached_property
  def order(self) -> tuple[NodeId, ...]:
    return tuple(topological_order(self))


def topological_order(graph: CausalGraph) -> list[NodeId]:
  indegree: dict[NodeId, int] = {node.id: len(set(node.parents)) for node in graph.nodes}
  children: dict[NodeId, list[NodeId]] = {node.id: [] for node in graph.nodes}

  for node in graph.nodes:
    for parent in set(node.parents):
      children[parent].append(node.id)

  ready = [
    (node_key(node_id), node_id)
    for node_id, degree in indegree.items()
    if not degree
  ]
  heapq.heapify(ready)
  ordering: list[NodeId] = []

  while ready:
    _, node_id = heapq.heappop(ready)
    ordering.append(node_id)

    for child in children[node_id]:
      indegree[child] -= 1

      if not indegree[child]:
        heapq.heappush(ready, (node_key(child), child))

  if len(ordering) != len(graph.nodes):
    stuck = sorted(set(indegree) - set(ordering), key=node_key)
    raise CyclicGraph(f'Graph has a cycle through nodes {stuck}')

  logging.debug(f'Topological order: {ordering}')

  return ordering


def validate_order(graph: CausalGraph, ordering: Sequence[NodeId]) -> bool:
  position = {node_id: index for index, node_id in enumerate(ordering)}

  return len(position) == len(graph) and all(
    position[parent] < position[node.id]
    for node in graph.nodes
    for parent in node.parents
  )
