from __future__ import annotations

from collections.abc import Iterable, Mapping
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from ..base import Blocks, NodeId
from ..errors import DimensionMismatch
from ..types import Array, Mask, Self, as_array


class Layout:
  """Maps node ids to contiguous column slices of a flat vector."""

  def __init__(self, dims: Iterable[tuple[NodeId, int]]):
    self.dims: dict[NodeId, int] = {}
    self.slices: dict[NodeId, slice] = {}
    offset = 0

    for node_id, dim in dims:
      if node_id in self.dims:
        raise DimensionMismatch(f'Duplicate node id {node_id!r} in layout')

      self.dims[node_id] = dim
      self.slices[node_id] = slice(offset, offset + dim)
      offset += dim

    self.size: int = offset

  def __eq__(self, other: object) -> bool:
    return isinstance(other, Layout) and list(self.dims.items()) == list(other.dims.items())

  def __hash__(self) -> int:
    return hash(tuple(self.dims.items()))

  def __repr__(self) -> str:
    return f'Layout({self.dims})'

  def __contains__(self, node_id: NodeId) -> bool:
    return node_id in self.dims

  @property
  def ids(self) -> list[NodeId]:
    return list(self.dims)

  def indices(self, node_ids: Iterable[NodeId]) -> np.ndarray:
    return np.concatenate([
      np.arange(self.size)[self.slices[node_id]]
      for node_id in node_ids
    ] or [np.zeros(0, dtype=int)]).astype(int)

  def mask(self, node_ids: Iterable[NodeId]) -> Mask:
    mask = np.zeros(self.size, dtype=bool)

    for node_id in node_ids:
      mask[self.slices[node_id]] = True

    return mask

  def check(self, values: Array) -> Array:
    if values.ndim == 0 or values.shape[-1] != self.size:
      raise DimensionMismatch(f'Expected trailing dimension {self.size}, got shape {values.shape}')

    return values


class StructuredVector:
  """
  Per-node blocks of a flat real vector.

  `values` may carry leading batch axes; blocks are always taken along
  the last axis.
  """

  __slots__ = ('layout', 'values')

  def __init__(self, layout: Layout, values: ArrayLike):
    self.layout = layout
    self.values: Array = layout.check(as_array(values))

  @classmethod
  def from_blocks(cls: type[Self], layout: Layout, blocks: Mapping[NodeId, ArrayLike]) -> Self:
    missing = set(layout.ids) - set(blocks)

    if missing:
      raise DimensionMismatch(f'Missing blocks for nodes {sorted(missing)}')

    parts = []

    for node_id in layout.ids:
      block = as_array(blocks[node_id])

      if block.ndim == 0:
        block = block.reshape(1)

      if block.shape[-1] != layout.dims[node_id]:
        raise DimensionMismatch(
          f'Block for node {node_id!r} has size {block.shape[-1]}, expected {layout.dims[node_id]}'
        )

      parts.append(block)

    batch = np.broadcast_shapes(*(part.shape[:-1] for part in parts)) if parts else ()
    values = np.concatenate(
      [np.broadcast_to(part, (*batch, part.shape[-1])) for part in parts] or [np.zeros(0)],
      axis=-1,
    )

    return cls(layout, values)

  @classmethod
  def zeros(cls: type[Self], layout: Layout, batch: tuple[int, ...] = ()) -> Self:
    return cls(layout, np.zeros((*batch, layout.size)))

  def __len__(self) -> int:
    return self.layout.size

  def __repr__(self) -> str:
    blocks = ', '.join(
      f'{node_id}={np.array2string(self.block(node_id), precision=4)}'
      for node_id in self.layout.ids
    )
    return f'{type(self).__name__}({blocks})'

  def __getitem__(self, node_id: NodeId) -> Array:
    return self.block(node_id)

  @property
  def batch_shape(self) -> tuple[int, ...]:
    return self.values.shape[:-1]

  def block(self, node_id: NodeId) -> Array:
    return self.values[..., self.layout.slices[node_id]]

  def select(self, node_ids: Iterable[NodeId]) -> Array:
    return self.values[..., self.layout.indices(node_ids)]

  def blocks(self, node_ids: Optional[Iterable[NodeId]] = None) -> Blocks:
    ids = self.layout.ids if node_ids is None else node_ids

    return {node_id: self.block(node_id).copy() for node_id in ids}

  def with_blocks(self, blocks: Mapping[NodeId, ArrayLike]) -> StructuredVector:
    values = self.values.copy()

    for node_id, block in blocks.items():
      values[..., self.layout.slices[node_id]] = as_array(block)

    return StructuredVector(self.layout, values)

  def item(self, index: int) -> StructuredVector:
    return StructuredVector(self.layout, self.values[index])

  def copy(self) -> StructuredVector:
    return StructuredVector(self.layout, self.values.copy())
