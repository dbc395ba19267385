from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from functools import cached_property
from typing import NamedTuple, Union

import numpy as np
from numpy.typing import ArrayLike

from ..base import PROBE_POINTS, PROBE_SEED, ROUND_TRIP_TOL, Blocks, NodeId
from ..errors import BacktrackError, DimensionMismatch, InvalidPlan
from ..mechanisms import Mechanism
from ..types import Array, Self, as_array
from .graph import CausalGraph
from .vector import Layout, StructuredVector


Values = Union[StructuredVector, ArrayLike]

ASSIGN: str = '='
SEPARATOR: str = ','
COMPONENT_SEPARATOR: str = ';'


class Antecedent(NamedTuple):
  values: dict[NodeId, Array]

  @classmethod
  def from_blocks(cls: type[Self], blocks: Mapping[NodeId, ArrayLike]) -> Self:
    if not blocks:
      raise InvalidPlan('Antecedent must name at least one node')

    return cls({
      str(node_id): np.atleast_1d(as_array(value))
      for node_id, value in blocks.items()
    })

  @classmethod
  def parse(cls: type[Self], text: str) -> Self:
    """Parse `NODE=VALUE[,NODE=VALUE]`; vector values separate components with `;`."""
    blocks: dict[NodeId, Array] = {}

    for item in filter(None, (part.strip() for part in text.split(SEPARATOR))):
      node_id, sep, value = item.partition(ASSIGN)
      node_id = node_id.strip()

      if not sep or not node_id:
        raise InvalidPlan(f'Antecedent item {item!r} is not of the form NODE=VALUE')

      if node_id in blocks:
        raise InvalidPlan(f'Antecedent names node {node_id!r} more than once')

      try:
        blocks[node_id] = as_array([float(v) for v in value.split(COMPONENT_SEPARATOR)])

      except ValueError as e:
        raise InvalidPlan(f'Antecedent value {value!r} for node {node_id!r} is not numeric') from e

    return cls.from_blocks(blocks)

  def __str__(self) -> str:
    return SEPARATOR.join(
      f'{node_id}{ASSIGN}{COMPONENT_SEPARATOR.join(f"{v:g}" for v in value)}'
      for node_id, value in self.values.items()
    )

  @property
  def nodes(self) -> list[NodeId]:
    return list(self.values)

  @property
  def target(self) -> Array:
    return np.concatenate([self.values[node_id] for node_id in self.nodes])

  def validate(self, layout: Layout) -> Self:
    if not self.values:
      raise InvalidPlan('Antecedent must name at least one node')

    for node_id, value in self.values.items():
      if node_id not in layout:
        raise DimensionMismatch(f'Antecedent node {node_id!r} is not in the model')

      if value.shape != (layout.dims[node_id],):
        raise DimensionMismatch(
          f'Antecedent value for {node_id!r} has shape {value.shape}, expected ({layout.dims[node_id]},)'
        )

    return self


class Scm:
  """
  Causal graph plus one mechanism per node.

  Observables and latents use separate layouts: a node's latent block may be
  narrower than its observed block (categorical) or empty (predictor).
  """

  def __init__(self, graph: CausalGraph, mechanisms: Mapping[NodeId, Mechanism], strict: bool = True):
    mechanisms = {str(node_id): mech for node_id, mech in mechanisms.items()}
    missing = set(graph.ids) - set(mechanisms)
    extra = set(mechanisms) - set(graph.ids)

    if missing or extra:
      raise DimensionMismatch(
        f'Need exactly one mechanism per node; missing {sorted(missing)}, unexpected {sorted(extra)}'
      )

    self.graph = graph
    self.mechanisms: dict[NodeId, Mechanism] = {node_id: mechanisms[node_id] for node_id in graph.ids}
    self.observed_layout = Layout((node.id, node.dim) for node in graph.nodes)
    self.latent_layout = Layout((node.id, self.mechanisms[node.id].latent_dim) for node in graph.nodes)

    if strict:
      mismatches = signature_mismatches(self)

      if mismatches:
        raise DimensionMismatch('; '.join(mismatches))

      logging.debug(f'Built SCM over {graph} with order {self.order}')

  def __repr__(self) -> str:
    return f'{type(self).__name__}({self.graph!r})'

  def __getitem__(self, node_id: NodeId) -> Mechanism:
    return self.mechanisms[node_id]

  @cached_property
  def order(self) -> tuple[NodeId, ...]:
    return self.graph.order

  @property
  def ids(self) -> list[NodeId]:
    return self.graph.ids

  def observed(self, values: Values) -> StructuredVector:
    return _as_vector(self.observed_layout, values)

  def latent(self, values: Values) -> StructuredVector:
    return _as_vector(self.latent_layout, values)

  def parent_values(self, x: Array, node_id: NodeId) -> Array:
    parents = self.graph.parents(node_id)

    if not parents:
      return np.zeros((*x.shape[:-1], 0))

    return x[..., self.observed_layout.indices(parents)]

  def reduced_form(self, u: Values) -> StructuredVector:
    u = self.latent(u)
    x = np.zeros((*u.batch_shape, self.observed_layout.size))

    for node_id in self.order:
      x_pa = self.parent_values(x, node_id)
      x[..., self.observed_layout.slices[node_id]] = self.mechanisms[node_id].forward(x_pa, u.block(node_id))

    return StructuredVector(self.observed_layout, x)

  def reduced_form_selected(self, u: Values, nodes: Iterable[NodeId]) -> Array:
    return self.reduced_form(u).select(nodes)

  def abduct(self, x: Values) -> StructuredVector:
    x = self.observed(x)
    blocks: Blocks = {}

    for node_id in self.order:
      x_pa = self.parent_values(x.values, node_id)
      blocks[node_id] = self.mechanisms[node_id].inverse(x_pa, x.block(node_id))

    return StructuredVector.from_blocks(self.latent_layout, blocks)

  def linearize(self, u: Values, nodes: Sequence[NodeId]) -> tuple[StructuredVector, Array]:
    """Reduced form at `u` and d x_S / d u, shape (..., dim(x_S), dim(u))."""
    u = self.latent(u)
    batch = u.batch_shape
    x = np.zeros((*batch, self.observed_layout.size))
    derivs: dict[NodeId, Array] = {}

    for node_id in self.order:
      mech = self.mechanisms[node_id]
      x_pa = self.parent_values(x, node_id)
      u_i = u.block(node_id)
      x[..., self.observed_layout.slices[node_id]] = mech.forward(x_pa, u_i)

      deriv = np.zeros((*batch, mech.dim, self.latent_layout.size))
      deriv[..., self.latent_layout.slices[node_id]] = mech.d_latent(x_pa, u_i)

      if self.graph.parents(node_id):
        d_parents = mech.d_parents(x_pa, u_i)
        offset = 0

        for parent in self.graph.parents(node_id):
          width = self.observed_layout.dims[parent]
          deriv += d_parents[..., offset:offset + width] @ derivs[parent]
          offset += width

      derivs[node_id] = deriv

    jac = np.concatenate([derivs[node_id] for node_id in nodes], axis=-2)

    return StructuredVector(self.observed_layout, x), jac

  def jacobian_selected(self, u: Values, nodes: Sequence[NodeId]) -> Array:
    for node_id in nodes:
      if node_id not in self.observed_layout:
        raise DimensionMismatch(f'Unknown node {node_id!r}')

    _, jac = self.linearize(u, nodes)
    return jac

  def node_nll(self, x: Values, node_id: NodeId) -> Array:
    x = self.observed(x)
    x_pa = self.parent_values(x.values, node_id)

    return self.mechanisms[node_id].nll(x_pa, x.block(node_id))

  def sample(self, n: int, rng: np.random.Generator) -> tuple[StructuredVector, StructuredVector]:
    u = StructuredVector(self.latent_layout, rng.standard_normal((n, self.latent_layout.size)))
    return u, self.reduced_form(u)


class ScmCheck(NamedTuple):
  name: str
  passed: bool
  detail: str = ''


class ValidationReport(NamedTuple):
  checks: tuple[ScmCheck, ...]

  @property
  def passed(self) -> bool:
    return all(check.passed for check in self.checks)

  @property
  def failures(self) -> list[ScmCheck]:
    return [check for check in self.checks if not check.passed]

  def __getitem__(self, name: str) -> ScmCheck:
    for check in self.checks:
      if check.name == name:
        return check

    raise KeyError(name)


def _as_vector(layout: Layout, values: Values) -> StructuredVector:
  if isinstance(values, StructuredVector):
    if values.layout != layout:
      raise DimensionMismatch(f'Vector layout {values.layout} does not match {layout}')

    return values

  return StructuredVector(layout, values)


def signature_mismatches(scm: Scm) -> list[str]:
  mismatches: list[str] = []

  for node in scm.graph.nodes:
    mech = scm.mechanisms[node.id]
    parent_dim = sum(scm.graph[parent].dim for parent in node.parents)

    if mech.dim != node.dim:
      mismatches.append(f'node {node.id!r}: mechanism output {mech.dim}, node dimension {node.dim}')

    if mech.parent_dim != parent_dim:
      mismatches.append(f'node {node.id!r}: mechanism expects {mech.parent_dim} parent values, graph gives {parent_dim}')

  return mismatches


def validate_scm(scm: Scm, probes: int = PROBE_POINTS, seed: int = PROBE_SEED) -> ValidationReport:
  checks: list[ScmCheck] = []

  try:
    scm.graph.order
    checks.append(ScmCheck('acyclic', True))

  except BacktrackError as e:
    checks.append(ScmCheck('acyclic', False, str(e)))

  mismatches = signature_mismatches(scm)
  checks.append(ScmCheck('signature', not mismatches, '; '.join(mismatches)))

  if not all(check.passed for check in checks):
    checks.append(ScmCheck('round-trip', False, 'skipped, structural checks failed'))
    return ValidationReport(tuple(checks))

  rng = np.random.default_rng(seed)
  u = StructuredVector(scm.latent_layout, rng.standard_normal((probes, scm.latent_layout.size)))

  try:
    error = float(np.max(np.abs(scm.abduct(scm.reduced_form(u)).values - u.values), initial=0.0))
    checks.append(ScmCheck('round-trip', error < ROUND_TRIP_TOL, f'max error {error:.3e}'))

  except (BacktrackError, ArithmeticError, ValueError) as e:
    checks.append(ScmCheck('round-trip', False, str(e)))

  report = ValidationReport(tuple(checks))

  for check in report.failures:
    logging.warning(f'SCM check {check.name} failed: {check.detail}')

  return report
