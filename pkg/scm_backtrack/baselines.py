from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike

from .base import BacktrackingConfig, CounterfactualResult, MechanismKind, NodeId, log_trace
from .errors import InvalidPlan
from .scm import Antecedent, Scm, StructuredVector
from .scm.model import Values
from .solvers import mode_deepbc
from .types import as_array


class InterventionalResult(NamedTuple):
  x_star: StructuredVector
  nodes: tuple[NodeId, ...]
  u: StructuredVector


@log_trace
def interventional_cf(scm: Scm, x: Values, antecedent: Antecedent) -> InterventionalResult:
  """Abduct, replace the antecedent assignments by constants, then predict."""
  antecedent = antecedent.validate(scm.observed_layout)
  u = scm.abduct(x)
  layout = scm.observed_layout
  x_star = np.zeros((*u.batch_shape, layout.size))

  for node_id in scm.order:
    if node_id in antecedent.values:
      x_star[..., layout.slices[node_id]] = antecedent.values[node_id]
      continue

    x_pa = scm.parent_values(x_star, node_id)
    x_star[..., layout.slices[node_id]] = scm.mechanisms[node_id].forward(x_pa, u.block(node_id))

  return InterventionalResult(StructuredVector(layout, x_star), tuple(antecedent.nodes), u)


def split_explanation_scm(scm: Scm) -> tuple[NodeId, NodeId]:
  """Return (input node, predictor node) of a two-node explanation SCM."""
  predictors = [
    node_id
    for node_id, mech in scm.mechanisms.items()
    if mech.KIND == MechanismKind.predictor
  ]

  if len(scm.graph) != 2 or len(predictors) != 1:
    raise InvalidPlan('Counterfactual explanations need an SCM with one input node and one predictor node')

  predictor = predictors[0]
  (source,) = [node_id for node_id in scm.ids if node_id != predictor]

  if scm.graph.parents(predictor) != (source,):
    raise InvalidPlan(f'Predictor {predictor!r} must depend on exactly the input node {source!r}')

  return source, predictor


@log_trace
def deep_ce(
  two_node_scm: Scm,
  x: ArrayLike,
  y_star: ArrayLike,
  config: BacktrackingConfig = BacktrackingConfig(),
) -> CounterfactualResult:
  """
  Counterfactual explanation as a backtracking query: move the input as little
  as possible in its latent space so that the predictor outputs `y_star`.

  `x` is either the full (input, prediction) vector or the input block alone.
  """
  source, predictor = split_explanation_scm(two_node_scm)
  layout = two_node_scm.observed_layout
  x = as_array(x)

  if x.shape[-1] == layout.dims[source]:
    mech = two_node_scm.mechanisms[predictor]
    y = mech.forward(x, np.zeros((*x.shape[:-1], 0)))
    x = StructuredVector.from_blocks(layout, {source: x, predictor: y})

  antecedent = Antecedent.from_blocks({predictor: y_star})

  return mode_deepbc(two_node_scm, x, antecedent, config)
