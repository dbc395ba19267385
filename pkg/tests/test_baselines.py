from __future__ import annotations

import numpy as np
import pytest

from scm_backtrack.baselines import deep_ce, interventional_cf, split_explanation_scm
from scm_backtrack.errors import InvalidPlan
from scm_backtrack.mechanisms import AffineFlow, PredictorMechanism
from scm_backtrack.metrics import causal_distance
from scm_backtrack.scm import Antecedent, CausalGraph, Node, Scm
from scm_backtrack.solvers import mode_deepbc


def classifier() -> Scm:
  graph = CausalGraph([Node('X', 'input', dim=2), Node('Y', 'score', parents=('X',))])
  return Scm(graph, {
    'X': AffineFlow.constant([0.0, 0.0], [1.0, 1.0]),
    'Y': PredictorMechanism.linear([[1.0, 1.0]], 0.0),
  })


def test_interventional_keeps_ancestors_and_latents(chain3: Scm):
  u = np.array([0.4, -0.2, 1.3])
  x = chain3.reduced_form(u)
  result = interventional_cf(chain3, x, Antecedent.from_blocks({'2': 5.0}))

  assert result.nodes == ('2',)
  np.testing.assert_array_equal(result.u.values, u)
  np.testing.assert_allclose(result.x_star.values, [x.block('1')[0], 5.0, 5.0 + u[2]])


def test_interventional_is_batched(chain3: Scm):
  u = np.random.default_rng(0).normal(size=(8, 3))
  result = interventional_cf(chain3, chain3.reduced_form(u), Antecedent.from_blocks({'1': 1.0}))

  np.testing.assert_allclose(result.x_star.block('2')[:, 0], 2.0 + u[:, 1])


def test_deep_ce():
  lam = 1e3
  v = 2 * lam / (1 + 2 * lam)
  result = deep_ce(classifier(), [0.0, 0.0], 2.0)

  np.testing.assert_allclose(result.u_star.values, [v, v], atol=1e-9)
  assert result.x_star.block('Y')[0] == pytest.approx(2 * v)


def test_deep_ce_accepts_full_vector():
  full = deep_ce(classifier(), [0.5, 0.5, 1.0], -1.0)
  short = deep_ce(classifier(), [0.5, 0.5], -1.0)

  np.testing.assert_allclose(full.u_star.values, short.u_star.values)


def test_deep_ce_needs_two_node_scm(chain3: Scm):
  with pytest.raises(InvalidPlan):
    split_explanation_scm(chain3)

  assert split_explanation_scm(classifier()) == ('X', 'Y')


def test_backtracking_dominates_interventional(chain3: Scm):
  rng = np.random.default_rng(1)

  for _ in range(100):
    u = rng.normal(size=3)
    x = chain3.reduced_form(u)
    antecedent = Antecedent.from_blocks({rng.choice(['2', '3']): rng.normal(0.0, 3.0)})

    mode = mode_deepbc(chain3, x, antecedent)
    intervened = interventional_cf(chain3, x, antecedent).x_star

    assert causal_distance(chain3, x, mode.x_star) <= causal_distance(chain3, x, intervened) + 1e-3
