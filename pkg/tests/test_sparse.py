from __future__ import annotations

import numpy as np
import pytest

from scm_backtrack.base import BacktrackingConfig
from scm_backtrack.errors import InfeasibleSparsity, InvalidPlan
from scm_backtrack.scm import Antecedent, Scm
from scm_backtrack.solvers import mode_deepbc, sparse_deepbc

from conftest import random_affine_scm


U: np.ndarray = np.array([0.4, -0.2, 1.3])


def shifted(scm: Scm, node: str, shift: float) -> Antecedent:
  return Antecedent.from_blocks({node: scm.reduced_form(U).block(node) + shift})


def test_single_block_matches_exhaustive_oracle(chain3: Scm):
  x = chain3.reduced_form(U)
  antecedent = shifted(chain3, '3', 2.0)
  result = sparse_deepbc(chain3, x, antecedent, 1)

  restricted = {
    node: mode_deepbc(chain3, x, antecedent, frozen=[other for other in chain3.ids if other != node])
    for node in chain3.ids
  }
  best = min(restricted, key=lambda node: restricted[node].energy_final)

  assert best == '1'
  assert result.changed.tolist() == [True, False, False]
  np.testing.assert_array_equal(result.u_star.values[1:], U[1:])
  np.testing.assert_allclose(result.u_star.values, restricted[best].u_star.values, atol=1e-12)


def test_unrestricted_bound_equals_mode(chain3: Scm):
  x = chain3.reduced_form(U)
  antecedent = shifted(chain3, '3', 2.0)

  np.testing.assert_allclose(
    sparse_deepbc(chain3, x, antecedent, 3).u_star.values,
    mode_deepbc(chain3, x, antecedent).u_star.values,
    atol=1e-6,
  )


def test_changed_blocks_bounded():
  rng = np.random.default_rng(7)

  for _ in range(10):
    scm = random_affine_scm(rng, 6)
    u = rng.normal(size=6)
    x = scm.reduced_form(u)
    antecedent = Antecedent.from_blocks({'6': x.block('6') + rng.normal()})

    for M in (1, 2, 4):
      assert sparse_deepbc(scm, x, antecedent, M).changed_count <= M


def test_downstream_only_is_infeasible(chain3: Scm):
  with pytest.raises(InfeasibleSparsity) as info:
    sparse_deepbc(chain3, chain3.reduced_form(U), shifted(chain3, '2', 2.0), 1, selectable=['3'])

  assert info.value.residual > 10 * info.value.reference


def test_selectable_restricts_choice(chain3: Scm):
  result = sparse_deepbc(chain3, chain3.reduced_form(U), shifted(chain3, '3', 2.0), 1, selectable=['2', '3'])

  assert result.changed.tolist() == [False, True, False]
  assert result.residual < 1e-4


def test_ties_go_to_earlier_node(chain: Scm):
  # both latents move by the same amount
  result = sparse_deepbc(chain, [0.0, 0.0], Antecedent.from_blocks({'2': 2.0}), 1)

  assert result.changed.tolist() == [True, False]


def test_bound_from_config(chain3: Scm):
  x = chain3.reduced_form(U)
  antecedent = shifted(chain3, '3', 2.0)

  assert sparse_deepbc(chain3, x, antecedent, config=BacktrackingConfig(sparsity=1)).changed_count == 1

  for M in (None, 0):
    with pytest.raises(InvalidPlan):
      sparse_deepbc(chain3, x, antecedent, M)
