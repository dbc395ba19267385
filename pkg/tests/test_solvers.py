from __future__ import annotations

import numpy as np
import pytest

from scm_backtrack.base import \
  OSCILLATION_PATIENCE, RETRY_DAMPING, BacktrackingConfig, DistanceKind, MechanismKind, ModeRoute, SolveForm
from scm_backtrack.errors import InvalidPlan, NonFinite, OscillationDetected
from scm_backtrack.mechanisms import AffineFlow, Mechanism, SigmoidFlow
from scm_backtrack.scm import Antecedent, CausalGraph, Node, Scm
from scm_backtrack.solvers import \
  energy, energy_grad, linearized_update, mode_deepbc, mode_deepbc_first_order, pinv_solve

from conftest import random_affine_scm


def sigmoid_pair() -> Scm:
  graph = CausalGraph([Node('T'), Node('I', parents=('T',))])
  return Scm(graph, {
    'T': AffineFlow.constant(2.5, 0.6),
    'I': SigmoidFlow.from_constants(3.0, 0.5, 2.0, -5.0, -1.0),
  })


def test_affine_chain_converges_in_one_iteration(chain: Scm):
  lam = 1e3
  v = 2 * lam / (1 + 2 * lam)
  result = mode_deepbc(chain, [0.0, 0.0], Antecedent.from_blocks({'2': 2.0}), BacktrackingConfig(lam=lam))

  np.testing.assert_allclose(result.u_star.values, [v, v], atol=1e-9)
  np.testing.assert_allclose(result.x_star.values, chain.reduced_form(result.u_star).values, atol=1e-10)
  assert result.iterations == 1
  assert result.residual == pytest.approx((2.0 - 2 * v) ** 2)
  assert result.energy_trace[-1] == pytest.approx(result.energy_trace[1], abs=1e-12)


def test_linearized_update_example(chain: Scm):
  lam = 1e3
  v = 2 * lam / (1 + 2 * lam)
  u_hat = linearized_update([0.0, 0.0], [0.0, 0.0], Antecedent.from_blocks({'2': 2.0}), chain, lam=lam)

  np.testing.assert_allclose(u_hat.values, [v, v], atol=1e-12)


def test_linearized_update_fixed_point():
  scm = sigmoid_pair()
  u = np.array([0.3, -0.7])
  x = scm.reduced_form(u)
  antecedent = Antecedent.from_blocks({'I': x.block('I')})

  np.testing.assert_allclose(linearized_update(u, u, antecedent, scm).values, u, atol=1e-12)


def test_large_penalty_matches_lagrange_solution():
  rng = np.random.default_rng(0)

  for _ in range(20):
    scm = random_affine_scm(rng, 5)
    u = rng.normal(size=5)
    x = scm.reduced_form(u)
    antecedent = Antecedent.from_blocks({'4': x.block('4') + rng.normal(), '5': x.block('5') + rng.normal()})

    jac = scm.jacobian_selected(u, antecedent.nodes)
    gap = antecedent.target - x.select(antecedent.nodes)
    expected = u + jac.T @ np.linalg.solve(jac @ jac.T, gap)

    result = mode_deepbc(scm, x, antecedent, BacktrackingConfig(lam=1e9))

    np.testing.assert_allclose(result.u_star.values, expected, atol=1e-6)


def test_downstream_latent_untouched(chain3: Scm):
  u = np.array([0.4, -0.2, 1.3])
  result = mode_deepbc(chain3, chain3.reduced_form(u), Antecedent.from_blocks({'2': 3.0}))

  assert result.u_star.block('3')[0] == u[2]
  assert result.changed.tolist() == [True, True, False]


def test_primal_and_dual_agree():
  scm = sigmoid_pair()
  x = scm.reduced_form([0.0, 0.0])
  antecedent = Antecedent.from_blocks({'I': 1.2})

  dual = mode_deepbc(scm, x, antecedent, BacktrackingConfig(form=SolveForm.dual))
  primal = mode_deepbc(scm, x, antecedent, BacktrackingConfig(form=SolveForm.primal))

  np.testing.assert_allclose(primal.u_star.values, dual.u_star.values, atol=1e-7)
  assert dual.residual < 1e-4
  assert dual.iterations <= 10


def test_first_order_matches_linearized(chain: Scm):
  antecedent = Antecedent.from_blocks({'2': 2.0})
  config = BacktrackingConfig(lam=100.0, step=1e-3, iterations=10000)
  closed = mode_deepbc(chain, [0.0, 0.0], antecedent, config)
  descent = mode_deepbc_first_order(chain, [0.0, 0.0], antecedent, config)

  np.testing.assert_allclose(descent.u_star.values, closed.u_star.values, atol=1e-3)
  assert np.all(np.diff(descent.energy_trace) <= 1e-12)


def test_first_order_diverges_with_large_step(chain: Scm):
  with pytest.raises(NonFinite):
    mode_deepbc_first_order(chain, [0.0, 0.0], Antecedent.from_blocks({'2': 2.0}), BacktrackingConfig(step=1e3, iterations=100))


@pytest.mark.parametrize('route, step', [
  (ModeRoute.reweighted, 1e-3),
  (ModeRoute.linearized, 1e-4),
])
def test_huber_distance(chain: Scm, route: ModeRoute, step: float):
  lam = 1e3
  config = BacktrackingConfig(
    lam=lam, route=route, step=step, iterations=10000,
    distances={'1': DistanceKind.absolute_smooth, '2': DistanceKind.absolute_smooth},
  )
  result = mode_deepbc(chain, [0.0, 0.0], Antecedent.from_blocks({'2': 2.0}), config)
  # both latents sit in the linear part of the Huber loss at the optimum
  v = 1.0 - 0.05 / lam

  np.testing.assert_allclose(result.u_star.values, [v, v], atol=1e-6)


def test_non_quadratic_routes_to_first_order(chain: Scm):
  antecedent = Antecedent.from_blocks({'2': 2.0})
  config = BacktrackingConfig(step=1e-4, distances={'1': 'absolute-smooth'})

  routed = mode_deepbc(chain, [0.0, 0.0], antecedent, config)
  direct = mode_deepbc_first_order(chain, [0.0, 0.0], antecedent, config)

  np.testing.assert_array_equal(routed.u_star.values, direct.u_star.values)


def test_frozen_blocks(chain3: Scm):
  u = np.array([0.4, -0.2, 1.3])
  result = mode_deepbc(chain3, chain3.reduced_form(u), Antecedent.from_blocks({'3': 5.0}), frozen=['1'])

  assert result.u_star.block('1')[0] == u[0]
  assert result.residual < 1e-4
  assert result.changed.tolist() == [False, True, True]


def test_pinv_solve_singular():
  matrix = np.array([[1.0, 1.0], [1.0, 1.0]])
  rhs = np.array([2.0, 2.0])

  np.testing.assert_allclose(pinv_solve(matrix, rhs), np.linalg.pinv(matrix) @ rhs)
  np.testing.assert_allclose(pinv_solve(matrix, rhs), [1.0, 1.0])
  assert pinv_solve(np.zeros((0, 0)), np.zeros(0)).shape == (0,)


def test_energy_grad_matches_finite_differences():
  scm = sigmoid_pair()
  antecedent = Antecedent.from_blocks({'I': 1.2})
  config = BacktrackingConfig(lam=10.0, weights={'T': 0.5})
  u, u_prime = np.array([0.1, 0.2]), np.array([0.6, -0.4])
  eps = 1e-6

  value, grad = energy_grad(u_prime, u, antecedent, scm, config)
  numeric = [
    (energy(u_prime + eps * e, u, antecedent, scm, config) - energy(u_prime - eps * e, u, antecedent, scm, config)) / (2 * eps)
    for e in np.eye(2)
  ]

  assert value == pytest.approx(energy(u_prime, u, antecedent, scm, config))
  np.testing.assert_allclose(grad, numeric, atol=1e-5)


def test_energy_is_batched():
  scm = sigmoid_pair()
  antecedent = Antecedent.from_blocks({'I': 1.2})
  u_prime = np.random.default_rng(1).normal(size=(6, 2))
  batched = energy(u_prime, np.zeros(2), antecedent, scm)

  np.testing.assert_allclose(batched, [energy(row, np.zeros(2), antecedent, scm) for row in u_prime])


@pytest.mark.parametrize('config', [
  BacktrackingConfig(lam=0.0),
  BacktrackingConfig(iterations=0),
  BacktrackingConfig(damping=-1.0),
  BacktrackingConfig(weights={'1': 0.0}),
  BacktrackingConfig(step=0.0, route=ModeRoute.first_order),
  BacktrackingConfig(step=0.0, distances={'1': DistanceKind.absolute_smooth}),
])
def test_invalid_config(chain: Scm, config: BacktrackingConfig):
  with pytest.raises(InvalidPlan):
    mode_deepbc(chain, [0.0, 0.0], Antecedent.from_blocks({'2': 2.0}), config)


class MisreportedSlope(Mechanism):
  """Identity mechanism whose first `wrong_calls` Jacobians claim a slope of 1/3."""

  KIND = MechanismKind.affine

  def __init__(self, wrong_calls: int):
    super().__init__(1)
    self.wrong_calls = wrong_calls
    self.calls = 0

  def forward(self, x_pa: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.asarray(u, dtype=float)

  def inverse(self, x_pa: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)

  def d_latent(self, x_pa: np.ndarray, u: np.ndarray) -> np.ndarray:
    self.calls += 1
    slope = 1 / 3 if self.calls <= self.wrong_calls else 1.0

    return np.full((*np.shape(u)[:-1], 1, 1), slope)

  def d_parents(self, x_pa: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.zeros((*np.shape(u)[:-1], 1, 0))

  def log_det_inverse(self, x_pa: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.zeros(np.shape(x)[:-1])

  def get_params(self) -> dict:
    return {}

  def set_params(self, params):
    pass

  @classmethod
  def from_dict(cls, data) -> MisreportedSlope:
    return cls(data.get('wrong_calls', 0))


def test_oscillation_retry_converges():
  lam = 1e3
  # the misreported slope makes every undamped step overshoot, five increases in a row
  mech = MisreportedSlope(wrong_calls=OSCILLATION_PATIENCE)
  scm = Scm(CausalGraph([Node('a')]), {'a': mech})
  result = mode_deepbc(scm, [0.0], Antecedent.from_blocks({'a': 1.0}), BacktrackingConfig(lam=lam))

  assert mech.calls > OSCILLATION_PATIENCE
  np.testing.assert_allclose(result.u_star.values, [lam / (1 + lam)], atol=1e-6)
  assert result.residual < 1e-5


def test_oscillation_surfaces_when_damping_fails():
  scm = Scm(CausalGraph([Node('a')]), {'a': MisreportedSlope(wrong_calls=10 ** 6)})

  with pytest.raises(OscillationDetected) as info:
    mode_deepbc(scm, [0.0], Antecedent.from_blocks({'a': 1.0}), BacktrackingConfig(lam=1e3))

  assert info.value.iteration == OSCILLATION_PATIENCE


def test_oscillation_is_not_retried_when_already_damped():
  mech = MisreportedSlope(wrong_calls=OSCILLATION_PATIENCE)
  scm = Scm(CausalGraph([Node('a')]), {'a': mech})

  with pytest.raises(OscillationDetected):
    mode_deepbc(scm, [0.0], Antecedent.from_blocks({'a': 1.0}), BacktrackingConfig(lam=1e3, damping=RETRY_DAMPING))

  assert mech.calls == OSCILLATION_PATIENCE
