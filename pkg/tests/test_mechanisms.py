from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from scm_backtrack.errors import DimensionMismatch, InvalidPlan, InversionFailure, UnknownMechanismKind
from scm_backtrack.mechanisms import \
  AffineFlow, PredictorMechanism, SigmoidFlow, affine_forward, mechanism_from_dict, predictor_forward, \
  sigmoid_flow_forward


def numeric_log_det_inverse(mech, x_pa: np.ndarray, x: np.ndarray, eps: float = 1e-6) -> float:
  columns = []

  for k in range(x.size):
    step = np.zeros_like(x)
    step[k] = eps
    columns.append((mech.inverse(x_pa, x + step) - mech.inverse(x_pa, x - step)) / (2 * eps))

  return float(np.linalg.slogdet(np.stack(columns, axis=-1))[1])


def test_affine_forward():
  flow = AffineFlow.linear([[2.0]], 1.0, None, np.log(0.5))

  np.testing.assert_allclose(affine_forward(flow, [[3.0]], [[1.0]]), [[7.5]])
  np.testing.assert_allclose(flow.inverse(np.array([[3.0]]), np.array([[7.5]])), [[1.0]])


def test_affine_round_trip_batched():
  rng = np.random.default_rng(0)
  flow = AffineFlow(3, 2, hidden=5, seed=2, params={'weight': rng.normal(size=(6, 5)), 'bias': rng.normal(size=6)})
  x_pa = rng.normal(size=(7, 2))
  u = rng.normal(size=(7, 3))

  np.testing.assert_allclose(flow.inverse(x_pa, flow.forward(x_pa, u)), u, atol=1e-10)


def test_affine_nll_is_gaussian():
  flow = AffineFlow.constant([1.0, -2.0], [0.5, 3.0])
  x = np.random.default_rng(1).normal(size=(20, 2))
  expected = -stats.norm.logpdf(x, loc=[1.0, -2.0], scale=[0.5, 3.0]).sum(axis=-1)

  np.testing.assert_allclose(flow.nll(np.zeros((20, 0)), x), expected, rtol=1e-12)


def test_sigmoid_stays_in_range():
  flow = SigmoidFlow.from_constants(191.0, 0.5, 2.0, -5.0, 64.0)
  rng = np.random.default_rng(2)
  t = 0.5 + rng.gamma(10.0, 0.2, (1000, 1))
  u = rng.normal(size=(1000, 1))
  x = sigmoid_flow_forward(flow, t, u)

  assert np.all((x > 64.0) & (x < 255.0))
  np.testing.assert_allclose(flow.inverse(t, x), u, atol=1e-8)


def test_sigmoid_constants():
  flow = SigmoidFlow.from_constants(191.0, 0.5, 2.0, -5.0, 64.0)
  expected = 64.0 + 191.0 / (1.0 + np.exp(-(0.5 * 0.3 + 2.0 * 2.5 - 5.0)))

  np.testing.assert_allclose(flow.forward(np.array([2.5]), np.array([0.3])), [expected])


def test_sigmoid_inverse_outside_range():
  flow = SigmoidFlow.from_constants(191.0, 0.5, 2.0, -5.0, 64.0)

  for value in (64.0, 255.0, 300.0):
    with pytest.raises(InversionFailure):
      flow.inverse(np.array([2.5]), np.array([value]))


@pytest.mark.parametrize('mech', [
  AffineFlow.linear([[0.7, -0.2], [0.1, 0.4]], [0.3, -0.1], [[0.2, 0.0], [-0.1, 0.3]], [0.1, -0.4]),
  SigmoidFlow(2, 2, amplitude=[2.0, 5.0], low=[-1.0, 3.0], slope=[0.5, 1.5], params={
    'weight': [[0.3, -0.5], [0.2, 0.1]], 'bias': [0.1, -0.2],
  }),
])
def test_log_det_matches_finite_differences(mech):
  rng = np.random.default_rng(3)

  for _ in range(5):
    x_pa = rng.normal(size=2)
    x = mech.forward(x_pa, rng.normal(size=2))

    assert mech.log_det_inverse(x_pa, x) == pytest.approx(numeric_log_det_inverse(mech, x_pa, x), abs=1e-6)


@pytest.mark.parametrize('mech', [
  AffineFlow(2, 3, hidden=4, seed=1, params={'weight': np.full((4, 4), 0.3), 'bias': np.arange(4.0)}),
  SigmoidFlow(2, 3, amplitude=3.0, slope=0.8, params={'weight': np.full((2, 3), 0.4)}),
])
def test_parent_and_latent_jacobians(mech):
  rng = np.random.default_rng(4)
  x_pa, u = rng.normal(size=3), rng.normal(size=2)
  eps = 1e-6

  d_u = np.stack([
    (mech.forward(x_pa, u + eps * e) - mech.forward(x_pa, u - eps * e)) / (2 * eps)
    for e in np.eye(2)
  ], axis=-1)
  d_pa = np.stack([
    (mech.forward(x_pa + eps * e, u) - mech.forward(x_pa - eps * e, u)) / (2 * eps)
    for e in np.eye(3)
  ], axis=-1)

  np.testing.assert_allclose(mech.d_latent(x_pa, u), d_u, atol=1e-7)
  np.testing.assert_allclose(mech.d_parents(x_pa, u), d_pa, atol=1e-7)


def test_parent_width_checked():
  with pytest.raises(DimensionMismatch):
    AffineFlow(1, 2).forward(np.zeros(3), np.zeros(1))


def test_predictor_has_no_latent():
  predictor = PredictorMechanism.linear([[1.0, 2.0]], -1.0)
  x_pa = np.array([[1.0, 1.0], [0.0, 2.0]])

  assert predictor.latent_dim == 0
  np.testing.assert_allclose(predictor_forward(predictor, x_pa), [[2.0], [3.0]])
  assert predictor.inverse(x_pa, np.zeros((2, 1))).shape == (2, 0)
  np.testing.assert_allclose(predictor.d_parents(x_pa[0], np.zeros(0)), [[1.0, 2.0]])

  with pytest.raises(InversionFailure):
    predictor.log_det_inverse(x_pa, np.zeros((2, 1)))


@pytest.mark.parametrize('kwargs', [{'amplitude': 0.0}, {'slope': -1.0}])
def test_sigmoid_rejects_bad_constants(kwargs: dict):
  with pytest.raises(InvalidPlan):
    SigmoidFlow(1, 1, **kwargs)


def test_dict_round_trip():
  flow = SigmoidFlow(1, 1, amplitude=4.0, low=-2.0, slope=0.3, params={'weight': [[1.5]], 'bias': [0.2]})
  copy = mechanism_from_dict(flow.to_dict())

  assert isinstance(copy, SigmoidFlow)
  np.testing.assert_allclose(copy.forward(np.array([0.4]), np.array([1.1])), flow.forward(np.array([0.4]), np.array([1.1])))


def test_unknown_kind():
  with pytest.raises(UnknownMechanismKind):
    mechanism_from_dict({'kind': 'spline', 'dim': 1})
