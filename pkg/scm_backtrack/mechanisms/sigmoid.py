from __future__ import annotations

from collections.abc import Mapping
from typing import Any, ClassVar, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import expit, log_expit, logit

from ..base import LOG_2PI, MechanismKind
from ..errors import InvalidPlan, InversionFailure
from ..types import Array, Self, as_array
from .conditioner import Conditioner, Params
from .mechanism import Mechanism, diag_jacobian, register_mechanism


@register_mechanism
class SigmoidFlow(Mechanism):
  """
  x = low + amplitude * sigmoid(slope * u + c(x_pa) + bias), elementwise.

  `amplitude` and `low` fix the open output range (low, low + amplitude) and
  are not trained; slope is exp(log_slope) so it stays positive.
  """

  KIND: ClassVar[MechanismKind] = MechanismKind.sigmoid

  def __init__(
    self,
    dim: int = 1,
    parent_dim: int = 0,
    amplitude: ArrayLike = 1.0,
    low: ArrayLike = 0.0,
    slope: ArrayLike = 1.0,
    hidden: Optional[int] = None,
    params: Optional[Mapping[str, ArrayLike]] = None,
    seed: int = 0,
  ):
    super().__init__(dim, parent_dim)
    self.amplitude: Array = np.broadcast_to(as_array(amplitude), (dim,)).copy()
    self.low: Array = np.broadcast_to(as_array(low), (dim,)).copy()

    if np.any(self.amplitude <= 0):
      raise InvalidPlan(f'Sigmoid amplitude must be positive, got {self.amplitude}')

    if np.any(as_array(slope) <= 0):
      raise InvalidPlan(f'Sigmoid slope must be positive, got {slope}')

    self.log_slope: Array = np.log(np.broadcast_to(as_array(slope), (dim,))).copy()
    self.conditioner = Conditioner(parent_dim, dim, hidden, None, seed)

    if params is not None:
      self.set_params(params)

  @classmethod
  def from_constants(
    cls: type[Self],
    amplitude: float,
    slope: float,
    parent_coef: ArrayLike,
    offset: float,
    low: float,
  ) -> Self:
    parent_coef = np.atleast_1d(as_array(parent_coef))

    return cls(
      dim=1,
      parent_dim=parent_coef.size,
      amplitude=amplitude,
      low=low,
      slope=slope,
      params={'weight': parent_coef.reshape(1, -1), 'bias': [offset]},
    )

  @classmethod
  def from_dict(cls: type[Self], data: Mapping[str, Any]) -> Self:
    return cls(
      dim=data['dim'],
      parent_dim=data.get('parent_dim', 0),
      amplitude=data.get('amplitude', 1.0),
      low=data.get('low', 0.0),
      hidden=data.get('hidden'),
      params=data.get('params'),
    )

  @property
  def high(self) -> Array:
    return self.low + self.amplitude

  @property
  def slope(self) -> Array:
    return np.exp(self.log_slope)

  def options(self) -> dict[str, Any]:
    return {
      'hidden': self.conditioner.hidden,
      'amplitude': self.amplitude.tolist(),
      'low': self.low.tolist(),
    }

  def get_params(self) -> Params:
    return {
      'log_slope': self.log_slope.copy(),
      **{key: value.copy() for key, value in self.conditioner.params.items()},
    }

  def set_params(self, params: Mapping[str, Any]):
    if 'log_slope' in params:
      self.log_slope = np.broadcast_to(as_array(params['log_slope']), (self.dim,)).copy()

    self.conditioner.set_params(params)

  def _pre(self, x_pa: Array, u: Array) -> Array:
    return self.slope * u + self.conditioner(self.check_parents(x_pa))

  def _unit(self, x: Array) -> Array:
    unit = (x - self.low) / self.amplitude

    if not np.all((unit > 0) & (unit < 1)):
      raise InversionFailure(
        f'Sigmoid flow cannot invert values outside ({self.low}, {self.high})'
      )

    return unit

  def forward(self, x_pa: Array, u: Array) -> Array:
    return self.low + self.amplitude * expit(self._pre(x_pa, u))

  def inverse(self, x_pa: Array, x: Array) -> Array:
    z = logit(self._unit(x))
    return (z - self.conditioner(self.check_parents(x_pa))) / self.slope

  def _sigmoid_slope(self, z: Array) -> Array:
    return self.amplitude * expit(z) * expit(-z)

  def d_latent(self, x_pa: Array, u: Array) -> Array:
    z = self._pre(x_pa, u)
    return diag_jacobian(self._sigmoid_slope(z) * self.slope)

  def d_parents(self, x_pa: Array, u: Array) -> Array:
    x_pa = self.check_parents(x_pa)
    z = self._pre(x_pa, u)

    return self._sigmoid_slope(z)[..., :, None] * self.conditioner.jacobian(x_pa)

  def log_det_inverse(self, x_pa: Array, x: Array) -> Array:
    z = logit(self._unit(x))
    log_dx_dz = np.log(self.amplitude) + log_expit(z) + log_expit(-z)

    return -np.sum(log_dx_dz + self.log_slope, axis=-1)

  def nll_grad(self, x_pa: Array, x: Array) -> tuple[float, Params]:
    n = x.shape[0]
    x_pa = np.broadcast_to(self.check_parents(x_pa), (n, self.parent_dim))
    z = logit(self._unit(x))
    slope = self.slope
    u = (z - self.conditioner(x_pa)) / slope

    log_dx_dz = np.log(self.amplitude) + log_expit(z) + log_expit(-z)
    nll = 0.5 * np.sum(u ** 2, axis=-1) + 0.5 * self.dim * LOG_2PI \
      + np.sum(log_dx_dz + self.log_slope, axis=-1)

    grads = self.conditioner.backward(x_pa, -u / slope / n)
    grads['log_slope'] = np.sum(1.0 - u ** 2, axis=0) / n

    return float(nll.mean()), grads


def sigmoid_flow_forward(mech: SigmoidFlow, x_pa: ArrayLike, u: ArrayLike) -> Array:
  return mech.forward(as_array(x_pa), as_array(u))
