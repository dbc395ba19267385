from __future__ import annotations

from collections.abc import Mapping
from typing import Any, ClassVar, Optional

import numpy as np
from numpy.typing import ArrayLike

from ..base import MechanismKind
from ..errors import InversionFailure
from ..types import Array, Self, as_array
from .conditioner import Conditioner, Params
from .mechanism import Mechanism, register_mechanism


@register_mechanism
class PredictorMechanism(Mechanism):
  """
  Deterministic map of the parents, y = W x_pa + b (or a one-layer tanh net).

  Has no latent block, so abduction yields an empty vector and counterfactuals
  can only move the predictor through its parents.
  """

  KIND: ClassVar[MechanismKind] = MechanismKind.predictor
  TRAINABLE: ClassVar[bool] = False

  def __init__(
    self,
    dim: int = 1,
    parent_dim: int = 0,
    hidden: Optional[int] = None,
    params: Optional[Mapping[str, ArrayLike]] = None,
    seed: int = 0,
  ):
    super().__init__(dim, parent_dim, latent_dim=0)
    self.conditioner = Conditioner(parent_dim, dim, hidden, params, seed)

  @classmethod
  def linear(cls: type[Self], weight: ArrayLike, bias: ArrayLike = 0.0) -> Self:
    weight = np.atleast_2d(as_array(weight))
    dim, parent_dim = weight.shape

    return cls(dim, parent_dim, params={
      'weight': weight,
      'bias': np.broadcast_to(as_array(bias), (dim,)),
    })

  @classmethod
  def constant(cls: type[Self], value: ArrayLike, parent_dim: int = 0) -> Self:
    value = np.atleast_1d(as_array(value))
    return cls(value.size, parent_dim, params={'bias': value})

  @classmethod
  def from_dict(cls: type[Self], data: Mapping[str, Any]) -> Self:
    return cls(
      dim=data['dim'],
      parent_dim=data.get('parent_dim', 0),
      hidden=data.get('hidden'),
      params=data.get('params'),
    )

  def options(self) -> dict[str, Any]:
    return {'hidden': self.conditioner.hidden}

  def get_params(self) -> Params:
    return {key: value.copy() for key, value in self.conditioner.params.items()}

  def set_params(self, params: Mapping[str, Any]):
    self.conditioner.set_params(params)

  def forward(self, x_pa: Array, u: Array) -> Array:
    x_pa = self.check_parents(x_pa)
    out = self.conditioner(x_pa)
    batch = np.broadcast_shapes(x_pa.shape[:-1], as_array(u).shape[:-1])

    return np.broadcast_to(out, (*batch, self.dim)).copy()

  def inverse(self, x_pa: Array, x: Array) -> Array:
    batch = np.broadcast_shapes(as_array(x_pa).shape[:-1], as_array(x).shape[:-1])
    return np.zeros((*batch, 0))

  def d_latent(self, x_pa: Array, u: Array) -> Array:
    batch = np.broadcast_shapes(as_array(x_pa).shape[:-1], as_array(u).shape[:-1])
    return np.zeros((*batch, self.dim, 0))

  def d_parents(self, x_pa: Array, u: Array) -> Array:
    x_pa = self.check_parents(x_pa)
    jac = self.conditioner.jacobian(x_pa)
    batch = np.broadcast_shapes(x_pa.shape[:-1], as_array(u).shape[:-1])

    return np.broadcast_to(jac, (*batch, *jac.shape[-2:]))

  def log_det_inverse(self, x_pa: Array, x: Array) -> Array:
    raise InversionFailure('Predictor mechanisms are deterministic and carry no density')


def predictor_forward(mech: PredictorMechanism, x_pa: ArrayLike) -> Array:
  x_pa = as_array(x_pa)
  return mech.forward(x_pa, np.zeros((*x_pa.shape[:-1], 0)))
