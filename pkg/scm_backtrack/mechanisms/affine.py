from __future__ import annotations

from collections.abc import Mapping
from typing import Any, ClassVar, Optional

import numpy as np
from numpy.typing import ArrayLike

from ..base import LOG_2PI, MechanismKind
from ..types import Array, Self, as_array
from .conditioner import Conditioner, Params
from .mechanism import Mechanism, diag_jacobian, register_mechanism


@register_mechanism
class AffineFlow(Mechanism):
  """
  Conditional affine flow x = exp(s(x_pa)) * u + m(x_pa).

  A single conditioner emits [m, s] (2 * dim outputs); the scale is kept
  positive by exponentiating s.
  """

  KIND: ClassVar[MechanismKind] = MechanismKind.affine

  def __init__(
    self,
    dim: int = 1,
    parent_dim: int = 0,
    hidden: Optional[int] = None,
    params: Optional[Mapping[str, ArrayLike]] = None,
    seed: int = 0,
  ):
    super().__init__(dim, parent_dim)
    self.conditioner = Conditioner(parent_dim, 2 * dim, hidden, params, seed)

  @classmethod
  def constant(cls: type[Self], loc: ArrayLike = 0.0, scale: ArrayLike = 1.0) -> Self:
    loc, scale = np.atleast_1d(as_array(loc)), np.atleast_1d(as_array(scale))
    loc, scale = np.broadcast_arrays(loc, scale)
    flow = cls(dim=loc.size)
    flow.conditioner.params['bias'] = np.concatenate([loc, np.log(scale)])

    return flow

  @classmethod
  def linear(
    cls: type[Self],
    loc_weight: ArrayLike,
    loc_bias: ArrayLike = 0.0,
    log_scale_weight: Optional[ArrayLike] = None,
    log_scale_bias: ArrayLike = 0.0,
  ) -> Self:
    loc_weight = np.atleast_2d(as_array(loc_weight))
    dim, parent_dim = loc_weight.shape

    if log_scale_weight is None:
      log_scale_weight = np.zeros_like(loc_weight)

    log_scale_weight = np.atleast_2d(as_array(log_scale_weight))
    loc_bias = np.broadcast_to(as_array(loc_bias), (dim,))
    log_scale_bias = np.broadcast_to(as_array(log_scale_bias), (dim,))

    return cls(dim, parent_dim, params={
      'weight': np.vstack([loc_weight, log_scale_weight]),
      'bias': np.concatenate([loc_bias, log_scale_bias]),
    })

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

  def loc_scale(self, x_pa: Array) -> tuple[Array, Array]:
    out = self.conditioner(self.check_parents(x_pa))
    return out[..., :self.dim], out[..., self.dim:]

  def forward(self, x_pa: Array, u: Array) -> Array:
    loc, log_scale = self.loc_scale(x_pa)
    return np.exp(log_scale) * u + loc

  def inverse(self, x_pa: Array, x: Array) -> Array:
    loc, log_scale = self.loc_scale(x_pa)
    return (x - loc) * np.exp(-log_scale)

  def d_latent(self, x_pa: Array, u: Array) -> Array:
    _, log_scale = self.loc_scale(x_pa)
    scale = np.broadcast_to(np.exp(log_scale), np.broadcast_shapes(log_scale.shape, u.shape))

    return diag_jacobian(scale)

  def d_parents(self, x_pa: Array, u: Array) -> Array:
    x_pa = self.check_parents(x_pa)
    _, log_scale = self.loc_scale(x_pa)
    jac = self.conditioner.jacobian(x_pa)
    coef = np.exp(log_scale) * u

    return jac[..., :self.dim, :] + coef[..., :, None] * jac[..., self.dim:, :]

  def log_det_inverse(self, x_pa: Array, x: Array) -> Array:
    _, log_scale = self.loc_scale(x_pa)
    log_scale = np.broadcast_to(log_scale, np.broadcast_shapes(log_scale.shape, x.shape))

    return -np.sum(log_scale, axis=-1)

  def nll_grad(self, x_pa: Array, x: Array) -> tuple[float, Params]:
    n = x.shape[0]
    loc, log_scale = self.loc_scale(x_pa)
    inv_scale = np.exp(-log_scale)
    u = (x - loc) * inv_scale

    nll = 0.5 * np.sum(u ** 2, axis=-1) + 0.5 * self.dim * LOG_2PI + np.sum(log_scale, axis=-1)
    grad_loc = -u * inv_scale
    grad_log_scale = 1.0 - u ** 2
    grad_out = np.concatenate([grad_loc, grad_log_scale], axis=-1) / n
    x_pa = np.broadcast_to(x_pa, (n, self.parent_dim))

    return float(nll.mean()), self.conditioner.backward(x_pa, grad_out)


def affine_forward(mech: AffineFlow, x_pa: ArrayLike, u: ArrayLike) -> Array:
  return mech.forward(as_array(x_pa), as_array(u))
