from __future__ import annotations

from collections.abc import Mapping
from typing import Any, ClassVar, Optional

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import softmax

from ..base import DEFAULT_CATEGORICAL_C, DEFAULT_TEMPERATURE, MechanismKind
from ..errors import InvalidPlan, InversionFailure
from ..types import Array, Self, as_array
from .affine import AffineFlow
from .conditioner import Params
from .mechanism import Mechanism, register_mechanism


@register_mechanism
class CategoricalMechanism(Mechanism):
  """
  Softmax over the K-1 logits of an inner flow g plus the constant c.

  p^(k) = softmax(g^(1)/tau, ..., g^(K-1)/tau, c/tau)^(k); the latent has
  K-1 dimensions, the output K.
  """

  KIND: ClassVar[MechanismKind] = MechanismKind.categorical

  def __init__(
    self,
    classes: int = 2,
    parent_dim: int = 0,
    c: float = DEFAULT_CATEGORICAL_C,
    tau: float = DEFAULT_TEMPERATURE,
    inner: Optional[AffineFlow] = None,
  ):
    if classes < 2:
      raise InvalidPlan(f'Categorical mechanism needs at least 2 classes, got {classes}')

    if not (c > 0 and tau > 0):
      raise InvalidPlan(f'Categorical constants must be positive, got c={c}, tau={tau}')

    super().__init__(classes, parent_dim, latent_dim=classes - 1)
    self.classes = classes
    self.c = float(c)
    self.tau = float(tau)
    self.inner = inner or AffineFlow(classes - 1, parent_dim)

  @classmethod
  def from_dict(cls: type[Self], data: Mapping[str, Any]) -> Self:
    classes = data['dim']
    parent_dim = data.get('parent_dim', 0)
    inner = AffineFlow(classes - 1, parent_dim, hidden=data.get('hidden'), params=data.get('params'))

    return cls(
      classes=classes,
      parent_dim=parent_dim,
      c=data.get('c', DEFAULT_CATEGORICAL_C),
      tau=data.get('tau', DEFAULT_TEMPERATURE),
      inner=inner,
    )

  def options(self) -> dict[str, Any]:
    return {'c': self.c, 'tau': self.tau, **self.inner.options()}

  def get_params(self) -> Params:
    return self.inner.get_params()

  def set_params(self, params: Mapping[str, Any]):
    self.inner.set_params(params)

  def probabilities(self, logits: Array) -> Array:
    const = np.full((*logits.shape[:-1], 1), self.c)
    return softmax(np.concatenate([logits, const], axis=-1) / self.tau, axis=-1)

  def recover_logits(self, p: Array) -> Array:
    p = as_array(p)

    if p.shape[-1] != self.classes:
      raise InversionFailure(f'Expected {self.classes} class probabilities, got shape {p.shape}')

    if not np.all((p > 0) & (p < 1)):
      raise InversionFailure('Class probabilities must lie strictly inside the open simplex')

    log_p = np.log(p)
    return self.c + self.tau * (log_p[..., :-1] - log_p[..., -1:])

  def _d_probabilities(self, p: Array) -> Array:
    # dp/dlogits, shape (..., K, K-1)
    outer = p[..., :, None] * p[..., None, :]
    jac = p[..., :, None] * np.eye(self.classes) - outer

    return jac[..., :, :-1] / self.tau

  def forward(self, x_pa: Array, u: Array) -> Array:
    return self.probabilities(self.inner.forward(x_pa, u))

  def inverse(self, x_pa: Array, x: Array) -> Array:
    return self.inner.inverse(x_pa, self.recover_logits(x))

  def d_latent(self, x_pa: Array, u: Array) -> Array:
    p = self.forward(x_pa, u)
    return self._d_probabilities(p) @ self.inner.d_latent(x_pa, u)

  def d_parents(self, x_pa: Array, u: Array) -> Array:
    p = self.forward(x_pa, u)
    return self._d_probabilities(p) @ self.inner.d_parents(x_pa, u)

  def log_det_inverse(self, x_pa: Array, x: Array) -> Array:
    logits = self.recover_logits(x)
    log_det_logits = self.latent_dim * np.log(self.tau) - np.sum(np.log(x), axis=-1)

    return self.inner.log_det_inverse(x_pa, logits) + log_det_logits

  def nll_grad(self, x_pa: Array, x: Array) -> tuple[float, Params]:
    logits = self.recover_logits(x)
    nll, grads = self.inner.nll_grad(x_pa, logits)
    log_det_logits = self.latent_dim * np.log(self.tau) - np.sum(np.log(x), axis=-1)

    return nll - float(log_det_logits.mean()), grads


def categorical_forward(mech: CategoricalMechanism, x_pa: ArrayLike, u: ArrayLike) -> Array:
  return mech.forward(as_array(x_pa), as_array(u))


def categorical_inverse(mech: CategoricalMechanism, x_pa: ArrayLike, p: ArrayLike) -> Array:
  return mech.inverse(as_array(x_pa), as_array(p))
