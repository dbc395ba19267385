from __future__ import annotations

from collections.abc import Mapping
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from ..errors import DimensionMismatch
from ..types import Array, as_array


Params = dict[str, Array]

LINEAR_KEYS: tuple[str, ...] = ('weight', 'bias')
HIDDEN_KEYS: tuple[str, ...] = ('hidden_weight', 'hidden_bias', 'weight', 'bias')


class Conditioner:
  """
  Maps parent values to flow parameters.

  Linear (`weight @ x + bias`) by default; with `hidden` set, a single tanh
  layer of that width sits in front of the linear read-out.
  """

  def __init__(
    self,
    in_dim: int,
    out_dim: int,
    hidden: Optional[int] = None,
    params: Optional[Mapping[str, ArrayLike]] = None,
    seed: int = 0,
  ):
    self.in_dim = in_dim
    self.out_dim = out_dim
    self.hidden = hidden if hidden and in_dim else None
    self.params: Params = self._init_params(seed)

    if params is not None:
      self.set_params(params)

  def _init_params(self, seed: int) -> Params:
    if not self.hidden:
      return {
        'weight': np.zeros((self.out_dim, self.in_dim)),
        'bias': np.zeros(self.out_dim),
      }

    rng = np.random.default_rng(seed)

    return {
      'hidden_weight': rng.normal(0.0, 1.0 / np.sqrt(self.in_dim), (self.hidden, self.in_dim)),
      'hidden_bias': np.zeros(self.hidden),
      'weight': np.zeros((self.out_dim, self.hidden)),
      'bias': np.zeros(self.out_dim),
    }

  @property
  def keys(self) -> tuple[str, ...]:
    return HIDDEN_KEYS if self.hidden else LINEAR_KEYS

  def set_params(self, params: Mapping[str, ArrayLike]):
    for key in self.keys:
      if key not in params:
        continue

      value = as_array(params[key])

      if value.shape != self.params[key].shape:
        raise DimensionMismatch(
          f'Conditioner parameter {key!r} has shape {value.shape}, expected {self.params[key].shape}'
        )

      self.params[key] = value.copy()

  def copy(self) -> Conditioner:
    return Conditioner(self.in_dim, self.out_dim, self.hidden, self.params)

  def _hidden(self, x: Array) -> Array:
    return np.tanh(x @ self.params['hidden_weight'].T + self.params['hidden_bias'])

  def __call__(self, x: Array) -> Array:
    if self.hidden:
      x = self._hidden(x)

    return x @ self.params['weight'].T + self.params['bias']

  def jacobian(self, x: Array) -> Array:
    weight = self.params['weight']
    batch = x.shape[:-1]

    if not self.hidden:
      return np.broadcast_to(weight, (*batch, *weight.shape))

    h = self._hidden(x)
    inner = (1.0 - h ** 2)[..., :, None] * self.params['hidden_weight']

    return weight @ inner

  def backward(self, x: Array, grad_out: Array) -> Params:
    """Parameter gradients summed over the batch axis of `x` (n, in_dim)."""
    if not self.hidden:
      return {
        'weight': grad_out.T @ x,
        'bias': grad_out.sum(axis=0),
      }

    h = self._hidden(x)
    grad_h = grad_out @ self.params['weight']
    grad_pre = grad_h * (1.0 - h ** 2)

    return {
      'hidden_weight': grad_pre.T @ x,
      'hidden_bias': grad_pre.sum(axis=0),
      'weight': grad_out.T @ h,
      'bias': grad_out.sum(axis=0),
    }
