from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Mapping
from typing import Any, ClassVar, Optional

import numpy as np

from ..base import LOG_2PI, MechanismKind
from ..errors import DimensionMismatch, UnknownMechanismKind
from ..types import Array, Final, as_array
from .conditioner import Params


MECHANISMS: Final[dict[str, type[Mechanism]]] = {}


def register_mechanism(cls: type[Mechanism]) -> type[Mechanism]:
  MECHANISMS[str(cls.KIND)] = cls
  return cls


class Mechanism(ABC):
  """
  One structural assignment x_i = f_i(x_pa(i), u_i).

  All methods broadcast over leading batch axes: parents have trailing size
  `parent_dim`, latents `latent_dim` and observations `dim`.
  """

  KIND: ClassVar[MechanismKind]
  TRAINABLE: ClassVar[bool] = True

  def __init__(self, dim: int, parent_dim: int = 0, latent_dim: Optional[int] = None):
    self.dim = dim
    self.parent_dim = parent_dim
    self.latent_dim = dim if latent_dim is None else latent_dim

  def __repr__(self) -> str:
    return f'{type(self).__name__}(dim={self.dim}, parent_dim={self.parent_dim})'

  @abstractmethod
  def forward(self, x_pa: Array, u: Array) -> Array:
    pass

  @abstractmethod
  def inverse(self, x_pa: Array, x: Array) -> Array:
    pass

  @abstractmethod
  def d_latent(self, x_pa: Array, u: Array) -> Array:
    """Jacobian of forward in u, shape (..., dim, latent_dim)."""
    pass

  @abstractmethod
  def d_parents(self, x_pa: Array, u: Array) -> Array:
    """Jacobian of forward in x_pa, shape (..., dim, parent_dim)."""
    pass

  @abstractmethod
  def log_det_inverse(self, x_pa: Array, x: Array) -> Array:
    """log |det d inverse / dx| per batch element."""
    pass

  @abstractmethod
  def get_params(self) -> Params:
    pass

  @abstractmethod
  def set_params(self, params: Mapping[str, Any]):
    pass

  @classmethod
  @abstractmethod
  def from_dict(cls, data: Mapping[str, Any]) -> Mechanism:
    pass

  def options(self) -> dict[str, Any]:
    return {}

  def nll(self, x_pa: Array, x: Array) -> Array:
    u = self.inverse(x_pa, x)

    return 0.5 * np.sum(u ** 2, axis=-1) + 0.5 * self.latent_dim * LOG_2PI \
      - self.log_det_inverse(x_pa, x)

  def nll_grad(self, x_pa: Array, x: Array) -> tuple[float, Params]:
    """Mean negative log-likelihood over a batch and its parameter gradients."""
    raise NotImplementedError(f'{type(self).__name__} is not trainable')

  def copy(self) -> Mechanism:
    return mechanism_from_dict(self.to_dict())

  def check_parents(self, x_pa: Array) -> Array:
    x_pa = as_array(x_pa)

    if x_pa.shape[-1:] != (self.parent_dim,):
      raise DimensionMismatch(
        f'{type(self).__name__} expects {self.parent_dim} parent values, got shape {x_pa.shape}'
      )

    return x_pa

  def to_dict(self) -> dict[str, Any]:
    return {
      'kind': str(self.KIND),
      'dim': self.dim,
      'parent_dim': self.parent_dim,
      **self.options(),
      'params': {
        key: value.tolist()
        for key, value in self.get_params().items()
      },
    }


def mechanism_from_dict(data: Mapping[str, Any]) -> Mechanism:
  kind = data.get('kind')

  if kind not in MECHANISMS:
    raise UnknownMechanismKind(f'Unknown mechanism kind {kind!r}, expected one of {sorted(MECHANISMS)}')

  return MECHANISMS[kind].from_dict(data)


def diag_jacobian(diagonal: Array) -> Array:
  return diagonal[..., :, None] * np.eye(diagonal.shape[-1])
