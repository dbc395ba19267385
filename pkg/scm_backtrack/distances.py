from __future__ import annotations

from abc import ABC, abstractmethod
from typing import ClassVar

import numpy as np
from numpy.typing import ArrayLike

from .base import HUBER_DELTA, DistanceKind
from .errors import UnknownDistanceKind
from .types import Array, ArrayOrFloat, Final, as_array


class Distance(ABC):
  """
  Per-node backtracking distance d_i(u'_i, u_i) = d(w, u'_i - u_i).

  `value` sums over the block (last axis); `grad` and `irls_weight` are
  elementwise in the offset r.
  """

  KIND: ClassVar[str]
  QUADRATIC: ClassVar[bool] = False

  @abstractmethod
  def value(self, w: float, r: Array) -> Array:
    pass

  @abstractmethod
  def grad(self, w: float, r: Array) -> Array:
    pass

  def irls_weight(self, w: float, r: Array) -> Array:
    """Weight of the quadratic majorizer w_eff * r**2 touching d at r."""
    r = np.asarray(r)
    safe = np.where(r == 0, 1.0, r)

    return np.where(r == 0, w, self.grad(w, safe) / (2 * safe))


DISTANCES: Final[dict[str, Distance]] = {}


def register_distance(cls: type[Distance]) -> type[Distance]:
  DISTANCES[str(cls.KIND)] = cls()
  return cls


def get_distance(kind: str) -> Distance:
  try:
    return DISTANCES[str(kind)]

  except KeyError as e:
    raise UnknownDistanceKind(f'Unknown distance kind {kind!r}, expected one of {sorted(DISTANCES)}') from e


@register_distance
class WeightedSquared(Distance):
  KIND: ClassVar[str] = DistanceKind.weighted_squared
  QUADRATIC: ClassVar[bool] = True

  def value(self, w: float, r: Array) -> Array:
    return w * np.sum(r ** 2, axis=-1)

  def grad(self, w: float, r: Array) -> Array:
    return 2 * w * r

  def irls_weight(self, w: float, r: Array) -> Array:
    return np.full(np.shape(r), w, dtype=float)


@register_distance
class AbsoluteSmooth(Distance):
  """Huber: quadratic within `delta` of zero, linear beyond, C1 at the seam."""

  KIND: ClassVar[str] = DistanceKind.absolute_smooth
  delta: float = HUBER_DELTA

  def value(self, w: float, r: Array) -> Array:
    a = np.abs(r)
    d = np.where(a <= self.delta, r ** 2, 2 * self.delta * a - self.delta ** 2)

    return w * np.sum(d, axis=-1)

  def grad(self, w: float, r: Array) -> Array:
    return w * np.where(np.abs(r) <= self.delta, 2 * r, 2 * self.delta * np.sign(r))

  def irls_weight(self, w: float, r: Array) -> Array:
    a = np.abs(r)
    return w * np.where(a <= self.delta, 1.0, self.delta / np.maximum(a, self.delta))


def eval_distance(kind: str, w: float, u_prime_i: ArrayLike, u_i: ArrayLike) -> ArrayOrFloat:
  r = np.atleast_1d(as_array(u_prime_i) - as_array(u_i))
  value = get_distance(kind).value(w, r)

  return float(value) if np.ndim(value) == 0 else value


def distance_grad(kind: str, w: float, u_prime_i: ArrayLike, u_i: ArrayLike) -> Array:
  r = np.atleast_1d(as_array(u_prime_i) - as_array(u_i))
  return get_distance(kind).grad(w, r)
