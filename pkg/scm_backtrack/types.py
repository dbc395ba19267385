from __future__ import annotations

# Python 3.11+
try:
  from typing import \
    Protocol, runtime_checkable, Final, TypeAlias, Self

# Python 3.8 - 3.10
except ImportError:
  from typing_extensions import \
    Protocol, runtime_checkable, Final, TypeAlias, Self

from typing import Any, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray


Array: TypeAlias = NDArray[np.float64]
Mask: TypeAlias = NDArray[np.bool_]
ArrayOrFloat = Union[Array, float]


def as_array(obj: ArrayLike) -> Array:
  return np.asarray(obj, dtype=np.float64)


def is_finite(*arrays: Any) -> bool:
  return all(
    np.all(np.isfinite(arr))
    for arr in arrays
  )
