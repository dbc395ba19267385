from __future__ import annotations

import logging
from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import ArrayLike

from ..base import TrainingOptions, log_trace
from ..errors import DimensionMismatch, EmptyDataset, NonFinite
from ..types import Array, as_array, is_finite
from .mechanism import Mechanism


class TrainingResult(NamedTuple):
  mechanism: Mechanism
  nll: float
  initial_nll: float
  iterations: int


def _as_samples(values: ArrayLike, width: int, name: str) -> Array:
  values = as_array(values)

  if values.ndim == 1:
    values = values.reshape(-1, width)

  if values.ndim != 2 or values.shape[1] != width:
    raise DimensionMismatch(f'Training {name} must have shape (n, {width}), got {values.shape}')

  return values


@log_trace
def train_flow_mle(
  mech: Mechanism,
  x_pa: Optional[ArrayLike],
  x: ArrayLike,
  opts: TrainingOptions = TrainingOptions(),
) -> TrainingResult:
  """
  Fit `mech` by minibatch SGD on the mean negative log-likelihood of `x`
  given `x_pa` under a standard-normal latent. `mech` is left untouched;
  the fitted copy is returned.
  """
  opts = opts.validate()
  x = as_array(x)

  if x.size == 0:
    raise EmptyDataset('Cannot train a mechanism on an empty dataset')

  x = _as_samples(x, mech.dim, 'targets')
  n = x.shape[0]

  if x_pa is None:
    x_pa = np.zeros((n, mech.parent_dim))

  x_pa = _as_samples(x_pa, mech.parent_dim, 'parents') if mech.parent_dim else np.zeros((n, 0))

  if x_pa.shape[0] != n:
    raise DimensionMismatch(f'Got {x_pa.shape[0]} parent rows for {n} target rows')

  fitted = mech.copy()

  if not fitted.TRAINABLE:
    logging.info(f'{type(fitted).__name__} has no trainable parameters, skipping.')
    return TrainingResult(fitted, float('nan'), float('nan'), 0)

  initial_nll, _ = fitted.nll_grad(x_pa, x)
  last_nll = initial_nll
  rng = np.random.default_rng(opts.seed)
  batch_size = min(opts.batch_size, n)
  iteration = 0

  for iteration in range(1, opts.iterations + 1):
    index = rng.choice(n, size=batch_size, replace=False)
    _, grads = fitted.nll_grad(x_pa[index], x[index])

    params = fitted.get_params()
    fitted.set_params({
      key: params[key] - opts.lr * grad
      for key, grad in grads.items()
    })

    if iteration % opts.check_every and iteration != opts.iterations:
      continue

    nll, _ = fitted.nll_grad(x_pa, x)

    if not is_finite(nll, *fitted.get_params().values()):
      raise NonFinite(f'Training {type(fitted).__name__} diverged at iteration {iteration}')

    logging.debug(f'Iteration {iteration}: NLL {nll:.6f}')
    converged = abs(last_nll - nll) < opts.tol
    last_nll = nll

    if converged:
      break

  logging.info(f'Trained {type(fitted).__name__}: NLL {initial_nll:.4f} -> {last_nll:.4f} in {iteration} iterations')

  return TrainingResult(fitted, float(last_nll), float(initial_nll), iteration)
