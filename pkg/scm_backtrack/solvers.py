from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping, Sequence
from typing import NamedTuple, Optional, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.linalg import eigh

from .base import \
  BURN_IN_FRACTION, DEFAULT_LAMBDA, DEFAULT_SAMPLES, \
  OSCILLATION_PATIENCE, OSCILLATION_RTOL, PINV_RCOND, RESIDUAL_FLOOR, \
  RETRY_DAMPING, SPARSE_RESIDUAL_FACTOR, BacktrackingConfig, \
  CounterfactualResult, ModeRoute, NodeId, SolveForm, Weights, log_trace
from .distances import Distance, get_distance
from .errors import \
  InfeasibleSparsity, InvalidPlan, NonFinite, NumericalFailure, OscillationDetected
from .scm import Antecedent, Scm, StructuredVector
from .scm.model import Values
from .types import Array, ArrayOrFloat, Final, Mask, as_array, is_finite


LANGEVIN_CHUNK: Final[int] = 100
TRACE_POINTS: Final[int] = 100


class DistanceTerm(NamedTuple):
  node: NodeId
  columns: slice
  distance: Distance
  weight: float


class TrajectoryStatistics(NamedTuple):
  mean: Array
  covariance: Array
  median: Array
  count: int


def distance_terms(scm: Scm, config: BacktrackingConfig) -> list[DistanceTerm]:
  return [
    DistanceTerm(node_id, scm.latent_layout.slices[node_id], get_distance(config.distance(node_id)), config.weight(node_id))
    for node_id in scm.ids
    if scm.latent_layout.dims[node_id]
  ]


def weight_vector(scm: Scm, weights: Union[Weights, ArrayLike, None] = None) -> Array:
  """Diagonal of W, one entry per latent coordinate."""
  layout = scm.latent_layout

  if weights is None:
    return np.ones(layout.size)

  if isinstance(weights, Mapping):
    config = BacktrackingConfig(weights=weights)
    return np.concatenate([
      np.full(layout.dims[node_id], config.weight(node_id))
      for node_id in layout.ids
    ] or [np.zeros(0)])

  return np.broadcast_to(as_array(weights), (layout.size,)).copy()


def frozen_mask(scm: Scm, frozen: Optional[Iterable[NodeId]] = None) -> Mask:
  return scm.latent_layout.mask(frozen or ())


def changed_blocks(scm: Scm, u: StructuredVector, u_star: StructuredVector) -> Mask:
  return np.array([
    bool(np.any(u_star.block(node_id) != u.block(node_id)))
    for node_id in scm.ids
  ], dtype=bool)


def _scalar(value: Array) -> ArrayOrFloat:
  return float(value) if np.ndim(value) == 0 else value


def _distance(terms: Sequence[DistanceTerm], r: Array) -> Array:
  total = np.zeros(r.shape[:-1])

  for term in terms:
    total = total + term.distance.value(term.weight, r[..., term.columns])

  return total


def _distance_grad(terms: Sequence[DistanceTerm], r: Array) -> Array:
  grad = np.zeros_like(r)

  for term in terms:
    grad[..., term.columns] = term.distance.grad(term.weight, r[..., term.columns])

  return grad


def _irls_weights(terms: Sequence[DistanceTerm], r: Array) -> Array:
  weights = np.ones(r.shape[-1])

  for term in terms:
    weights[term.columns] = term.distance.irls_weight(term.weight, r[term.columns])

  return weights


def energy(
  u_prime: Values,
  u: Values,
  antecedent: Antecedent,
  scm: Scm,
  config: BacktrackingConfig = BacktrackingConfig(),
) -> ArrayOrFloat:
  """Sum of distances plus lam * ||F_S(u') - x*_S||**2; batched over leading axes of u'."""
  u_prime, u = scm.latent(u_prime), scm.latent(u)
  antecedent.validate(scm.observed_layout)

  r = u_prime.values - u.values
  resid = scm.reduced_form_selected(u_prime, antecedent.nodes) - antecedent.target
  total = _distance(distance_terms(scm, config), r) + config.lam * np.sum(resid ** 2, axis=-1)

  return _scalar(total)


def energy_grad(
  u_prime: Values,
  u: Values,
  antecedent: Antecedent,
  scm: Scm,
  config: BacktrackingConfig = BacktrackingConfig(),
) -> tuple[ArrayOrFloat, Array]:
  u_prime, u = scm.latent(u_prime), scm.latent(u)
  terms = distance_terms(scm, config)

  x, jac = scm.linearize(u_prime, antecedent.nodes)
  resid = x.select(antecedent.nodes) - antecedent.target
  r = u_prime.values - u.values

  total = _distance(terms, r) + config.lam * np.sum(resid ** 2, axis=-1)
  grad = _distance_grad(terms, r) + 2 * config.lam * np.einsum('...m,...ml->...l', resid, jac)

  return _scalar(total), grad


def pinv_solve(matrix: Array, rhs: Array, rcond: float = PINV_RCOND) -> Array:
  """Moore-Penrose solve of a symmetric system through its eigendecomposition."""
  if not matrix.size:
    return np.zeros_like(rhs)

  vals, vecs = eigh(matrix)
  cutoff = rcond * np.max(np.abs(vals))
  keep = np.abs(vals) > cutoff
  inv = np.divide(1.0, vals, out=np.zeros_like(vals), where=keep)

  return vecs @ (inv * (vecs.T @ rhs))


def _solve_dual(jac: Array, w: Array, u: Array, x_tilde: Array, lam: float, damping: float) -> Array:
  w_tilde = w + lam * damping
  u_c = u if damping == 0 else w / w_tilde * u
  w_inv = 1.0 / w_tilde

  system = (jac * w_inv) @ jac.T + np.eye(jac.shape[0]) / lam
  y = pinv_solve(system, x_tilde - jac @ u_c)

  return u_c + w_inv * (jac.T @ y)


def _solve_primal(jac: Array, w: Array, u: Array, x_tilde: Array, lam: float, damping: float) -> Array:
  system = np.diag(w / lam) + jac.T @ jac + damping * np.eye(w.size)
  return pinv_solve(system, w * u / lam + jac.T @ x_tilde)


SOLVERS: Final = {
  SolveForm.dual: _solve_dual,
  SolveForm.primal: _solve_primal,
}


def linearized_update(
  u_bar: Values,
  u: Values,
  antecedent: Antecedent,
  scm: Scm,
  weights: Union[Weights, ArrayLike, None] = None,
  lam: float = DEFAULT_LAMBDA,
  damping: float = 0.0,
  form: SolveForm = SolveForm.dual,
  frozen: Optional[Mask] = None,
) -> StructuredVector:
  """
  Minimize the energy with F_S replaced by its linearization at `u_bar`.

  Frozen latent coordinates stay at their factual value `u`.
  """
  u_bar, u = scm.latent(u_bar), scm.latent(u)
  x_bar, jac = scm.linearize(u_bar, antecedent.nodes)
  x_tilde = antecedent.target + jac @ u_bar.values - x_bar.select(antecedent.nodes)

  w = weight_vector(scm, weights)
  free = np.ones(w.size, dtype=bool) if frozen is None else ~frozen
  u_hat = u.values.copy()

  if np.any(free):
    x_tilde = x_tilde - jac[:, ~free] @ u_hat[~free]
    solve = SOLVERS[SolveForm(form)]
    u_hat[free] = solve(jac[:, free], w[free], u_hat[free], x_tilde, lam, damping)

  if not is_finite(u_hat):
    raise NumericalFailure('Linearized update produced non-finite latents')

  return StructuredVector(scm.latent_layout, u_hat)


def _result(
  scm: Scm,
  u: StructuredVector,
  u_prime: Array,
  antecedent: Antecedent,
  energies: Sequence[float],
  iterations: int,
) -> CounterfactualResult:
  u_star = StructuredVector(scm.latent_layout, u_prime)
  x_star = scm.reduced_form(u_star)
  residual = float(np.sum((x_star.select(antecedent.nodes) - antecedent.target) ** 2))

  return CounterfactualResult(
    u_star=u_star,
    x_star=x_star,
    residual=residual,
    energy_trace=tuple(float(e) for e in energies),
    iterations=iterations,
    changed=changed_blocks(scm, u, u_star),
  )


def _linearized_route(
  scm: Scm,
  u: StructuredVector,
  antecedent: Antecedent,
  config: BacktrackingConfig,
  frozen: Mask,
) -> CounterfactualResult:
  terms = distance_terms(scm, config)
  base_weights = weight_vector(scm, config.weights)
  reweighted = config.route == ModeRoute.reweighted

  u_prime = u.values.copy()
  energies = [energy(u_prime, u, antecedent, scm, config)]
  iterations = config.iterations
  increases = 0

  for iteration in range(1, config.iterations + 1):
    weights = _irls_weights(terms, u_prime - u.values) if reweighted else base_weights
    u_prime = linearized_update(
      u_prime, u, antecedent, scm, weights, config.lam, config.damping, config.form, frozen,
    ).values

    previous = energies[-1]
    current = energy(u_prime, u, antecedent, scm, config)
    energies.append(current)
    logging.debug(f'Iteration {iteration}: energy {current:.12g}')

    increases = increases + 1 if current > previous + OSCILLATION_RTOL * abs(previous) else 0

    if increases >= OSCILLATION_PATIENCE:
      raise OscillationDetected(
        f'Energy increased over {increases} consecutive iterations', iteration,
      )

    if abs(current - previous) < config.tol:
      iterations = iteration - 1
      break

  return _result(scm, u, u_prime, antecedent, energies, iterations)


def _first_order_route(
  scm: Scm,
  u: StructuredVector,
  antecedent: Antecedent,
  config: BacktrackingConfig,
  frozen: Mask,
) -> CounterfactualResult:
  if not config.step > 0:
    raise InvalidPlan(f'Gradient descent needs a positive step, got {config.step}')

  u_prime = u.values.copy()
  current, grad = energy_grad(u_prime, u, antecedent, scm, config)
  energies = [current]
  iterations = config.iterations

  with np.errstate(over='ignore', invalid='ignore'):
    for iteration in range(1, config.iterations + 1):
      u_prime = np.where(frozen, u_prime, u_prime - config.step * grad)
      previous = current
      current, grad = energy_grad(u_prime, u, antecedent, scm, config)

      if not is_finite(current, grad, u_prime):
        raise NonFinite(f'Gradient descent diverged at iteration {iteration} with step {config.step}')

      energies.append(current)

      if abs(current - previous) < config.tol:
        iterations = iteration - 1
        break

  logging.debug(f'First-order descent stopped after {iterations} iterations at energy {current:.12g}')

  return _result(scm, u, u_prime, antecedent, energies, iterations)


def _route(config: BacktrackingConfig) -> ModeRoute:
  if config.route == ModeRoute.linearized and not config.is_quadratic():
    return ModeRoute.first_order

  return ModeRoute(config.route)


def _prepare(
  scm: Scm,
  x: Values,
  antecedent: Antecedent,
  config: BacktrackingConfig,
) -> tuple[StructuredVector, Antecedent, BacktrackingConfig]:
  config = config.validate()
  antecedent = antecedent.validate(scm.observed_layout)

  return scm.abduct(x), antecedent, config


def _mode_from_latents(
  scm: Scm,
  u: StructuredVector,
  antecedent: Antecedent,
  config: BacktrackingConfig,
  frozen: Mask,
) -> CounterfactualResult:
  if _route(config) == ModeRoute.first_order:
    return _first_order_route(scm, u, antecedent, config, frozen)

  try:
    return _linearized_route(scm, u, antecedent, config, frozen)

  except OscillationDetected as e:
    if config.damping:
      raise

    logging.info(f'Energy oscillated at iteration {e.iteration}, retrying with damping {RETRY_DAMPING}')

    return _linearized_route(scm, u, antecedent, config._replace(damping=RETRY_DAMPING), frozen)


@log_trace
def mode_deepbc(
  scm: Scm,
  x: Values,
  antecedent: Antecedent,
  config: BacktrackingConfig = BacktrackingConfig(),
  frozen: Optional[Iterable[NodeId]] = None,
) -> CounterfactualResult:
  """
  Most likely backtracking counterfactual: iterate the linearized closed-form
  update from the abducted latents until the energy settles or the iteration
  budget runs out. Latent blocks of `frozen` nodes stay at their factual values.
  """
  u, antecedent, config = _prepare(scm, x, antecedent, config)
  return _mode_from_latents(scm, u, antecedent, config, frozen_mask(scm, frozen))


@log_trace
def mode_deepbc_first_order(
  scm: Scm,
  x: Values,
  antecedent: Antecedent,
  config: BacktrackingConfig = BacktrackingConfig(),
  frozen: Optional[Iterable[NodeId]] = None,
) -> CounterfactualResult:
  u, antecedent, config = _prepare(scm, x, antecedent, config)
  return _first_order_route(scm, u, antecedent, config, frozen_mask(scm, frozen))


@log_trace
def stochastic_deepbc(
  scm: Scm,
  x: Values,
  antecedent: Antecedent,
  config: BacktrackingConfig = BacktrackingConfig.stochastic(),
  n_samples: int = DEFAULT_SAMPLES,
  keep_trajectory: bool = False,
) -> list[CounterfactualResult]:
  """
  Langevin samples of exp(-energy), one chain per sample, all started at the mode.

  Chain c draws its noise from the c-th child of SeedSequence(config.seed), so
  its path does not depend on how many chains run alongside it.
  """
  u, antecedent, config = _prepare(scm, x, antecedent, config)

  if n_samples < 1:
    raise InvalidPlan(f'Need at least one sample, got {n_samples}')

  mode = _mode_from_latents(scm, u, antecedent, config.chain_start(), frozen_mask(scm))
  steps = config.iterations

  if config.step == 0:
    trajectory = np.repeat(mode.u_star.values[None], steps + 1, axis=0) if keep_trajectory else None
    return [mode._replace(trajectory=trajectory) for _ in range(n_samples)]

  generators = [
    np.random.default_rng(seed)
    for seed in np.random.SeedSequence(config.seed).spawn(n_samples)
  ]
  chains = np.tile(mode.u_star.values, (n_samples, 1))
  stride = max(1, steps // TRACE_POINTS)
  noise_scale = np.sqrt(2 * config.step)

  current, grad = energy_grad(chains, u, antecedent, scm, config)
  trace = [current]
  path = [chains.copy()] if keep_trajectory else []

  with np.errstate(over='ignore', invalid='ignore'):
    for start in range(0, steps, LANGEVIN_CHUNK):
      size = min(LANGEVIN_CHUNK, steps - start)
      noise = np.stack([gen.standard_normal((size, chains.shape[-1])) for gen in generators], axis=1)

      for k in range(size):
        chains = chains - config.step * grad + noise_scale * noise[k]
        current, grad = energy_grad(chains, u, antecedent, scm, config)
        step = start + k + 1

        if step % stride == 0 or step == steps:
          trace.append(current)

        if keep_trajectory:
          path.append(chains.copy())

      if not is_finite(chains, current):
        bad = np.flatnonzero(~np.all(np.isfinite(chains), axis=-1))
        raise NonFinite(f'Langevin chains {bad[:10].tolist()} diverged by step {start + size}')

      logging.debug(f'Langevin step {start + size}/{steps}: mean energy {np.mean(current):.6g}')

  trace = np.stack(trace, axis=-1)
  path = np.stack(path, axis=1) if keep_trajectory else None
  x_star = scm.reduced_form(chains)
  residuals = np.sum((x_star.select(antecedent.nodes) - antecedent.target) ** 2, axis=-1)

  return [
    CounterfactualResult(
      u_star=StructuredVector(scm.latent_layout, chains[c]),
      x_star=x_star.item(c),
      residual=float(residuals[c]),
      energy_trace=tuple(trace[c].tolist()),
      iterations=steps,
      changed=changed_blocks(scm, u, StructuredVector(scm.latent_layout, chains[c])),
      trajectory=None if path is None else path[c],
    )
    for c in range(n_samples)
  ]


def trajectory_statistics(
  results: Union[Sequence[CounterfactualResult], Array],
  burn_in: float = BURN_IN_FRACTION,
) -> TrajectoryStatistics:
  """Pool the post-burn-in states of every chain's trajectory."""
  if isinstance(results, np.ndarray):
    paths = results if results.ndim == 3 else results[None]

  else:
    if any(result.trajectory is None for result in results):
      raise InvalidPlan('Trajectory statistics need results sampled with keep_trajectory=True')

    paths = np.stack([result.trajectory for result in results])

  skip = int(burn_in * paths.shape[1])
  states = paths[:, skip:].reshape(-1, paths.shape[-1])

  return TrajectoryStatistics(
    mean=states.mean(axis=0),
    covariance=np.atleast_2d(np.cov(states, rowvar=False)),
    median=np.median(states, axis=0),
    count=states.shape[0],
  )


@log_trace
def sparse_deepbc(
  scm: Scm,
  x: Values,
  antecedent: Antecedent,
  M: Optional[int] = None,
  config: BacktrackingConfig = BacktrackingConfig(),
  selectable: Optional[Iterable[NodeId]] = None,
) -> CounterfactualResult:
  """
  Two-phase sparse counterfactual.

  Phase one is an unrestricted mode solve. Phase two keeps the M latent blocks
  that moved most (ties go to the earlier node) and solves again with every
  other block frozen at its factual value. `selectable` restricts which blocks
  may be kept.
  """
  M = config.sparsity if M is None else M

  if M is None or M < 1:
    raise InvalidPlan(f'Sparsity bound must be at least 1, got {M}')

  u, antecedent, config = _prepare(scm, x, antecedent, config)
  full = _mode_from_latents(scm, u, antecedent, config, frozen_mask(scm))

  allowed = set(scm.ids if selectable is None else selectable)
  position = {node_id: index for index, node_id in enumerate(scm.ids)}
  candidates = [
    node_id
    for node_id in scm.ids
    if node_id in allowed and scm.latent_layout.dims[node_id]
  ]
  change = {
    node_id: float(np.linalg.norm(full.u_star.block(node_id) - u.block(node_id)))
    for node_id in candidates
  }
  selected = sorted(candidates, key=lambda node_id: (-change[node_id], position[node_id]))[:M]
  frozen = [node_id for node_id in scm.ids if node_id not in selected]
  logging.info(f'Sparse phase two optimizes {selected}, freezing {frozen}')

  result = _mode_from_latents(scm, u, antecedent, config, frozen_mask(scm, frozen))
  reference = max(full.residual, RESIDUAL_FLOOR)

  if result.residual > SPARSE_RESIDUAL_FACTOR * reference:
    logging.warning(f'Sparse residual {result.residual:.3e} exceeds {SPARSE_RESIDUAL_FACTOR}x the full residual {reference:.3e}')
    raise InfeasibleSparsity(
      f'Restricting to {selected} leaves residual {result.residual:.3e}, '
      f'more than {SPARSE_RESIDUAL_FACTOR:g}x the unrestricted {reference:.3e}',
      result.residual,
      reference,
    )

  return result
