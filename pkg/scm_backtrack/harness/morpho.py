from __future__ import annotations

import logging
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy import stats

from ..base import Blocks, NodeId, Paths, log_trace
from ..errors import InvalidPlan
from ..mechanisms import AffineFlow, SigmoidFlow
from ..scm import CausalGraph, Node
from ..types import Array, Final
from .data import frame_from_blocks, write_csv


THICKNESS: Final[NodeId] = 'T'
INTENSITY: Final[NodeId] = 'I'
IMAGE: Final[NodeId] = 'Img'

NAMES: Final[dict[NodeId, str]] = {
  THICKNESS: 'thickness',
  INTENSITY: 'intensity',
  IMAGE: 'image',
}

IMAGE_DIM: Final[int] = 4

# the image surrogate sees its parents through these fixed normalizations
IMAGE_PARENT_CENTER: Final[tuple[float, float]] = (2.5, 160.0)
IMAGE_PARENT_SCALE: Final[tuple[float, float]] = (0.65, 50.0)


def morpho_graph(image_dim: int = IMAGE_DIM, reverse: bool = False) -> CausalGraph:
  graph = CausalGraph([
    Node(THICKNESS, NAMES[THICKNESS], 1, ()),
    Node(INTENSITY, NAMES[INTENSITY], 1, (THICKNESS,)),
    Node(IMAGE, NAMES[IMAGE], image_dim, (THICKNESS, INTENSITY)),
  ])

  return graph.reversed_edge(THICKNESS, INTENSITY) if reverse else graph


class GroundTruthMorpho(NamedTuple):
  """
  Synthetic thickness / intensity / image SCM.

  T = 0.5 + Gamma(shape 10, rate 5); I = 64 + 191 * sigmoid(0.5 u_I + 2 T - 5);
  the image surrogate is a conditional affine flow of (T, I) whose parameters
  are drawn once from `seed`.
  """

  gamma_shape: float = 10.0
  gamma_rate: float = 5.0
  thickness_offset: float = 0.5
  amplitude: float = 191.0
  slope: float = 0.5
  coef: float = 2.0
  offset: float = -5.0
  low: float = 64.0
  image_dim: int = IMAGE_DIM
  seed: int = 0

  @property
  def high(self) -> float:
    return self.low + self.amplitude

  @property
  def graph(self) -> CausalGraph:
    return morpho_graph(self.image_dim)

  def image_params(self) -> dict[str, Array]:
    rng = np.random.default_rng(self.seed)
    dim = self.image_dim

    return {
      'loc_weight': rng.normal(0.0, 1.0, (dim, 2)),
      'loc_bias': rng.normal(0.0, 1.0, dim),
      'log_scale_weight': rng.normal(0.0, 0.2, (dim, 2)),
      'log_scale_bias': rng.normal(-0.5, 0.2, dim),
    }

  def intensity_mechanism(self) -> SigmoidFlow:
    return SigmoidFlow.from_constants(self.amplitude, self.slope, self.coef, self.offset, self.low)

  def image_mechanism(self) -> AffineFlow:
    params = self.image_params()
    center = np.array(IMAGE_PARENT_CENTER)
    scale = np.array(IMAGE_PARENT_SCALE)
    loc_weight = params['loc_weight'] / scale
    log_scale_weight = params['log_scale_weight'] / scale

    return AffineFlow.linear(
      loc_weight,
      params['loc_bias'] - loc_weight @ center,
      log_scale_weight,
      params['log_scale_bias'] - log_scale_weight @ center,
    )

  def sample(self, n: int, rng: np.random.Generator) -> Blocks:
    thickness = self.thickness_offset + rng.gamma(self.gamma_shape, 1.0 / self.gamma_rate, (n, 1))
    intensity = self.intensity_mechanism().forward(thickness, rng.standard_normal((n, 1)))
    parents = np.concatenate([thickness, intensity], axis=-1)
    image = self.image_mechanism().forward(parents, rng.standard_normal((n, self.image_dim)))

    return {THICKNESS: thickness, INTENSITY: intensity, IMAGE: image}

  def nll(self, blocks: Blocks) -> dict[NodeId, float]:
    """Mean negative log density per node under the true mechanisms, raw units."""
    thickness = blocks[THICKNESS].reshape(-1, 1)
    intensity = blocks[INTENSITY].reshape(-1, 1)
    image = blocks[IMAGE].reshape(-1, self.image_dim)
    parents = np.concatenate([thickness, intensity], axis=-1)

    log_pdf = stats.gamma.logpdf(
      thickness[:, 0] - self.thickness_offset, a=self.gamma_shape, scale=1.0 / self.gamma_rate,
    )

    return {
      THICKNESS: float(-np.mean(log_pdf)),
      INTENSITY: float(np.mean(self.intensity_mechanism().nll(thickness, intensity))),
      IMAGE: float(np.mean(self.image_mechanism().nll(parents, image))),
    }


@log_trace
def generate_morpho_dataset(
  n: int,
  seed: int = 0,
  out: Optional[Paths] = None,
  truth: GroundTruthMorpho = GroundTruthMorpho(),
) -> pd.DataFrame:
  if n < 1:
    raise InvalidPlan(f'Dataset size must be at least 1, got {n}')

  blocks = truth.sample(n, np.random.default_rng(seed))
  frame = frame_from_blocks(truth.graph, blocks)
  logging.info(f'Generated {n} samples, mean thickness {blocks[THICKNESS].mean():.4f}')

  if out is not None:
    write_csv(frame, out)

  return frame
