from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
import pytest

from scm_backtrack.base import TrainingOptions
from scm_backtrack.harness import GroundTruthMorpho, generate_morpho_dataset, morpho_spec, save_model, train_scm
from scm_backtrack.harness.data import TrainedModel
from scm_backtrack.harness.morpho import INTENSITY, THICKNESS
from scm_backtrack.mechanisms import AffineFlow
from scm_backtrack.scm import CausalGraph, Node, Scm


def affine_chain(coefs: list[float], scales: list[float] | None = None) -> Scm:
  """x_1 = s_1 u_1, x_k = coefs[k-2] * x_{k-1} + s_k u_k, node ids '1'..'n'."""
  n = len(coefs) + 1
  scales = scales or [1.0] * n
  nodes = [Node('1')] + [Node(str(k), parents=(str(k - 1),)) for k in range(2, n + 1)]
  mechanisms = {'1': AffineFlow.constant(0.0, scales[0])}

  for k, coef in enumerate(coefs, start=2):
    mechanisms[str(k)] = AffineFlow.linear([[coef]], 0.0, None, np.log(scales[k - 1]))

  return Scm(CausalGraph(nodes), mechanisms)


def random_affine_scm(rng: np.random.Generator, n: int) -> Scm:
  nodes = []
  mechanisms = {}

  for k in range(n):
    node_id = str(k + 1)
    parents = tuple(str(p + 1) for p in range(k) if rng.random() < 0.6)
    nodes.append(Node(node_id, parents=parents))

    if parents:
      mechanisms[node_id] = AffineFlow.linear(
        rng.normal(0.0, 1.0, (1, len(parents))), rng.normal(), None, rng.normal(0.0, 0.3),
      )

    else:
      mechanisms[node_id] = AffineFlow.constant(rng.normal(), np.exp(rng.normal(0.0, 0.3)))

  return Scm(CausalGraph(nodes), mechanisms)


@pytest.fixture
def chain() -> Scm:
  return affine_chain([1.0])


@pytest.fixture
def chain3() -> Scm:
  return affine_chain([2.0, 1.0])


class MorphoModels(NamedTuple):
  truth: GroundTruthMorpho
  data: Path
  model: TrainedModel
  model_path: Path
  reversed_path: Path
  validation_nll: dict[str, float]


@pytest.fixture(scope='session')
def morpho(tmp_path_factory: pytest.TempPathFactory) -> MorphoModels:
  root = tmp_path_factory.mktemp('morpho')
  truth = GroundTruthMorpho()
  data = root / 'data.csv'
  generate_morpho_dataset(5000, seed=0, out=data, truth=truth)

  opts = TrainingOptions(iterations=4000, seed=0)
  spec = morpho_spec()
  report = train_scm(data, spec, opts)
  reversed_report = train_scm(data, spec.reversed_edge(THICKNESS, INTENSITY), opts)

  model_path = root / 'model.json'
  reversed_path = root / 'reversed.json'
  save_model(report.model, model_path)
  save_model(reversed_report.model, reversed_path)

  return MorphoModels(truth, data, report.model, model_path, reversed_path, report.validation_nll)
