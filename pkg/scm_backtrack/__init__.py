from __future__ import annotations

# modules
from . import base, baselines, distances, errors, mechanisms, metrics, scm, solvers, types

# constants and aliases
from .base import (
  DEFAULT_ITERATIONS, DEFAULT_LAMBDA, DEFAULT_SAMPLES, Blocks, DistanceKind, InnerDistance,
  MechanismKind, Method, ModeRoute, NodeId, Paths, SolveForm,
)

# records
from .base import BacktrackingConfig, CounterfactualResult, TrainingOptions
from .metrics import MetricReport

# models
from .scm import (
  Antecedent, CausalGraph, Layout, Node, Scm, StructuredVector, load_scm, save_scm,
  topological_order, validate_scm,
)
from .mechanisms import (
  AffineFlow, CategoricalMechanism, Mechanism, PredictorMechanism, SigmoidFlow, train_flow_mle,
)

# counterfactuals
from .solvers import (
  linearized_update, mode_deepbc, mode_deepbc_first_order, sparse_deepbc, stochastic_deepbc,
  trajectory_statistics,
)
from .baselines import deep_ce, interventional_cf
from .metrics import causal_distance, evaluate, obs_distance, plausible
from .distances import eval_distance, get_distance


__version__: types.Final[str] = "0.1.0"
