from __future__ import annotations

from .data import \
  Scaling, TrainedModel, blocks_from_frame, frame_from_blocks, load_model, parse_factual, \
  read_csv, save_model, write_csv
from .morpho import IMAGE, INTENSITY, THICKNESS, GroundTruthMorpho, generate_morpho_dataset, morpho_graph
from .pipeline import ModelSpec, TrainingReport, morpho_spec, train_scm
from .experiments import \
  BenchmarkResult, ExperimentPlan, WrongGraphSummary, parse_grid, run_benchmark, run_query, \
  run_stochastic_demo, run_sweep, run_weight_sweep, run_wrong_graph
