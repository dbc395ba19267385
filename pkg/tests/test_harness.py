from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from scm_backtrack.base import BacktrackingConfig, Method
from scm_backtrack.errors import DimensionMismatch, InvalidPlan, ModelNotFound
from scm_backtrack.harness import \
  ExperimentPlan, GroundTruthMorpho, generate_morpho_dataset, load_model, parse_grid, run_benchmark, \
  run_query, run_stochastic_demo, run_sweep, run_weight_sweep, run_wrong_graph
from scm_backtrack.harness.data import blocks_from_frame, read_csv
from scm_backtrack.harness.morpho import INTENSITY, THICKNESS
from scm_backtrack.scm import Antecedent

from conftest import MorphoModels


T_STAR: str = 'x*:thickness[0]'
T_FACTUAL: str = 'x:thickness[0]'
I_STAR: str = 'x*:intensity[0]'


def test_dataset_matches_ground_truth():
  truth = GroundTruthMorpho()
  frame = generate_morpho_dataset(100000, seed=3, truth=truth)
  blocks = blocks_from_frame(truth.graph, frame)

  assert blocks[THICKNESS].mean() == pytest.approx(2.5, abs=0.05)
  assert np.all((blocks[INTENSITY] > 64.0) & (blocks[INTENSITY] < 255.0))
  assert list(frame.columns)[:2] == ['thickness[0]', 'intensity[0]']


def test_dataset_is_deterministic(tmp_path):
  first, second = tmp_path / 'a.csv', tmp_path / 'b.csv'
  generate_morpho_dataset(200, seed=5, out=first)
  generate_morpho_dataset(200, seed=5, out=second)

  assert first.read_bytes() == second.read_bytes()

  with pytest.raises(InvalidPlan):
    generate_morpho_dataset(0)


def test_abducted_latents_are_uncorrelated(morpho: MorphoModels):
  truth = morpho.truth
  blocks = blocks_from_frame(truth.graph, generate_morpho_dataset(20000, seed=1, truth=truth))
  u = morpho.model.scm.abduct(morpho.model.factual_from_raw(blocks))

  assert abs(np.corrcoef(u.block(THICKNESS)[:, 0], u.block(INTENSITY)[:, 0])[0, 1]) < 0.05


def test_trained_nll_close_to_ground_truth(morpho: MorphoModels):
  truth = morpho.truth
  blocks = blocks_from_frame(truth.graph, generate_morpho_dataset(20000, seed=2, truth=truth))
  model = morpho.model
  x = model.factual_from_raw(blocks)
  expected = truth.nll(blocks)

  for node_id in model.scm.ids:
    trained = float(np.mean(model.scm.node_nll(x, node_id))) + model.scaling.log_scale(node_id)
    assert trained == pytest.approx(expected[node_id], abs=0.1)
    assert np.isfinite(morpho.validation_nll[node_id])


def test_model_file_round_trip(morpho: MorphoModels):
  loaded = load_model(morpho.model_path)
  u = np.random.default_rng(0).standard_normal((5, loaded.scm.latent_layout.size))

  np.testing.assert_allclose(loaded.scm.reduced_form(u).values, morpho.model.scm.reduced_form(u).values)
  np.testing.assert_allclose(loaded.scaling.mean[INTENSITY], morpho.model.scaling.mean[INTENSITY])


def test_intensity_sweep_meets_constraint(morpho: MorphoModels, tmp_path):
  out = tmp_path / 'sweep.csv'
  plan = ExperimentPlan(morpho.model_path, INTENSITY, parse_grid('90:200:10'), output=out)
  frame = run_sweep(plan)
  mode = frame[frame['method'] == 'mode']
  interventional = frame[frame['method'] == 'interventional']

  assert len(frame) == 20
  assert len(read_csv(out)) == 20
  assert (mode['residual'] < 1e-4).all()
  assert (mode['iterations'] <= 10).all()
  assert mode[T_STAR].std() > 1e-3
  np.testing.assert_allclose(interventional[T_STAR], interventional[T_FACTUAL])
  np.testing.assert_allclose(mode[I_STAR], mode['grid_value'], atol=0.5)


def test_thickness_sweep_matches_interventional(morpho: MorphoModels):
  plan = ExperimentPlan(morpho.model_path, THICKNESS, parse_grid('1.5:4:6'), config=BacktrackingConfig(lam=1e9))
  frame = run_sweep(plan)
  mode = frame[frame['method'] == 'mode'].reset_index(drop=True)
  interventional = frame[frame['method'] == 'interventional'].reset_index(drop=True)
  columns = [column for column in frame.columns if column.startswith('x*:')]

  np.testing.assert_allclose(mode[columns].to_numpy(), interventional[columns].to_numpy(), atol=1e-5)
  np.testing.assert_array_equal(mode['u*:intensity[0]'], mode['u:intensity[0]'])


def test_sweep_rejects_bad_plans(morpho: MorphoModels):
  with pytest.raises(InvalidPlan):
    run_sweep(ExperimentPlan(morpho.model_path, INTENSITY, ()))

  with pytest.raises(InvalidPlan):
    run_sweep(ExperimentPlan(morpho.model_path, INTENSITY, (120.0,), methods=(Method.stochastic,)))

  with pytest.raises(ModelNotFound):
    run_sweep(ExperimentPlan(morpho.model_path.with_name('missing.json'), INTENSITY, (120.0,)))


def test_sweep_workers_do_not_change_results(morpho: MorphoModels):
  grid = parse_grid('100,150,180')
  serial = run_sweep(ExperimentPlan(morpho.model_path, INTENSITY, grid))
  parallel = run_sweep(ExperimentPlan(morpho.model_path, INTENSITY, grid, workers=3))

  pd.testing.assert_frame_equal(serial, parallel)


def test_query_with_raw_factual(morpho: MorphoModels):
  frame = read_csv(morpho.data)
  factual = blocks_from_frame(morpho.truth.graph, frame.iloc[:1])
  factual = {node_id: values[0] for node_id, values in factual.items()}
  shift = 20.0 if factual[INTENSITY][0] < 200.0 else -20.0
  antecedent = Antecedent.from_blocks({INTENSITY: factual[INTENSITY] + shift})

  result = run_query(morpho.model, factual, antecedent, Method.mode, BacktrackingConfig())

  assert len(result) == 1
  assert result[T_FACTUAL].iloc[0] == pytest.approx(factual[THICKNESS][0])
  assert result[I_STAR].iloc[0] == pytest.approx(factual[INTENSITY][0] + shift, abs=0.5)

  samples = run_query(morpho.model, factual, antecedent, Method.stochastic, BacktrackingConfig.stochastic(iterations=20), n_samples=3)
  assert len(samples) == 3


@pytest.mark.slow
def test_query_rejects_unknown_node(morpho: MorphoModels):
  with pytest.raises(DimensionMismatch):
    run_query(morpho.model, None, Antecedent.parse('Z=1'), Method.mode, BacktrackingConfig())

  with pytest.raises(DimensionMismatch):
    morpho.model.scaling.value_to_model('Z', 1.0)


def test_wrong_graph_spread(morpho: MorphoModels, tmp_path):
  plan = ExperimentPlan(
    morpho.model_path, THICKNESS, parse_grid('2.0:3.0:5'),
    reversed_model=morpho.reversed_path, output=tmp_path / 'wrong.csv',
  )
  frame, summary = run_wrong_graph(plan)

  assert len(frame) == 2 * 2 * 5
  assert summary.correct_spread < 1e-4
  assert summary.reversed_spread > 10 * summary.correct_spread


def test_wrong_graph_needs_reversed_model(morpho: MorphoModels):
  with pytest.raises(ModelNotFound):
    run_wrong_graph(ExperimentPlan(morpho.model_path, THICKNESS, (2.5,)))


def test_benchmark(morpho: MorphoModels, tmp_path):
  plan = ExperimentPlan(
    morpho.model_path,
    methods=(Method.mode, Method.sparse, Method.interventional),
    repetitions=20,
    output=tmp_path / 'summary.csv',
    extra_output=tmp_path / 'records.csv',
  )
  result = run_benchmark(plan)
  summary = result.summary
  control = summary[(summary['method'] == 'control') & summary['metric'].isin(['obs', 'causal'])]

  assert set(summary['method']) <= {'mode', 'sparse', 'interventional', 'control'}
  assert result.failures['mode'] == 0
  assert (control['mean'].abs() < 1e-8).all()
  assert len(read_csv(tmp_path / 'records.csv')) == len(result.records)

  causal = summary[(summary['metric'] == 'causal') & (summary['m'] == 'SQU')].set_index('method')['mean']
  assert causal['mode'] <= causal['interventional'] + 1e-3


def test_benchmark_needs_repetitions(morpho: MorphoModels):
  with pytest.raises(InvalidPlan):
    run_benchmark(ExperimentPlan(morpho.model_path, repetitions=0))


def test_stochastic_demo(morpho: MorphoModels):
  plan = ExperimentPlan(
    morpho.model_path, INTENSITY, (120.0, 180.0), config=BacktrackingConfig.stochastic(), samples=200,
  )
  samples, summary = run_stochastic_demo(plan)

  assert len(samples) == 2 * 200
  assert set(summary['node']) == {THICKNESS, INTENSITY}
  assert (summary['samples'] == 200).all()
  assert ((summary['q1'] <= summary['median']) & (summary['median'] <= summary['q3'])).all()
  assert ((summary['median'] - summary['mode']).abs() <= 3 * summary['mad']).all()


def test_stochastic_demo_single_sample(morpho: MorphoModels):
  plan = ExperimentPlan(morpho.model_path, INTENSITY, (150.0,), config=BacktrackingConfig.stochastic(iterations=50), samples=1)
  samples, summary = run_stochastic_demo(plan)

  assert len(samples) == 1
  assert (summary['mad'] == 0).all()


def test_weight_monotonicity(morpho: MorphoModels):
  model = morpho.model
  _, x = model.scm.sample(1, np.random.default_rng(0))
  factual_i = model.raw_blocks(x.item(0))[INTENSITY][0]
  shift = 20.0 if factual_i < 200.0 else -20.0
  plan = ExperimentPlan(morpho.model_path, INTENSITY, (factual_i + shift,), weight_grid=(0.1, 1.0, 10.0, 100.0, 1e4))
  frame = run_weight_sweep(plan)
  shifts = frame['shift'].to_numpy()

  assert np.all(np.diff(shifts[:4]) <= 1e-12)
  assert shifts[-1] < 1e-2
  assert (frame['interventional_shift'] < 1e-9).all()
