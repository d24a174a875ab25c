#!/usr/bin/env python3
"""
Command line tests: generate, run, roc and uwb-bench
"""

import contextlib
import io
import json
import os
import sys
import tempfile
import unittest

import pandas as pd

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from main import main
from src.models.world import Agent, Scenario, Waypoint
from src.services import simulation_service as sim
from src.utils.console import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DEMO_SCENARIO = os.path.join(ROOT, 'config', 'demo_scenario.json')
PIPELINE_CONFIG = os.path.join(ROOT, 'config', 'pipeline.json')


def _quiet(argv):
    """Run the CLI with stdout/stderr captured; returns (exit code, stderr text)"""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, err.getvalue()


def _read(path):
    with open(path, 'rb') as f:
        return f.read()


def _edited_config(tmp, edit):
    with open(PIPELINE_CONFIG) as f:
        data = json.load(f)
    edit(data)
    path = os.path.join(tmp, 'pipeline.json')
    with open(path, 'w') as f:
        json.dump(data, f)
    return path


class TestGenerate(unittest.TestCase):

    def test_population(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'scenario.json')
            code, _ = _quiet(['generate', '--seed', '1', '--pedestrians', '232', '--vehicles', '20',
                              '--duration', '600', '--out', path])
            self.assertEqual(code, EXIT_OK)
            scenario = sim.load_scenario_file(path)
            kinds = [a.kind for a in scenario.agents]
            self.assertEqual(kinds.count('pedestrian'), 232)
            self.assertEqual(len(kinds) - kinds.count('pedestrian'), 20)

    def test_empty_population(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'empty.json')
            code, _ = _quiet(['generate', '--seed', '1', '--pedestrians', '0', '--vehicles', '0',
                              '--duration', '10', '--out', path])
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(sim.load_scenario_file(path).agents, ())

    def test_headon_demo(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'demo.json')
            code, _ = _quiet(['generate', '--demo', '--out', path])
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(_read(path), sim.dump_scenario(sim.build_headon_scenario()))

    def test_repeatable_bytes(self):
        with tempfile.TemporaryDirectory() as tmp:
            a, b = os.path.join(tmp, 'a.json'), os.path.join(tmp, 'b.json')
            for path in (a, b):
                _quiet(['generate', '--seed', '9', '--pedestrians', '12', '--vehicles', '3',
                        '--duration', '60', '--out', path])
            self.assertEqual(_read(a), _read(b))


class TestRun(unittest.TestCase):

    def test_demo_run_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _ = _quiet(['run', '--scenario', DEMO_SCENARIO, '--config', PIPELINE_CONFIG, '--out', tmp])
            self.assertEqual(code, EXIT_OK)
            for name in ('warnings.jsonl', 'latency.csv', 'risk_log.csv', 'latency_report.csv',
                         'metrics.prom', 'manifest.json'):
                self.assertTrue(os.path.exists(os.path.join(tmp, name)), name)
            with open(os.path.join(tmp, 'warnings.jsonl')) as f:
                warnings = [json.loads(line) for line in f if line.strip()]
            self.assertTrue(any(w['user'] == 'ped-000' and w['hazard']['id'] == 'veh-000' for w in warnings))
            with open(os.path.join(tmp, 'manifest.json')) as f:
                manifest = json.load(f)
            self.assertEqual(manifest['command'], 'run')
            self.assertEqual(manifest['summary']['frames'], 121)

    def test_run_writes_trajectory_and_prediction_metrics(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _ = _quiet(['run', '--scenario', DEMO_SCENARIO, '--config', PIPELINE_CONFIG, '--out', tmp])
            self.assertEqual(code, EXIT_OK)
            trajectory = pd.read_csv(os.path.join(tmp, 'trajectory.csv'))
            self.assertEqual(list(trajectory.columns), ['t_s', 'agent_id', 'x_m', 'y_m', 'vx_mps', 'vy_mps'])
            self.assertEqual(len(trajectory), 121 * 4)
            self.assertEqual(set(trajectory['agent_id']), {'ped-000', 'ped-001', 'veh-000', 'sco-000'})
            metrics = pd.read_csv(os.path.join(tmp, 'prediction_metrics.csv'))
            self.assertEqual(list(metrics.columns), ['predictor', 'ade_m', 'fde_m', 'n_samples'])
            self.assertEqual(list(metrics['predictor']), ['kalman'])
            self.assertGreater(metrics.loc[0, 'n_samples'], 0)
            self.assertGreaterEqual(metrics.loc[0, 'fde_m'], 0.0)
            with open(os.path.join(tmp, 'manifest.json')) as f:
                outputs = json.load(f)['output_paths']
            self.assertIn('trajectory.csv', outputs)
            self.assertIn('prediction_metrics.csv', outputs)

    def test_deterministic_outputs(self):
        with tempfile.TemporaryDirectory() as tmp:
            first, second = os.path.join(tmp, 'first'), os.path.join(tmp, 'second')
            for out in (first, second):
                _quiet(['run', '--scenario', DEMO_SCENARIO, '--config', PIPELINE_CONFIG, '--out', out])
            for name in ('warnings.jsonl', 'latency.csv', 'risk_log.csv'):
                self.assertEqual(_read(os.path.join(first, name)), _read(os.path.join(second, name)), name)

    def test_network_override(self):
        means = {}
        with tempfile.TemporaryDirectory() as tmp:
            for network in ('ethernet', 'lte'):
                out = os.path.join(tmp, network)
                code, _ = _quiet(['run', '--scenario', DEMO_SCENARIO, '--config', PIPELINE_CONFIG,
                                  '--network', network, '--out', out])
                self.assertEqual(code, EXIT_OK)
                frame = pd.read_csv(os.path.join(out, 'latency.csv'))
                self.assertEqual(set(frame['network']), {network})
                means[network] = frame['end_to_end_ms'].mean()
        self.assertGreater(means['lte'], means['ethernet'])

    def test_missing_config_field(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = _edited_config(tmp, lambda data: data['thresholds'].pop('ttc_s'))
            code, err = _quiet(['run', '--scenario', DEMO_SCENARIO, '--config', config,
                                '--out', os.path.join(tmp, 'out')])
            self.assertEqual(code, EXIT_USAGE)
            self.assertIn('thresholds.ttc_s', err)

    def test_missing_scenario_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, err = _quiet(['run', '--scenario', os.path.join(tmp, 'nope.json'), '--config', PIPELINE_CONFIG,
                                '--out', tmp])
            self.assertEqual(code, EXIT_USAGE)
            self.assertIn('nope.json', err)

    def test_bad_arguments(self):
        code, _ = _quiet(['run', '--scenario'])
        self.assertEqual(code, EXIT_USAGE)


class TestRoc(unittest.TestCase):

    def test_default_ttc_grid(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _ = _quiet(['roc', '--scenarios', DEMO_SCENARIO, '--config', PIPELINE_CONFIG, '--out', tmp])
            self.assertEqual(code, EXIT_OK)
            frame = pd.read_csv(os.path.join(tmp, 'roc_ttc.csv'))
            self.assertEqual(len(frame), 12)
            self.assertEqual(list(frame.columns), ['axis', 'threshold', 'tpr', 'fpr'])
            self.assertTrue(os.path.exists(os.path.join(tmp, 'confusion_ttc.json')))

    def test_episode_scores_with_pet(self):
        with tempfile.TemporaryDirectory() as tmp:
            code, _ = _quiet(['roc', '--scenarios', DEMO_SCENARIO, '--config', PIPELINE_CONFIG, '--out', tmp])
            self.assertEqual(code, EXIT_OK)
            frame = pd.read_csv(os.path.join(tmp, 'episodes_ttc.csv'))
            self.assertEqual(list(frame.columns), ['episode_id', 'min_ttc_s', 'min_distance_m', 'collided', 'pet_s'])
            # Two pedestrians by two hazards, whether or not a pair was ever assessed
            self.assertEqual(sorted(frame['episode_id']),
                             ['0:ped-000|sco-000', '0:ped-000|veh-000', '0:ped-001|sco-000', '0:ped-001|veh-000'])
            self.assertTrue((frame['pet_s'].dropna() >= 0).all())

    def test_all_safe_scenario_leaves_tpr_undefined(self):
        agents = (
            Agent('ped-000', 'pedestrian', 0.3, (Waypoint(0.0, 4.0, 0.0),)),
            Agent('veh-000', 'vehicle', 1.0, (Waypoint(20.0, 0.0, 5.0), Waypoint(-20.0, 0.0, 5.0))),
        )
        with tempfile.TemporaryDirectory() as tmp:
            scenario_path = os.path.join(tmp, 'safe.json')
            sim.save_scenario(Scenario(seed=0, duration=10.0, dt=0.1, agents=agents), scenario_path)
            code, _ = _quiet(['roc', '--scenarios', scenario_path, '--config', PIPELINE_CONFIG,
                              '--out', os.path.join(tmp, 'out')])
            self.assertEqual(code, EXIT_OK)
            frame = pd.read_csv(os.path.join(tmp, 'out', 'roc_ttc.csv'))
            self.assertTrue(frame['tpr'].isna().all())
            with open(os.path.join(tmp, 'out', 'confusion_ttc.json')) as f:
                confusion = json.load(f)
            self.assertIsNone(confusion['tpr'])
            self.assertEqual(confusion['tp'] + confusion['fn'], 0)

    def test_empty_episode_set_is_a_runtime_error(self):
        agents = (Agent('ped-000', 'pedestrian', 0.3, (Waypoint(0.0, 0.0, 0.0),)),)
        with tempfile.TemporaryDirectory() as tmp:
            scenario_path = os.path.join(tmp, 'lonely.json')
            sim.save_scenario(Scenario(seed=0, duration=2.0, dt=0.1, agents=agents), scenario_path)
            code, _ = _quiet(['roc', '--scenarios', scenario_path, '--config', PIPELINE_CONFIG,
                              '--out', os.path.join(tmp, 'out')])
            self.assertEqual(code, EXIT_RUNTIME)


class TestUwbBench(unittest.TestCase):

    def test_noiseless_fix_rates(self):
        agents = (
            Agent('ped-000', 'pedestrian', 0.3, (Waypoint(1.0, 2.0, 0.0),)),
            Agent('ped-001', 'pedestrian', 0.3, (Waypoint(-2.0, -3.0, 0.0),)),
        )
        with tempfile.TemporaryDirectory() as tmp:
            scenario_path = os.path.join(tmp, 'tags.json')
            sim.save_scenario(Scenario(seed=0, duration=60.0, dt=0.1, agents=agents), scenario_path)
            config = _edited_config(tmp, lambda data: data['uwb_noise'].update(sigma_m=0.0))
            out = os.path.join(tmp, 'bench.csv')
            code, _ = _quiet(['uwb-bench', '--scenario', scenario_path, '--config', config, '--out', out])
            self.assertEqual(code, EXIT_OK)
            frame = pd.read_csv(out)
            self.assertEqual(list(frame.columns), ['scenario', 'mean_error_m', 'std_error_m', 'freq_hz'])
            rows = frame.set_index('scenario')
            self.assertAlmostEqual(rows.loc['single-user', 'freq_hz'], 10.0, places=3)
            self.assertAlmostEqual(rows.loc['two-user', 'freq_hz'], 0.3, places=3)
            self.assertLess(rows.loc['single-user', 'mean_error_m'], 1e-6)

    def test_anchor_file_override(self):
        agents = (Agent('ped-000', 'pedestrian', 0.3, (Waypoint(1.0, 2.0, 0.0),)),)
        with tempfile.TemporaryDirectory() as tmp:
            scenario_path = os.path.join(tmp, 'tag.json')
            sim.save_scenario(Scenario(seed=0, duration=5.0, dt=0.1, agents=agents), scenario_path)
            out = os.path.join(tmp, 'bench.csv')
            code, _ = _quiet(['uwb-bench', '--scenario', scenario_path, '--anchors',
                              os.path.join(ROOT, 'config', 'anchors.json'), '--config', PIPELINE_CONFIG,
                              '--out', out])
            self.assertEqual(code, EXIT_OK)
            self.assertEqual(list(pd.read_csv(out)['scenario']), ['single-user'])

    def test_json_format(self):
        agents = (Agent('ped-000', 'pedestrian', 0.3, (Waypoint(1.0, 2.0, 0.0),)),)
        with tempfile.TemporaryDirectory() as tmp:
            scenario_path = os.path.join(tmp, 'tag.json')
            sim.save_scenario(Scenario(seed=0, duration=5.0, dt=0.1, agents=agents), scenario_path)
            out = os.path.join(tmp, 'bench.json')
            code, _ = _quiet(['uwb-bench', '--scenario', scenario_path, '--config', PIPELINE_CONFIG,
                              '--format', 'json', '--out', out])
            self.assertEqual(code, EXIT_OK)
            with open(out) as f:
                rows = json.load(f)
            self.assertEqual([row['scenario'] for row in rows], ['single-user'])
            self.assertEqual(set(rows[0]), {'scenario', 'mean_error_m', 'std_error_m', 'freq_hz'})


if __name__ == '__main__':
    unittest.main()
