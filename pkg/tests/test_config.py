#!/usr/bin/env python3
"""
Tests for pipeline configuration parsing and the stage latency models
"""

import copy
import json
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.models.pipeline import StageLatencyModel
from src.utils.config import (
    DEFAULT_PIPELINE_CONFIG, config_hash, default_pipeline_config, load_pipeline_config, parse_pipeline_config,
)
from src.utils.exceptions import ConfigurationError, ParseError, ValidationError
from src.utils.seeding import derive_seed, make_rng


def _data(**changes):
    data = copy.deepcopy(DEFAULT_PIPELINE_CONFIG)
    data.update(changes)
    return data


class TestPipelineConfig(unittest.TestCase):

    def test_defaults(self):
        config = default_pipeline_config()
        self.assertEqual(config.network_profile, 'fiveg')
        self.assertEqual(config.ttc_threshold_s, 1.1)
        self.assertEqual(config.danger_distance_px, 30.0)
        self.assertEqual(config.anchors.ids, ('A0', 'A1', 'A2'))
        self.assertEqual(set(config.network_models), {'ethernet', 'wifi', 'lte', 'fiveg'})

    def test_thresholds_in_meters(self):
        thresholds = default_pipeline_config().thresholds_for(20.0)
        self.assertAlmostEqual(thresholds.danger_distance_m, 1.5)

    def test_px_per_meter_override(self):
        config = default_pipeline_config(thresholds={'px_per_meter': 10.0})
        self.assertAlmostEqual(config.thresholds_for(20.0).danger_distance_m, 3.0)

    def test_missing_section_named(self):
        data = _data()
        del data['schedule']
        with self.assertRaises(ConfigurationError) as ctx:
            parse_pipeline_config(data)
        self.assertEqual(ctx.exception.field, 'schedule')

    def test_missing_nested_field_named(self):
        data = _data()
        del data['stages']['msg_retrieve']['lte']
        with self.assertRaises(ConfigurationError) as ctx:
            parse_pipeline_config(data)
        self.assertEqual(ctx.exception.field, 'stages.msg_retrieve.lte')

    def test_invalid_values(self):
        for changes, field in (
            ({'network_profile': 'carrier-pigeon'}, 'network_profile'),
            ({'thresholds': {'ttc_s': 0.0, 'danger_distance_px': 30.0}}, 'thresholds.ttc_s'),
            ({'profile_policy': 'huge'}, 'profile_policy'),
            ({'seed': 1.5}, 'seed'),
        ):
            with self.assertRaises(ConfigurationError) as ctx:
                parse_pipeline_config(_data(**changes))
            self.assertEqual(ctx.exception.field, field)

    def test_degenerate_anchors(self):
        anchors = [{'id': f'A{i}', 'x_m': float(i), 'y_m': 0.0} for i in range(3)]
        with self.assertRaises(ConfigurationError) as ctx:
            parse_pipeline_config(_data(anchors=anchors))
        self.assertEqual(ctx.exception.field, 'anchors')

    def test_configuration_error_is_validation_error(self):
        self.assertTrue(issubclass(ConfigurationError, ValidationError))

    def test_malformed_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'pipeline.json')
            with open(path, 'w') as f:
                f.write('{"seed": ')
            with self.assertRaises(ParseError):
                load_pipeline_config(path)

    def test_file_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'pipeline.json')
            with open(path, 'w') as f:
                json.dump(DEFAULT_PIPELINE_CONFIG, f)
            self.assertEqual(load_pipeline_config(path), default_pipeline_config())

    def test_config_hash_ignores_key_order(self):
        data = _data()
        reordered = dict(reversed(list(data.items())))
        self.assertEqual(config_hash(data), config_hash(reordered))
        self.assertNotEqual(config_hash(data), config_hash(_data(seed=8)))


class TestStageLatencyModel(unittest.TestCase):

    def test_truncated_normal_matches_moments(self):
        model = StageLatencyModel('reception', 1.94, 1.69)
        samples = model.sample_many(np.random.default_rng(1), 200_000)
        self.assertGreaterEqual(samples.min(), 0.0)
        self.assertAlmostEqual(samples.mean(), 1.94, delta=0.03)
        self.assertAlmostEqual(samples.std(), 1.69, delta=0.03)

    def test_zero_std_is_constant(self):
        model = StageLatencyModel('msg_create', 0.081, 0.0)
        self.assertEqual(model.sample(np.random.default_rng(0)), 0.081)

    def test_negative_parameters_rejected(self):
        with self.assertRaises(ValidationError):
            StageLatencyModel('tracking', -1.0, 0.1)
        with self.assertRaises(ValidationError):
            StageLatencyModel('tracking', 1.0, -0.1)


class TestSeeding(unittest.TestCase):

    def test_named_streams(self):
        self.assertEqual(derive_seed(7, 'uwb'), derive_seed(7, 'uwb'))
        self.assertNotEqual(derive_seed(7, 'uwb'), derive_seed(7, 'scenario'))
        self.assertEqual(make_rng(7, 'uwb').random(), make_rng(7, 'uwb').random())


if __name__ == '__main__':
    unittest.main()
