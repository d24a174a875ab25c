#!/usr/bin/env python3
"""
Basic tests for the Intersection Safety Twin
"""

import unittest
import sys
import os

# Add the parent directory to the path so we can import our modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))


class TestBasicFunctionality(unittest.TestCase):
    """Basic functionality tests"""

    def test_cli_commands(self):
        """The entry point exposes the four commands"""
        from main import build_parser
        parser = build_parser()
        for argv in (['generate', '--out', 'x.json'],
                     ['run', '--scenario', 's', '--config', 'c', '--out', 'o'],
                     ['roc', '--scenarios', 's', '--config', 'c', '--out', 'o'],
                     ['uwb-bench', '--scenario', 's', '--config', 'c', '--out', 'o.csv']):
            self.assertEqual(parser.parse_args(argv).command, argv[0])

    def test_requirements_met(self):
        """Test that required packages are available"""
        required_packages = [
            'numpy', 'scipy', 'pandas', 'filterpy', 'paho.mqtt.client',
            'prometheus_client', 'dotenv', 'hypothesis',
        ]

        for package in required_packages:
            try:
                __import__(package)
            except ImportError:
                self.fail(f"Required package {package} is not available")

    def test_package_imports(self):
        """Every service module imports cleanly"""
        from src.services import (  # noqa: F401
            messaging_service, monitoring_service, pipeline_service, prediction_service,
            risk_service, simulation_service, tdma_service, uwb_service,
        )
        from src.utils import config, console, report_formatter  # noqa: F401

    def test_default_config_parses(self):
        from src.utils.config import default_pipeline_config
        cfg = default_pipeline_config()
        self.assertEqual(cfg.network_profile, 'fiveg')
        self.assertEqual(cfg.ttc_threshold_s, 1.1)
        self.assertEqual(cfg.danger_distance_px, 30.0)


if __name__ == '__main__':
    unittest.main()
