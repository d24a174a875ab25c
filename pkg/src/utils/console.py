#!/usr/bin/env python3
"""
Console Interface for the Intersection Safety Twin
Implements the generate / run / roc / uwb-bench commands
"""

import dataclasses
import logging
import os
import sys
from typing import List, Optional, Sequence

from src.models.localization import AnchorSet
from src.models.pipeline import PipelineConfig
from src.models.world import HAZARD_KINDS, Scenario
from src.services import (
    messaging_service, pipeline_service, prediction_service, risk_service, simulation_service, tdma_service,
    uwb_service,
)
from src.services.monitoring_service import PipelineMonitor
from src.utils import report_formatter
from src.utils.config import config_hash, get_config, load_pipeline_config, mqtt_url
from src.utils.exceptions import ConfigurationError, CoverageError, ValidationError
from src.utils.report_formatter import RunManifest
from src.utils.seeding import make_rng

logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class ConsoleInterface:
    def __init__(self, out=None, cfg=None):
        self.out = out or sys.stdout
        self.cfg = cfg or get_config()

    def echo(self, text: str = ''):
        print(text, file=self.out)

    @staticmethod
    def _prepare_dir(out_dir: str) -> str:
        os.makedirs(out_dir, exist_ok=True)
        return out_dir

    # generate

    def cmd_generate(self, seed: int, n_pedestrians: int, n_vehicles: int, duration: float,
                     out_path: str, dt: float = 0.1, px_per_meter: float = 20.0) -> Scenario:
        """Write a seeded random scenario file"""
        scenario = simulation_service.generate_random_scenario(
            seed, n_pedestrians, n_vehicles, duration, dt=dt, px_per_meter=px_per_meter)
        parent = os.path.dirname(out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        simulation_service.save_scenario(scenario, out_path)
        self.echo(f"Scenario written to {out_path}: {len(scenario.agents)} agents, "
                  f"{scenario.duration:.0f} s at dt={scenario.dt}")
        return scenario

    def cmd_generate_demo(self, out_path: str) -> Scenario:
        """Write the head-on scenario: one vehicle driving at a pedestrian standing at the origin"""
        scenario = simulation_service.build_headon_scenario()
        parent = os.path.dirname(out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        simulation_service.save_scenario(scenario, out_path)
        self.echo(f"Head-on demo written to {out_path}")
        return scenario

    # run

    def _config(self, config_path: str, network: Optional[str] = None) -> PipelineConfig:
        config = load_pipeline_config(config_path)
        if network:
            config = dataclasses.replace(config, network_profile=network)
            if network not in config.network_models:
                raise ConfigurationError('network_profile', f'unknown network {network!r}')
        return config

    def _transport(self, external_broker: bool):
        if not external_broker:
            return None
        url = mqtt_url(self.cfg)
        if not url:
            raise ConfigurationError('DT_MQTT_URL', 'external broker requested but DT_MQTT_URL is not set')
        return messaging_service.MqttTransport(
            url, qos=self.cfg.MQTT_QOS, keepalive=self.cfg.MQTT_KEEPALIVE,
            timeout=self.cfg.MQTT_CONNECT_TIMEOUT, queue_size=self.cfg.LOOPBACK_QUEUE_SIZE)

    def _prediction_metrics(self, truth, config: PipelineConfig, out_dir: str):
        """Kalman ADE/FDE against the run's ground truth; None when no track covers a full horizon"""
        tuning = config.predictor
        try:
            metrics = prediction_service.benchmark_predictor(
                truth.values(), tuning, measurement_noise=tuning.measurement_sigma,
                rng=make_rng(config.seed, 'prediction'))
        except CoverageError as e:
            logger.warning(f"Prediction metrics skipped: {e}")
            return None
        path = os.path.join(out_dir, 'prediction_metrics.csv')
        prediction_service.write_metrics_csv({'kalman': metrics}, path)
        return metrics, path

    def cmd_run(self, scenario_path: str, config_path: str, out_dir: str, network: Optional[str] = None,
                fmt: str = 'csv', external_broker: bool = False):
        """Run one scenario through the pipeline; writes warnings, latency, risk, trajectory and prediction logs"""
        scenario = simulation_service.load_scenario_file(scenario_path)
        config = self._config(config_path, network)
        self._prepare_dir(out_dir)
        manifest = RunManifest('run', config_hash(config.raw), config.seed)

        monitor = PipelineMonitor(enabled=self.cfg.MONITORING_ENABLED)
        transport = self._transport(external_broker)
        try:
            result = pipeline_service.run_pipeline(scenario, config, transport=transport, monitor=monitor)
        finally:
            if transport is not None:
                transport.close()

        paths = {
            'warnings': os.path.join(out_dir, 'warnings.jsonl'),
            'latency': os.path.join(out_dir, 'latency.csv'),
            'risk_log': os.path.join(out_dir, 'risk_log.csv'),
            'trajectory': os.path.join(out_dir, 'trajectory.csv'),
        }
        pipeline_service.write_warnings_jsonl(result.warnings, paths['warnings'])
        pipeline_service.write_latency_csv(result.latency, paths['latency'])
        pipeline_service.write_risk_log_csv(result.risk_log, paths['risk_log'])
        simulation_service.write_trajectory_csv(result.states, paths['trajectory'])
        for path in paths.values():
            manifest.add_output(path)

        prediction = self._prediction_metrics(result.truth, config, out_dir)
        if prediction is not None:
            manifest.add_output(prediction[1])

        if len(result.latency) >= 2:
            report = pipeline_service.latency_report(result.latency)
            report_path = os.path.join(out_dir, f'latency_report.{fmt}')
            report_formatter.write_latency_report(report, report_path, fmt)
            manifest.add_output(report_path)
            self.echo(report_formatter.format_latency_table(report))

        metrics_path = os.path.join(out_dir, self.cfg.METRICS_FILENAME)
        if monitor.enabled:
            monitor.write_textfile(metrics_path)
            manifest.add_output(metrics_path)

        manifest.summary = {
            'frames': len(result.latency),
            'frames_skipped': result.skipped_frames,
            'warnings': len(result.warnings),
            'collisions': len(result.collisions),
            'network_profile': config.network_profile,
            'prediction_ade_m': prediction[0].ade if prediction else None,
            'prediction_fde_m': prediction[0].fde if prediction else None,
        }
        manifest.write(out_dir)
        self.echo(f"{len(result.warnings)} warnings, {len(result.collisions)} collisions, "
                  f"{len(result.latency)} frames -> {out_dir}")
        return result

    # roc

    def collect_episodes(self, scenario_paths: Sequence[str], config: PipelineConfig):
        episodes = []
        px_per_meter = None
        for index, path in enumerate(scenario_paths):
            scenario = simulation_service.load_scenario_file(path)
            px_per_meter = px_per_meter or config.px_per_meter or scenario.px_per_meter
            result = pipeline_service.run_pipeline(scenario, config, monitor=PipelineMonitor(enabled=False))
            found = risk_service.build_episodes(
                result.risk_log, result.collisions,
                pedestrians=[a.id for a in scenario.agents if a.kind == 'pedestrian'],
                hazards=[a.id for a in scenario.agents if a.kind in HAZARD_KINDS],
                truth=result.truth,
            )
            # Prefix ids so episodes from different scenario files stay distinct
            episodes.extend(dataclasses.replace(e, pedestrian=f'{index}:{e.pedestrian}') for e in found)
            logger.info(f"{path}: {len(found)} episodes, {len(result.collisions)} collisions")
        return episodes, px_per_meter or 20.0

    def cmd_roc(self, scenario_paths: Sequence[str], config_path: str, axis: str, grid: List[float],
                out_dir: str, fmt: str = 'csv'):
        """Sweep a threshold grid and report the Youden-optimal operating point"""
        config = self._config(config_path)
        self._prepare_dir(out_dir)
        manifest = RunManifest('roc', config_hash(config.raw), config.seed)

        episodes, px_per_meter = self.collect_episodes(scenario_paths, config)
        points = risk_service.sweep_roc(episodes, axis, grid, px_per_meter=px_per_meter)
        best = risk_service.select_threshold(points)

        roc_path = os.path.join(out_dir, f'roc_{axis}.{fmt}')
        report_formatter.write_roc(points, axis, roc_path, fmt)
        manifest.add_output(roc_path)
        episodes_path = os.path.join(out_dir, f'episodes_{axis}.{fmt}')
        report_formatter.write_episodes(episodes, episodes_path, fmt)
        manifest.add_output(episodes_path)

        value = best.threshold if axis == 'ttc' else best.threshold / px_per_meter
        matrix = risk_service.build_confusion_matrix(risk_service.classify(episodes, axis, value))
        confusion_path = os.path.join(out_dir, f'confusion_{axis}.json')
        report_formatter.write_confusion(matrix, confusion_path)
        manifest.add_output(confusion_path)

        auc = risk_service.roc_auc(points)
        manifest.summary = {
            'episodes': len(episodes),
            'collided': sum(e.collided for e in episodes),
            'selected_threshold': best.threshold,
            'auc': auc,
        }
        manifest.write(out_dir)
        if matrix.tpr is None:
            self.echo("No collided episodes: TPR undefined (zero denominator)")
        unit = 's' if axis == 'ttc' else 'px'
        self.echo(f"Selected threshold {best.threshold:g} {unit}: TPR {report_formatter.format_rate(best.tpr)}, "
                  f"FPR {report_formatter.format_rate(best.fpr)}")
        return points, best

    # uwb-bench

    def cmd_uwb_bench(self, scenario_path: str, anchors_path: Optional[str], config_path: str,
                      out_path: str, fmt: str = 'csv'):
        """Single-user and two-user accuracy rows plus the configured schedule"""
        scenario = simulation_service.load_scenario_file(scenario_path)
        config = self._config(config_path)
        anchors: AnchorSet = uwb_service.load_anchor_file(anchors_path) if anchors_path else config.anchors
        noise = config.uwb_noise
        fix_period = config.schedule.fix_period_s
        pedestrians = [a.id for a in scenario.agents if a.kind == 'pedestrian']
        if not pedestrians:
            raise ValidationError('agents', 'scenario has no pedestrian to carry a tag')

        rows = []
        single = tdma_service.build_schedule(pedestrians[:1], 1.0)
        rows.append(tdma_service.accuracy_benchmark(scenario, anchors, noise, single, config.seed,
                                                    fix_period, label='single-user'))
        if len(pedestrians) >= 2:
            pair = tdma_service.build_schedule(pedestrians[:2], tdma_service.TWO_USER_SLOT,
                                               tdma_service.TWO_USER_DEAD_TIME)
            rows.append(tdma_service.accuracy_benchmark(scenario, anchors, noise, pair, config.seed,
                                                        fix_period, label='two-user'))
        if config.schedule.user_order:
            configured = tdma_service.build_schedule(config.schedule.user_order, config.schedule.slot_duration_s,
                                                     config.schedule.slot_dead_time_s)
            rows.append(tdma_service.accuracy_benchmark(scenario, anchors, noise, configured, config.seed,
                                                        fix_period, label='configured'))

        parent = os.path.dirname(out_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        uwb_service.write_benchmark(rows, out_path, fmt)
        for row in rows:
            self.echo(f"{row.scenario_label:<12} {row.mean_error * 100:8.3f} +/- {row.std_error * 100:7.3f} cm "
                      f"{row.measure_frequency:6.2f} Hz")
        return rows
