# Pipeline Monitoring Service for the Intersection Safety Twin
import logging
import time
from contextlib import contextmanager
from typing import Dict, Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from src.models.pipeline import STAGES, LatencyRecord

logger = logging.getLogger(__name__)

# Millisecond buckets spanning the fastest stage (~0.1 ms) to LTE retrieval tails
LATENCY_BUCKETS_MS = (0.1, 0.25, 0.5, 1, 2.5, 5, 10, 25, 50, 75, 100, 150, 250, 500)


class PipelineMonitor:
    """Prometheus metrics for one pipeline run.

    Each monitor owns its registry; any number of monitors may coexist in
    one process.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.registry = CollectorRegistry()
        self.stage_latency = Histogram(
            'dt_stage_latency_ms', 'Per-stage latency sample in milliseconds',
            ['stage', 'network'], buckets=LATENCY_BUCKETS_MS, registry=self.registry)
        self.end_to_end = Histogram(
            'dt_end_to_end_latency_ms', 'Serial end-to-end latency per frame in milliseconds',
            ['network'], buckets=LATENCY_BUCKETS_MS, registry=self.registry)
        self.frames = Counter('dt_frames_total', 'Frames processed', ['profile'], registry=self.registry)
        self.skipped = Counter('dt_frames_skipped_total', 'Frames dropped after a stage error',
                               registry=self.registry)
        self.warnings = Counter('dt_warnings_published_total', 'Warnings published', registry=self.registry)
        self.active_rois = Gauge('dt_active_rois', 'Regions of interest active in the last frame',
                                 registry=self.registry)
        self._frame_count = 0
        self._warning_count = 0
        self._skipped_count = 0
        self._stage_sums: Dict[str, float] = {stage: 0.0 for stage in STAGES}

    def record_frame(self, record: LatencyRecord, n_active_rois: int = 0):
        if not self.enabled:
            return
        for stage, sample in record.samples:
            self.stage_latency.labels(stage=stage, network=record.network_profile).observe(sample)
            self._stage_sums[stage] += sample
        self.end_to_end.labels(network=record.network_profile).observe(record.end_to_end)
        self.frames.labels(profile=record.profile or 'none').inc()
        self.active_rois.set(n_active_rois)
        self._frame_count += 1

    def record_warning(self):
        if self.enabled:
            self.warnings.inc()
            self._warning_count += 1

    def record_skipped(self):
        if self.enabled:
            self.skipped.inc()
            self._skipped_count += 1

    def get_performance_summary(self) -> Dict:
        """Running totals for log lines and the run manifest"""
        n = self._frame_count
        return {
            'frames': n,
            'frames_skipped': self._skipped_count,
            'warnings_published': self._warning_count,
            'stage_means_ms': {stage: (total / n if n else None) for stage, total in self._stage_sums.items()},
            'monitoring_enabled': self.enabled,
        }

    def write_textfile(self, path: str):
        """Dump the registry in Prometheus text exposition format"""
        if not self.enabled:
            return
        write_to_textfile(path, self.registry)
        logger.info(f"Metrics written to {path}")


@contextmanager
def stage_timer(samples: Dict[str, float], stage: str, clock=time.perf_counter):
    """Record the wall-clock duration of the enclosed block in ms under `stage`"""
    start = clock()
    try:
        yield
    finally:
        samples[stage] = samples.get(stage, 0.0) + (clock() - start) * 1000.0


def sample_or_time(samples: Dict[str, float], stage: str, wallclock: bool,
                   simulated: Optional[float] = None):
    """Simulated mode stores the sampled value; wall-clock mode times the block"""
    if wallclock:
        return stage_timer(samples, stage)
    samples[stage] = samples.get(stage, 0.0) + float(simulated or 0.0)
    return _null_timer()


@contextmanager
def _null_timer():
    yield
