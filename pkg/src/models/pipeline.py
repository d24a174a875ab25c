"""
Pipeline Models
Detector profiles, regions of interest, latency models and run configuration
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize, special, stats

from src.models.localization import AnchorSet, RangeNoiseModel
from src.models.prediction import KalmanTuning
from src.models.risk import RiskThresholds
from src.utils.exceptions import ValidationError

STAGES = ('reception', 'preprocessing', 'detection', 'tracking', 'msg_create', 'msg_retrieve')
NETWORK_PROFILES = ('ethernet', 'wifi', 'lte', 'fiveg')
PROFILE_NAMES = ('small', 'medium', 'large')
PROFILE_POLICIES = ('roi',) + PROFILE_NAMES
LATENCY_MODES = ('simulated', 'wallclock')

# Below this coefficient of variation the zero cut removes < 1e-15 of the mass
_CV_UNTRUNCATED = 0.125
_ALPHA_LO, _ALPHA_HI = -8.0, 30.0


def _inverse_mills(alpha: float) -> float:
    """phi(alpha) / (1 - Phi(alpha)) evaluated in log space"""
    return float(np.exp(stats.norm.logpdf(alpha) - stats.norm.logsf(alpha)))


def _truncated_cv(alpha: float) -> float:
    lam = _inverse_mills(alpha)
    var = 1.0 + alpha * lam - lam * lam
    return math.sqrt(max(var, 0.0)) / (lam - alpha)


def truncated_normal_params(mean: float, std: float) -> Tuple[float, float]:
    """(loc, scale) of a zero-truncated normal whose own mean and std are (mean, std)"""
    if std == 0 or mean == 0:
        return mean, 0.0
    cv = std / mean
    if cv <= _CV_UNTRUNCATED:
        return mean, std
    if cv >= _truncated_cv(_ALPHA_HI):
        raise ValidationError('std_ms', f'std {std} too large for a non-negative latency with mean {mean}')
    alpha = optimize.brentq(lambda a: _truncated_cv(a) - cv, _ALPHA_LO, _ALPHA_HI, xtol=1e-14)
    scale = mean / (_inverse_mills(alpha) - alpha)
    return -alpha * scale, scale


@dataclass(frozen=True)
class StageLatencyModel:
    """Latency of one stage in ms; samples are truncated at zero"""
    stage: str
    mean: float
    std: float

    def __post_init__(self):
        if not (self.mean >= 0):
            raise ValidationError(f'{self.stage}.mean_ms', f'must be >= 0, got {self.mean}')
        if not (self.std >= 0):
            raise ValidationError(f'{self.stage}.std_ms', f'must be >= 0, got {self.std}')

    @cached_property
    def _params(self) -> Tuple[float, float, float]:
        loc, scale = truncated_normal_params(self.mean, self.std)
        lower = float(special.ndtr(-loc / scale)) if scale > 0 else 0.0
        return loc, scale, lower

    def sample(self, rng: np.random.Generator) -> float:
        loc, scale, lower = self._params
        if scale == 0:
            return float(self.mean)
        u = lower + rng.random() * (1.0 - lower)
        return max(0.0, float(loc + scale * special.ndtri(u)))

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        loc, scale, lower = self._params
        if scale == 0:
            return np.full(n, float(self.mean))
        u = lower + rng.random(n) * (1.0 - lower)
        return np.maximum(0.0, loc + scale * special.ndtri(u))


@dataclass(frozen=True)
class DetectorProfile:
    name: str
    latency: StageLatencyModel
    miss_probability: float
    resolution_tier: str

    def __post_init__(self):
        if self.name not in PROFILE_NAMES:
            raise ValidationError('profiles', f'unknown profile {self.name!r}')
        if not (0.0 <= self.miss_probability <= 1.0):
            raise ValidationError(f'profiles.{self.name}.miss_probability', 'must be in [0, 1]')
        if self.resolution_tier not in ('low', 'high'):
            raise ValidationError(f'profiles.{self.name}.resolution', "must be 'low' or 'high'")


@dataclass(frozen=True)
class RegionOfInterest:
    bounds: Tuple[float, float, float, float]  # (xmin, ymin, xmax, ymax) meters
    created_at: float
    ttl: float
    owner: str = ''

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValidationError('bounds', 'region of interest needs positive area')
        if not (self.ttl > 0):
            raise ValidationError('ttl', f'must be > 0, got {self.ttl}')

    def contains(self, point) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= point[0] <= xmax and ymin <= point[1] <= ymax

    def is_active(self, time: float) -> bool:
        return self.created_at <= time < self.created_at + self.ttl


@dataclass(frozen=True)
class LatencyRecord:
    frame_id: int
    samples: Tuple[Tuple[str, float], ...]
    network_profile: str
    end_to_end: float
    profile: str = ''

    @classmethod
    def from_samples(cls, frame_id: int, samples: Dict[str, float], network_profile: str,
                     profile: str = '') -> 'LatencyRecord':
        ordered = tuple((stage, float(samples[stage])) for stage in STAGES)
        total = 0.0
        for _, value in ordered:
            total += value
        return cls(frame_id, ordered, network_profile, total, profile)

    def sample(self, stage: str) -> float:
        return dict(self.samples)[stage]


@dataclass(frozen=True)
class StageReport:
    stage: str
    avg: float
    std: float
    n: int


@dataclass(frozen=True)
class ScheduleConfig:
    slot_duration_s: float = 1.0
    user_order: Tuple[str, ...] = ()
    slot_dead_time_s: float = 0.0
    fix_period_s: float = 0.1


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    stages: Dict[str, StageLatencyModel]
    network_models: Dict[str, StageLatencyModel]
    network_profile: str
    profiles: Dict[str, DetectorProfile]
    ttc_threshold_s: float
    danger_distance_px: float
    schedule: ScheduleConfig
    anchors: AnchorSet
    predictor: KalmanTuning
    uwb_noise: RangeNoiseModel = field(default_factory=RangeNoiseModel)
    px_per_meter: Optional[float] = None
    intersection: str = 'intersection-1'
    profile_policy: str = 'roi'
    roi_ttl_s: float = 2.0
    hysteresis_s: float = 0.0
    assessment_margin_m: float = 5.0
    latency_mode: str = 'simulated'
    start_epoch_ms: int = 1_700_000_000_000
    warning_cooldown_s: float = 1.0
    field_of_view: Optional[Tuple[float, float, float, float]] = None
    raw: Dict = field(default_factory=dict, compare=False, repr=False)

    def thresholds_for(self, scenario_px_per_meter: float) -> RiskThresholds:
        return RiskThresholds(
            ttc_threshold=self.ttc_threshold_s,
            danger_distance=self.danger_distance_px,
            px_per_meter=self.px_per_meter or scenario_px_per_meter,
        )

    @property
    def network_model(self) -> StageLatencyModel:
        return self.network_models[self.network_profile]


@dataclass(frozen=True)
class FrameLog:
    frame_id: int
    time: float
    profile: str
    n_detections: int
    n_active_rois: int
    n_warnings: int
    escalated: bool = False


@dataclass
class PipelineResult:
    warnings: List = field(default_factory=list)
    latency: List[LatencyRecord] = field(default_factory=list)
    risk_log: List = field(default_factory=list)
    frames: List[FrameLog] = field(default_factory=list)
    collisions: List = field(default_factory=list)
    received: List = field(default_factory=list)
    retrieval_ms: List[float] = field(default_factory=list)
    skipped_frames: int = 0
    # Ground truth the run was driven by: the simulator states and per-agent tracks
    states: List = field(default_factory=list)
    truth: Dict = field(default_factory=dict)
