# Configuration for the Intersection Safety Twin
import copy
import hashlib
import json
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from src.models.localization import AnchorSet, RangeNoiseModel
from src.models.pipeline import (
    LATENCY_MODES, NETWORK_PROFILES, PROFILE_NAMES, PROFILE_POLICIES,
    DetectorProfile, PipelineConfig, ScheduleConfig, StageLatencyModel,
)
from src.models.prediction import KalmanTuning
from src.utils.exceptions import ConfigurationError, DegenerateGeometryError, ParseError, ValidationError

load_dotenv()


class Config:
    """Base configuration class"""

    # Logging Configuration
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # MQTT Configuration
    MQTT_URL = os.environ.get('DT_MQTT_URL')
    MQTT_QOS = 1
    MQTT_KEEPALIVE = int(os.environ.get('MQTT_KEEPALIVE', '60'))
    MQTT_CONNECT_TIMEOUT = float(os.environ.get('MQTT_CONNECT_TIMEOUT', '5'))
    LOOPBACK_QUEUE_SIZE = int(os.environ.get('LOOPBACK_QUEUE_SIZE', '1024'))

    # Monitoring Configuration
    MONITORING_ENABLED = os.environ.get('MONITORING_ENABLED', 'true').lower() == 'true'
    METRICS_FILENAME = os.environ.get('METRICS_FILENAME', 'metrics.prom')

    DEFAULT_INTERSECTION = os.environ.get('DT_INTERSECTION', 'intersection-1')


class DevelopmentConfig(Config):
    """Development configuration"""
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Production configuration"""
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')
    MQTT_CONNECT_TIMEOUT = 10.0


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    LOG_LEVEL = 'WARNING'
    MQTT_URL = None
    MONITORING_ENABLED = False


# Configuration mapping
config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}


def get_config():
    """Get configuration based on environment"""
    env = os.environ.get('DT_ENV', 'development')
    return config.get(env, config['default'])


# Stage latency models (ms), detector profiles and network retrieval models
DEFAULT_PIPELINE_CONFIG: Dict[str, Any] = {
    'seed': 7,
    'intersection': 'intersection-1',
    'network_profile': 'fiveg',
    'stages': {
        'reception': {'mean_ms': 1.94, 'std_ms': 1.69},
        'preprocessing': {'mean_ms': 0.108, 'std_ms': 0.024},
        'tracking': {'mean_ms': 0.973, 'std_ms': 0.173},
        'msg_create': {'mean_ms': 0.081, 'std_ms': 0.021},
        'msg_retrieve': {
            'ethernet': {'mean_ms': 3.21, 'std_ms': 0.315},
            'wifi': {'mean_ms': 6.86, 'std_ms': 1.19},
            'lte': {'mean_ms': 45.72, 'std_ms': 15.30},
            'fiveg': {'mean_ms': 39.21, 'std_ms': 7.12},
        },
    },
    'profiles': {
        'small': {'mean_ms': 4.034, 'std_ms': 0.084, 'miss_probability': 0.10, 'resolution': 'low'},
        'medium': {'mean_ms': 7.216, 'std_ms': 0.086, 'miss_probability': 0.05, 'resolution': 'high'},
        'large': {'mean_ms': 11.140, 'std_ms': 1.800, 'miss_probability': 0.02, 'resolution': 'high'},
    },
    'profile_policy': 'roi',
    'roi': {'ttl_s': 2.0, 'hysteresis_s': 0.0, 'assessment_margin_m': 5.0},
    'thresholds': {'ttc_s': 1.1, 'danger_distance_px': 30.0},
    'schedule': {
        'slot_duration_s': 1.0,
        'user_order': [],
        'slot_dead_time_s': 0.0,
        'fix_period_s': 0.1,
    },
    'anchors': [
        {'id': 'A0', 'x_m': -10.0, 'y_m': -10.0},
        {'id': 'A1', 'x_m': 10.0, 'y_m': -10.0},
        {'id': 'A2', 'x_m': 0.0, 'y_m': 10.0},
    ],
    'uwb_noise': {'sigma_m': 0.05, 'dropout_p': 0.0, 'nlos_bias_m': 0.3, 'nlos_p': 0.0},
    'predictor': {
        'horizon_s': 3.0,
        'dt_s': 0.1,
        'measurement_sigma_m': 0.1,
        'accel_sigma_pedestrian': 0.5,
        'accel_sigma_vehicle': 1.5,
        'track_timeout_s': 1.0,
    },
    'latency_mode': 'simulated',
    'start_epoch_ms': 1_700_000_000_000,
    'warning_cooldown_s': 1.0,
    'field_of_view_m': None,
}

REQUIRED_SECTIONS = ('stages', 'profiles', 'thresholds', 'schedule', 'anchors',
                     'network_profile', 'predictor', 'seed')


def default_pipeline_config(**overrides) -> PipelineConfig:
    """Default config with top-level overrides applied (nested dicts are merged)"""
    data = copy.deepcopy(DEFAULT_PIPELINE_CONFIG)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    return parse_pipeline_config(data)


def _get(data: Dict, key: str, path: str, default: Any = ...):
    if not isinstance(data, dict):
        raise ConfigurationError(path, 'expected an object')
    if key not in data:
        if default is ...:
            raise ConfigurationError(f'{path}.{key}' if path else key, 'missing required field')
        return default
    return data[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(path, f'expected a number, got {value!r}')
    return float(value)


def _latency(data: Dict, stage: str, path: str) -> StageLatencyModel:
    return StageLatencyModel(
        stage=stage,
        mean=_number(_get(data, 'mean_ms', path), f'{path}.mean_ms'),
        std=_number(_get(data, 'std_ms', path), f'{path}.std_ms'),
    )


def parse_anchor_list(items: Any, path: str = 'anchors') -> AnchorSet:
    if not isinstance(items, list):
        raise ConfigurationError(path, 'expected a list of anchors')
    anchors = []
    for i, item in enumerate(items):
        item_path = f'{path}[{i}]'
        anchors.append((
            str(_get(item, 'id', item_path)),
            (_number(_get(item, 'x_m', item_path), f'{item_path}.x_m'),
             _number(_get(item, 'y_m', item_path), f'{item_path}.y_m')),
        ))
    return AnchorSet(tuple(anchors))


def parse_pipeline_config(data: Dict[str, Any]) -> PipelineConfig:
    """Validate a pipeline config document; errors name the dotted field path"""
    if not isinstance(data, dict):
        raise ConfigurationError('config', 'expected a JSON object')
    for section in REQUIRED_SECTIONS:
        _get(data, section, '')

    try:
        stages_data = data['stages']
        stages = {
            stage: _latency(_get(stages_data, stage, 'stages'), stage, f'stages.{stage}')
            for stage in ('reception', 'preprocessing', 'tracking', 'msg_create')
        }
        retrieve = _get(stages_data, 'msg_retrieve', 'stages')
        network_models = {
            net: _latency(_get(retrieve, net, 'stages.msg_retrieve'), 'msg_retrieve', f'stages.msg_retrieve.{net}')
            for net in NETWORK_PROFILES
        }

        network_profile = data['network_profile']
        if network_profile not in NETWORK_PROFILES:
            raise ConfigurationError('network_profile', f'must be one of {NETWORK_PROFILES}')

        profiles = {}
        for name in PROFILE_NAMES:
            path = f'profiles.{name}'
            item = _get(data['profiles'], name, 'profiles')
            profiles[name] = DetectorProfile(
                name=name,
                latency=_latency(item, 'detection', path),
                miss_probability=_number(_get(item, 'miss_probability', path), f'{path}.miss_probability'),
                resolution_tier=str(_get(item, 'resolution', path, 'low' if name == 'small' else 'high')),
            )

        thresholds = data['thresholds']
        ttc = _number(_get(thresholds, 'ttc_s', 'thresholds'), 'thresholds.ttc_s')
        danger_px = _number(_get(thresholds, 'danger_distance_px', 'thresholds'), 'thresholds.danger_distance_px')
        if ttc <= 0:
            raise ConfigurationError('thresholds.ttc_s', 'must be > 0')
        if danger_px <= 0:
            raise ConfigurationError('thresholds.danger_distance_px', 'must be > 0')
        px_override = thresholds.get('px_per_meter')

        sched = data['schedule']
        user_order = _get(sched, 'user_order', 'schedule')
        if not isinstance(user_order, list):
            raise ConfigurationError('schedule.user_order', 'expected a list of user ids')
        schedule = ScheduleConfig(
            slot_duration_s=_number(_get(sched, 'slot_duration_s', 'schedule'), 'schedule.slot_duration_s'),
            user_order=tuple(str(u) for u in user_order),
            slot_dead_time_s=_number(sched.get('slot_dead_time_s', 0.0), 'schedule.slot_dead_time_s'),
            fix_period_s=_number(sched.get('fix_period_s', 0.1), 'schedule.fix_period_s'),
        )
        if schedule.fix_period_s <= 0:
            raise ConfigurationError('schedule.fix_period_s', 'must be > 0')

        pred = data['predictor']
        predictor = KalmanTuning(
            horizon_s=_number(_get(pred, 'horizon_s', 'predictor'), 'predictor.horizon_s'),
            dt_s=_number(_get(pred, 'dt_s', 'predictor'), 'predictor.dt_s'),
            measurement_sigma=_number(pred.get('measurement_sigma_m', 0.1), 'predictor.measurement_sigma_m'),
            accel_sigma_pedestrian=_number(pred.get('accel_sigma_pedestrian', 0.5), 'predictor.accel_sigma_pedestrian'),
            accel_sigma_vehicle=_number(pred.get('accel_sigma_vehicle', 1.5), 'predictor.accel_sigma_vehicle'),
            track_timeout_s=_number(pred.get('track_timeout_s', 1.0), 'predictor.track_timeout_s'),
        )
        if predictor.dt_s <= 0 or predictor.horizon_s < predictor.dt_s:
            raise ConfigurationError('predictor.horizon_s', 'horizon must cover at least one step of dt_s > 0')
        if predictor.measurement_sigma <= 0:
            raise ConfigurationError('predictor.measurement_sigma_m', 'must be > 0')

        noise_data = data.get('uwb_noise') or {}
        uwb_noise = RangeNoiseModel(
            sigma=_number(noise_data.get('sigma_m', 0.05), 'uwb_noise.sigma_m'),
            dropout_p=_number(noise_data.get('dropout_p', 0.0), 'uwb_noise.dropout_p'),
            nlos_bias=_number(noise_data.get('nlos_bias_m', 0.3), 'uwb_noise.nlos_bias_m'),
            nlos_p=_number(noise_data.get('nlos_p', 0.0), 'uwb_noise.nlos_p'),
        )

        policy = data.get('profile_policy', 'roi')
        if policy not in PROFILE_POLICIES:
            raise ConfigurationError('profile_policy', f'must be one of {PROFILE_POLICIES}')
        latency_mode = data.get('latency_mode', 'simulated')
        if latency_mode not in LATENCY_MODES:
            raise ConfigurationError('latency_mode', f'must be one of {LATENCY_MODES}')

        roi = data.get('roi') or {}
        fov = data.get('field_of_view_m')
        if fov is not None:
            if not isinstance(fov, list) or len(fov) != 4:
                raise ConfigurationError('field_of_view_m', 'expected [xmin, ymin, xmax, ymax]')
            fov = tuple(_number(v, 'field_of_view_m') for v in fov)

        seed = data['seed']
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigurationError('seed', f'expected an integer, got {seed!r}')

        return PipelineConfig(
            seed=seed,
            stages=stages,
            network_models=network_models,
            network_profile=network_profile,
            profiles=profiles,
            ttc_threshold_s=ttc,
            danger_distance_px=danger_px,
            px_per_meter=_number(px_override, 'thresholds.px_per_meter') if px_override is not None else None,
            schedule=schedule,
            anchors=parse_anchor_list(data['anchors']),
            predictor=predictor,
            uwb_noise=uwb_noise,
            intersection=str(data.get('intersection', Config.DEFAULT_INTERSECTION)),
            profile_policy=policy,
            roi_ttl_s=_number(roi.get('ttl_s', 2.0), 'roi.ttl_s'),
            hysteresis_s=_number(roi.get('hysteresis_s', 0.0), 'roi.hysteresis_s'),
            assessment_margin_m=_number(roi.get('assessment_margin_m', 5.0), 'roi.assessment_margin_m'),
            latency_mode=latency_mode,
            start_epoch_ms=int(data.get('start_epoch_ms', 1_700_000_000_000)),
            warning_cooldown_s=_number(data.get('warning_cooldown_s', 1.0), 'warning_cooldown_s'),
            field_of_view=fov,
            raw=copy.deepcopy(data),
        )
    except ConfigurationError:
        raise
    except ValidationError as e:
        raise ConfigurationError(e.field, e.message) from e
    except DegenerateGeometryError as e:
        raise ConfigurationError('anchors', str(e)) from e


def load_pipeline_config(path: str) -> PipelineConfig:
    """Load and validate a pipeline config JSON file"""
    try:
        with open(path, 'rb') as f:
            data = json.loads(f.read().decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f'Malformed pipeline config {path}: {e}')
    return parse_pipeline_config(data)


def canonical_config_bytes(data: Dict[str, Any]) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(',', ':')).encode('utf-8')


def config_hash(data: Dict[str, Any]) -> str:
    """Deterministic digest over the canonical config bytes"""
    return hashlib.sha256(canonical_config_bytes(data)).hexdigest()


def mqtt_url(cfg: Optional[type] = None) -> Optional[str]:
    cfg = cfg or get_config()
    return os.environ.get('DT_MQTT_URL') or cfg.MQTT_URL
