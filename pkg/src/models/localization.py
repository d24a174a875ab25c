"""
Localization Models
UWB anchors, range readings, position fixes and the TDMA schedule
"""

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from src.utils.exceptions import (
    DegenerateGeometryError, DuplicateUserError, NonPositiveSlotError, ValidationError,
)

# Smallest triangle area (m^2) accepted as non-collinear
COLLINEAR_AREA_TOL = 1e-6


def triangle_area(a, b, c) -> float:
    return 0.5 * abs((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def max_triangle_area(points: np.ndarray) -> float:
    """Largest triangle spanned by any three of the points"""
    best = 0.0
    n = len(points)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                best = max(best, triangle_area(points[i], points[j], points[k]))
    return best


@dataclass(frozen=True)
class AnchorSet:
    anchors: Tuple[Tuple[str, Tuple[float, float]], ...]

    def __post_init__(self):
        if len(self.anchors) < 3:
            raise ValidationError('anchors', f'at least 3 anchors required, got {len(self.anchors)}')
        ids = [anchor_id for anchor_id, _ in self.anchors]
        if len(set(ids)) != len(ids):
            raise ValidationError('anchors', 'anchor ids must be unique')
        pts = self.positions
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                if np.allclose(pts[i], pts[j], rtol=0.0, atol=1e-12):
                    raise ValidationError('anchors', f'anchors {ids[i]} and {ids[j]} coincide')
        if max_triangle_area(pts) <= COLLINEAR_AREA_TOL:
            raise DegenerateGeometryError('anchors are collinear')

    @classmethod
    def from_points(cls, points, prefix: str = 'A') -> 'AnchorSet':
        return cls(tuple((f'{prefix}{i}', (float(p[0]), float(p[1]))) for i, p in enumerate(points)))

    @property
    def ids(self) -> Tuple[str, ...]:
        return tuple(anchor_id for anchor_id, _ in self.anchors)

    @property
    def positions(self) -> np.ndarray:
        return np.array([pos for _, pos in self.anchors], dtype=float)

    def position_of(self, anchor_id: str) -> np.ndarray:
        for aid, pos in self.anchors:
            if aid == anchor_id:
                return np.array(pos, dtype=float)
        raise KeyError(anchor_id)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {aid: np.array(pos, dtype=float) for aid, pos in self.anchors}


@dataclass(frozen=True)
class RangeMeasurement:
    anchor_id: str
    distance: float
    timestamp: float
    valid: bool = True

    def __post_init__(self):
        if self.valid and not (self.distance >= 0):
            raise ValidationError('distance', f'valid range must be >= 0, got {self.distance}')


@dataclass(frozen=True)
class RangeNoiseModel:
    sigma: float = 0.05
    dropout_p: float = 0.0
    nlos_bias: float = 0.3
    nlos_p: float = 0.0

    def __post_init__(self):
        if not (self.sigma >= 0):
            raise ValidationError('sigma', f'must be >= 0, got {self.sigma}')
        for name in ('dropout_p', 'nlos_p'):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValidationError(name, f'must be in [0, 1], got {value}')
        if not (self.nlos_bias >= 0):
            raise ValidationError('nlos_bias', f'must be >= 0, got {self.nlos_bias}')

    @classmethod
    def noiseless(cls) -> 'RangeNoiseModel':
        return cls(sigma=0.0, dropout_p=0.0, nlos_bias=0.0, nlos_p=0.0)


@dataclass(frozen=True)
class PositionEstimate:
    position: Tuple[float, float]
    residual_rms: float
    n_ranges_used: int
    timestamp: float
    status: str = 'ok'  # 'ok' | 'non_convergence'
    iterations: int = 0

    @property
    def converged(self) -> bool:
        return self.status == 'ok'


@dataclass(frozen=True)
class TdmaSchedule:
    n_users: int
    slot_duration: float
    user_order: Tuple[str, ...]
    dead_time: float = 0.0  # reconnection time at each slot start when N >= 2

    def __post_init__(self):
        if self.n_users < 1 or self.n_users != len(self.user_order):
            raise ValidationError('user_order', 'schedule needs N >= 1 users matching user_order')
        if len(set(self.user_order)) != len(self.user_order):
            raise DuplicateUserError('user_order', 'duplicate user in schedule')
        if not (self.slot_duration > 0) or not math.isfinite(self.slot_duration):
            raise NonPositiveSlotError('slot_duration_s', f'must be > 0, got {self.slot_duration}')
        if not (0.0 <= self.dead_time < self.slot_duration):
            raise ValidationError('slot_dead_time_s', 'dead time must lie in [0, slot duration)')

    @property
    def cycle_length(self) -> float:
        return self.n_users * self.slot_duration

    @property
    def effective_dead_time(self) -> float:
        return self.dead_time if self.n_users > 1 else 0.0


@dataclass(frozen=True)
class TrackFix:
    user: str
    position: Tuple[float, float]
    timestamp: float


@dataclass(frozen=True)
class BenchmarkRow:
    scenario_label: str
    mean_error: float
    std_error: float
    measure_frequency: float
    n_samples: int = 0
