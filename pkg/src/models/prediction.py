# Trajectory prediction models
from dataclasses import dataclass
from typing import Optional, Protocol, Tuple

import numpy as np

from src.utils.exceptions import ValidationError


@dataclass(frozen=True, eq=False)
class KfState:
    """Constant-velocity state [x, y, vx, vy] with its 4x4 covariance"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(4)
        cov = np.asarray(self.covariance, dtype=float).reshape(4, 4)
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', cov)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[2:]


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    agent: str
    start_time: float
    dt: float
    points: np.ndarray  # (horizon, 2); row k-1 is the position at start_time + k*dt

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValidationError('points', 'predicted trajectory must be non-empty')
        if not (self.dt > 0):
            raise ValidationError('dt', f'must be > 0, got {self.dt}')
        object.__setattr__(self, 'points', pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.dt * np.arange(1, len(self.points) + 1)


@dataclass(frozen=True)
class PredictionMetrics:
    ade: float
    fde: float
    n_samples: int


class TrajectoryPredictor(Protocol):
    """Anything that turns a track history into a predicted trajectory.

    The Kalman predictor is the built-in implementation; learned predictors
    plug in here by implementing the same three methods.
    """

    name: str

    def observe(self, agent: str, kind: str, time: float, position) -> None:
        ...

    def advance(self, time: float) -> None:
        ...

    def predict(self, agent: str, time: float) -> Optional[PredictedTrajectory]:
        ...


@dataclass(frozen=True)
class KalmanTuning:
    accel_sigma_pedestrian: float = 0.5
    accel_sigma_vehicle: float = 1.5
    measurement_sigma: float = 0.1
    horizon_s: float = 3.0
    dt_s: float = 0.1
    track_timeout_s: float = 1.0
    initial_variances: Tuple[float, float, float, float] = (1.0, 1.0, 4.0, 4.0)

    @property
    def horizon_steps(self) -> int:
        return max(1, int(round(self.horizon_s / self.dt_s)))

    def accel_sigma_for(self, kind: str) -> float:
        return self.accel_sigma_pedestrian if kind == 'pedestrian' else self.accel_sigma_vehicle
