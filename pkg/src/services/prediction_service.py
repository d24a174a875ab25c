# Prediction Service: constant-velocity Kalman tracking and trajectory forecasts
import logging
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import predict as kf_predict_step
from filterpy.kalman import update as kf_update_step

from src.models.prediction import (
    KalmanTuning, KfState, PredictedTrajectory, PredictionMetrics,
)
from src.models.world import AgentTrack
from src.utils.exceptions import CoverageError, ValidationError

logger = logging.getLogger(__name__)

H = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])

METRICS_COLUMNS = ['predictor', 'ade_m', 'fde_m', 'n_samples']


def transition_matrix(dt: float) -> np.ndarray:
    return np.array([
        [1.0, 0.0,  dt, 0.0],
        [0.0, 1.0, 0.0,  dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


def process_noise(dt: float, accel_sigma: float) -> np.ndarray:
    """Discrete white-acceleration Q for state order [x, y, vx, vy]"""
    if accel_sigma == 0:
        return np.zeros((4, 4))
    return Q_discrete_white_noise(dim=2, dt=dt, var=accel_sigma ** 2, block_size=2, order_by_dim=False)


def _symmetric(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def kf_predict(state: KfState, dt: float, process_noise_accel_sigma: float) -> KfState:
    if not (dt > 0):
        raise ValidationError('dt', f'must be > 0, got {dt}')
    x, P = kf_predict_step(state.mean.copy(), state.covariance.copy(),
                           F=transition_matrix(dt), Q=process_noise(dt, process_noise_accel_sigma))
    return KfState(x, _symmetric(P))


def kf_update(state: KfState, measurement, measurement_noise_sigma: float) -> KfState:
    z = np.asarray(measurement, dtype=float).reshape(2)
    if not np.all(np.isfinite(z)):
        raise ValidationError('measurement', 'measurement must be finite')
    if not (measurement_noise_sigma > 0):
        raise ValidationError('measurement_sigma', f'must be > 0, got {measurement_noise_sigma}')
    R = np.eye(2) * measurement_noise_sigma ** 2
    x, P = kf_update_step(state.mean.copy(), state.covariance.copy(), z, R, H)
    return KfState(np.asarray(x).reshape(4), _symmetric(P))


def initial_state(first, second, dt: float, variances: Sequence[float] = (1.0, 1.0, 4.0, 4.0)) -> KfState:
    """Bootstrap from two fixes; velocity by finite difference"""
    p1 = np.asarray(first, dtype=float)
    p2 = np.asarray(second, dtype=float)
    velocity = (p2 - p1) / dt if dt > 0 else np.zeros(2)
    return KfState(np.concatenate([p2, velocity]), np.diag(np.asarray(variances, dtype=float)))


def predict_trajectory(state: KfState, horizon_steps: int, dt: float, agent: str = '',
                       start_time: float = 0.0) -> PredictedTrajectory:
    """Mean positions of repeated constant-velocity predicts with no further measurements"""
    if horizon_steps < 1:
        raise ValidationError('horizon_steps', f'must be >= 1, got {horizon_steps}')
    steps = np.arange(1, horizon_steps + 1)[:, None] * dt
    points = state.position[None, :] + steps * state.velocity[None, :]
    return PredictedTrajectory(agent=agent, start_time=start_time, dt=dt, points=points)


def evaluate_ade_fde(predicted: PredictedTrajectory, truth: AgentTrack) -> PredictionMetrics:
    """Displacement errors against ground truth at nearest-tick alignment"""
    times = predicted.times
    tolerance = 0.5 * predicted.dt
    if len(truth) == 0 or times[0] < truth.start_time - tolerance or times[-1] > truth.end_time + tolerance:
        raise CoverageError(
            f'truth for {truth.agent} covers [{truth.start_time if len(truth) else 0:.2f}, '
            f'{truth.end_time if len(truth) else 0:.2f}] but prediction needs [{times[0]:.2f}, {times[-1]:.2f}]'
        )
    idx = [truth.nearest_index(t) for t in times]
    errors = np.hypot(*(predicted.points - truth.positions[idx]).T)
    return PredictionMetrics(ade=float(np.mean(errors)), fde=float(errors[-1]), n_samples=len(errors))


class KalmanPredictor:
    """Per-agent constant-velocity filters keyed by agent id"""

    name = 'kalman'

    def __init__(self, tuning: Optional[KalmanTuning] = None):
        self.tuning = tuning or KalmanTuning()
        self._states: Dict[str, KfState] = {}
        self._kinds: Dict[str, str] = {}
        self._last_fix: Dict[str, tuple] = {}
        self._state_time: Dict[str, float] = {}

    def observe(self, agent: str, kind: str, time: float, position, sigma: Optional[float] = None):
        """Fold a position fix into the agent's filter"""
        sigma = sigma or self.tuning.measurement_sigma
        self._kinds[agent] = kind
        state = self._states.get(agent)
        if state is None:
            previous = self._last_fix.get(agent)
            if previous is None or time <= previous[0]:
                self._last_fix[agent] = (time, np.asarray(position, dtype=float))
                return
            self._states[agent] = initial_state(previous[1], position, time - previous[0],
                                                self.tuning.initial_variances)
        else:
            elapsed = time - self._state_time[agent]
            if elapsed > 0:
                state = kf_predict(state, elapsed, self.tuning.accel_sigma_for(kind))
            self._states[agent] = kf_update(state, position, sigma)
        self._state_time[agent] = time
        self._last_fix[agent] = (time, np.asarray(position, dtype=float))

    def advance(self, time: float):
        """Drop tracks that have gone unobserved for longer than the timeout"""
        stale = [a for a, (t, _) in self._last_fix.items() if time - t > self.tuning.track_timeout_s]
        for agent in stale:
            logger.debug(f"Dropping stale track {agent}")
            self._states.pop(agent, None)
            self._last_fix.pop(agent, None)
            self._state_time.pop(agent, None)

    def state(self, agent: str) -> Optional[KfState]:
        return self._states.get(agent)

    def state_at(self, agent: str, time: float) -> Optional[KfState]:
        state = self._states.get(agent)
        if state is None:
            return None
        elapsed = time - self._state_time[agent]
        if elapsed > 1e-12:
            state = kf_predict(state, elapsed, self.tuning.accel_sigma_for(self._kinds[agent]))
        return state

    def predict(self, agent: str, time: float) -> Optional[PredictedTrajectory]:
        state = self.state_at(agent, time)
        if state is None:
            return None
        return predict_trajectory(state, self.tuning.horizon_steps, self.tuning.dt_s, agent, time)

    def tracked_agents(self) -> List[str]:
        return sorted(self._states)

    def snapshot(self) -> 'KalmanPredictor':
        """Independent copy; states are immutable so a shallow dict copy suffices"""
        clone = KalmanPredictor(self.tuning)
        clone.restore(self)
        return clone

    def restore(self, other: 'KalmanPredictor'):
        """Roll back to the tracks held by `other`"""
        self._states = dict(other._states)
        self._kinds = dict(other._kinds)
        self._last_fix = dict(other._last_fix)
        self._state_time = dict(other._state_time)


def benchmark_predictor(tracks: Iterable[AgentTrack], tuning: Optional[KalmanTuning] = None,
                        measurement_noise: float = 0.0, rng: Optional[np.random.Generator] = None,
                        warmup_s: float = 1.0, stride: int = 10) -> PredictionMetrics:
    """Average ADE/FDE over rolling forecasts on each track after a warm-up"""
    tuning = tuning or KalmanTuning()
    rng = rng or np.random.default_rng(0)
    ades, fdes = [], []
    for track in tracks:
        predictor = KalmanPredictor(tuning)
        horizon_end = tuning.horizon_steps * tuning.dt_s
        for i, t in enumerate(track.times):
            z = track.positions[i] + (rng.normal(0.0, measurement_noise, 2) if measurement_noise > 0 else 0.0)
            predictor.observe(track.agent, track.kind, float(t), z, sigma=max(measurement_noise, 1e-3))
            if t - track.start_time < warmup_s or i % stride or t + horizon_end > track.end_time:
                continue
            predicted = predictor.predict(track.agent, float(t))
            if predicted is None:
                continue
            metrics = evaluate_ade_fde(predicted, track)
            ades.append(metrics.ade)
            fdes.append(metrics.fde)
    if not ades:
        raise CoverageError('no track long enough to score a full prediction horizon')
    return PredictionMetrics(ade=float(np.mean(ades)), fde=float(np.mean(fdes)), n_samples=len(ades))


def write_metrics_csv(rows: Dict[str, PredictionMetrics], path: str):
    frame = pd.DataFrame(
        [(name, m.ade, m.fde, m.n_samples) for name, m in rows.items()],
        columns=METRICS_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format='%.6f')
    logger.info(f"Prediction metrics written to {path}")
