# TDMA Service: cyclic multi-user ranging schedule and between-fix interpolation
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.models.localization import (
    AnchorSet, BenchmarkRow, RangeNoiseModel, TdmaSchedule, TrackFix,
)
from src.models.world import AgentTrack, Scenario
from src.services import simulation_service, uwb_service
from src.utils.exceptions import (
    IdenticalTimestampsError, SingleFixError, ValidationError,
)
from src.utils.seeding import make_rng

logger = logging.getLogger(__name__)

# Fix period that puts a single user at 10 Hz
DEFAULT_FIX_PERIOD = 0.1
# Two-user defaults giving one fix per 10/3 s per user (about 0.3 Hz)
TWO_USER_SLOT = 5.0 / 3.0
TWO_USER_DEAD_TIME = 1.6

_EPS = 1e-9


def build_schedule(users: Sequence[str], slot_duration: float, dead_time: float = 0.0) -> TdmaSchedule:
    """Round-robin schedule over `users` in the given order"""
    users = tuple(users)
    if not users:
        raise ValidationError('user_order', 'schedule needs at least one user')
    return TdmaSchedule(n_users=len(users), slot_duration=float(slot_duration),
                        user_order=users, dead_time=float(dead_time))


def slot_index(schedule: TdmaSchedule, time: float) -> int:
    # Half-open slots; an exact boundary belongs to the next slot
    return int(math.floor(time / schedule.slot_duration + 1e-12))


def active_user(schedule: TdmaSchedule, time: float) -> str:
    if time < 0:
        raise ValidationError('time', f'must be >= 0, got {time}')
    return schedule.user_order[slot_index(schedule, time) % schedule.n_users]


def interpolate_position(fixes: Sequence[TrackFix], query_time: float) -> np.ndarray:
    """Constant-velocity propagation from the two most recent fixes"""
    if len(fixes) < 2:
        raise SingleFixError('two fixes are needed to estimate velocity; hold the last position instead')
    first, second = fixes[-2], fixes[-1]
    span = second.timestamp - first.timestamp
    if span == 0:
        raise IdenticalTimestampsError(f'fixes share timestamp {second.timestamp}')
    p1 = np.asarray(first.position, dtype=float)
    p2 = np.asarray(second.position, dtype=float)
    velocity = (p2 - p1) / span
    return p2 + velocity * (query_time - second.timestamp)


def fix_times(schedule: TdmaSchedule, user: str, duration: float,
              fix_period: float = DEFAULT_FIX_PERIOD) -> np.ndarray:
    """Times at which `user` completes a ranging fix during [0, duration]"""
    if not (fix_period > 0):
        raise ValidationError('fix_period_s', f'must be > 0, got {fix_period}')
    if user not in schedule.user_order:
        raise ValidationError('user_order', f'user {user!r} not in schedule')
    T = schedule.slot_duration
    dead = schedule.effective_dead_time
    per_slot = max(1, int(math.ceil((T - dead) / fix_period - _EPS)))
    offset = schedule.user_order.index(user)
    times = []
    slot = offset
    while slot * T <= duration + _EPS:
        start = slot * T
        for j in range(per_slot):
            t = start + dead + j * fix_period
            if t > duration + _EPS:
                break
            times.append(t)
        slot += schedule.n_users
    return np.array(times, dtype=float)


def _estimated_track(user: str, kind: str, fixes: List[TrackFix], tick_times: np.ndarray) -> Optional[AgentTrack]:
    if not fixes:
        return None
    fix_t = np.array([f.timestamp for f in fixes])
    times, points = [], []
    for t in tick_times:
        n_known = int(np.searchsorted(fix_t, t + _EPS, side='right'))
        if n_known == 0:
            continue
        if n_known == 1:
            position = np.asarray(fixes[0].position, dtype=float)
        else:
            position = interpolate_position(fixes[n_known - 2:n_known], t)
        times.append(t)
        points.append(position)
    if not times:
        return None
    return AgentTrack(agent=user, kind=kind, times=np.array(times), positions=np.array(points))


def run_scheduled_localization(scenario: Scenario, anchors: AnchorSet, noise: RangeNoiseModel,
                               schedule: TdmaSchedule, fix_period: float = DEFAULT_FIX_PERIOD,
                               rng_seed: int = 0, truth: Optional[Dict[str, AgentTrack]] = None,
                               with_fixes: bool = False):
    """Estimated track per scheduled user, sampled at the scenario tick.

    Ranging draws come from one generator consumed in global fix-time order,
    so the result depends only on (scenario, schedule, noise, rng_seed).
    """
    agents = scenario.agents_by_id()
    for user in schedule.user_order:
        if user not in agents:
            raise ValidationError('user_order', f'scheduled user {user!r} is not in the scenario')
    if truth is None:
        truth = simulation_service.tracks_from_run(simulation_service.run_scenario(scenario), scenario)

    planned = sorted(
        (t, user) for user in schedule.user_order
        for t in fix_times(schedule, user, scenario.duration, fix_period)
    )
    rng = make_rng(rng_seed, 'uwb')
    fixes: Dict[str, List[TrackFix]] = {user: [] for user in schedule.user_order}
    for t, user in planned:
        estimate = uwb_service.locate(truth[user].position_at(t), anchors, noise, rng, timestamp=t)
        if estimate is None:
            continue
        fixes[user].append(TrackFix(user, estimate.position, t))

    tick_times = np.arange(scenario.n_ticks + 1) * scenario.dt
    tracks = {}
    for user in schedule.user_order:
        track = _estimated_track(user, agents[user].kind, fixes[user], tick_times)
        if track is not None:
            tracks[user] = track
        logger.debug(f"User {user}: {len(fixes[user])} fixes over {scenario.duration:.1f} s")
    if with_fixes:
        return tracks, fixes
    return tracks


def fix_frequency(fixes: Sequence[TrackFix], duration: float) -> float:
    """Achieved position fixes per second"""
    if len(fixes) >= 2:
        span = fixes[-1].timestamp - fixes[0].timestamp
        if span > 0:
            return (len(fixes) - 1) / span
    return len(fixes) / duration if duration > 0 else 0.0


def accuracy_benchmark(scenario: Scenario, anchors: AnchorSet, noise: RangeNoiseModel,
                       schedule: TdmaSchedule, rng_seed: int = 0,
                       fix_period: float = DEFAULT_FIX_PERIOD, label: Optional[str] = None) -> BenchmarkRow:
    """Mean/std localization error over every sampled tick and the per-user fix rate"""
    if not any(scenario.agent(u).kind == 'pedestrian' for u in schedule.user_order if u in scenario.agents_by_id()):
        raise ValidationError('user_order', 'benchmark needs at least one tagged pedestrian')
    truth = simulation_service.tracks_from_run(simulation_service.run_scenario(scenario), scenario)
    tracks, fixes = run_scheduled_localization(scenario, anchors, noise, schedule, fix_period,
                                               rng_seed, truth=truth, with_fixes=True)
    errors = []
    frequencies = []
    for user in schedule.user_order:
        frequencies.append(fix_frequency(fixes[user], scenario.duration))
        track = tracks.get(user)
        if track is None:
            continue
        true_positions = np.array([truth[user].position_at(t) for t in track.times])
        errors.extend(np.hypot(*(track.positions - true_positions).T))
    label = label or f'{schedule.n_users}-user'
    row = uwb_service.summarize_errors(label, errors, float(np.mean(frequencies)))
    logger.info(f"UWB benchmark {label}: {row.mean_error * 100:.3f} +/- {row.std_error * 100:.3f} cm "
                f"at {row.measure_frequency:.2f} Hz")
    return row
