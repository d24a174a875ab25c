"""
World Models
Agents, scenarios and simulator snapshots for the intersection twin
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.utils.exceptions import ValidationError

AGENT_KINDS = ('pedestrian', 'vehicle', 'scooter')
HAZARD_KINDS = ('vehicle', 'scooter')

# Collision footprint radii in meters
DEFAULT_RADII = {
    'pedestrian': 0.3,
    'vehicle': 1.0,
    'scooter': 0.5,
}

DEFAULT_PX_PER_METER = 20.0

Vec2 = Tuple[float, float]


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    speed: float  # m/s on the leg departing this waypoint

    @property
    def position(self) -> Vec2:
        return (self.x, self.y)


@dataclass(frozen=True)
class Agent:
    id: str
    kind: str
    radius: float
    waypoints: Tuple[Waypoint, ...]

    def __post_init__(self):
        if not self.id:
            raise ValidationError('id', 'agent id must be non-empty')
        if self.kind not in AGENT_KINDS:
            raise ValidationError('kind', f"unknown agent kind '{self.kind}'")
        if not (self.radius > 0):
            raise ValidationError('radius', f'must be > 0, got {self.radius}')
        if not self.waypoints:
            raise ValidationError('waypoints', 'waypoint list must be non-empty')
        for wp in self.waypoints:
            if not (wp.speed >= 0):
                raise ValidationError('speed', f'waypoint speed must be >= 0, got {wp.speed}')
            if not (math.isfinite(wp.x) and math.isfinite(wp.y)):
                raise ValidationError('waypoints', 'waypoint coordinates must be finite')

    @property
    def max_speed(self) -> float:
        return max(wp.speed for wp in self.waypoints)

    @property
    def is_hazard(self) -> bool:
        return self.kind in HAZARD_KINDS


@dataclass(frozen=True)
class Scenario:
    seed: int
    duration: float
    dt: float
    agents: Tuple[Agent, ...]
    px_per_meter: float = DEFAULT_PX_PER_METER

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValidationError('dt_s', f'must be > 0, got {self.dt}')
        if not (self.duration >= self.dt):
            raise ValidationError('duration_s', f'must be >= dt ({self.dt}), got {self.duration}')
        if not (self.px_per_meter > 0):
            raise ValidationError('px_per_meter', f'must be > 0, got {self.px_per_meter}')
        ids = [agent.id for agent in self.agents]
        if len(set(ids)) != len(ids):
            raise ValidationError('agents', 'agent ids must be unique')

    @property
    def n_ticks(self) -> int:
        """Number of steps in the run"""
        return int(math.floor(self.duration / self.dt + 1e-9))

    def agent(self, agent_id: str) -> Agent:
        for agent in self.agents:
            if agent.id == agent_id:
                return agent
        raise KeyError(agent_id)

    def agents_by_id(self) -> Dict[str, Agent]:
        return {agent.id: agent for agent in self.agents}


@dataclass(frozen=True)
class AgentState:
    id: str
    position: Vec2
    velocity: Vec2
    leg: int  # index of the waypoint being approached


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot; time is always tick * dt"""
    tick: int
    dt: float
    agents: Tuple[AgentState, ...]

    @property
    def time(self) -> float:
        return self.tick * self.dt

    def positions(self) -> Dict[str, Vec2]:
        return {a.id: a.position for a in self.agents}


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    agent_a: str
    agent_b: str


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """Timestamped trajectory of one agent (ground truth or estimate)"""
    agent: str
    kind: str
    times: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.times)

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def position_at(self, t: float) -> np.ndarray:
        """Linear interpolation between samples; clamps outside the covered span"""
        x = np.interp(t, self.times, self.positions[:, 0])
        y = np.interp(t, self.times, self.positions[:, 1])
        return np.array([x, y])

    def nearest_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t))
        if idx <= 0:
            return 0
        if idx >= len(self.times):
            return len(self.times) - 1
        before, after = self.times[idx - 1], self.times[idx]
        return idx - 1 if (t - before) <= (after - t) else idx


def canonical_pair(a: str, b: str) -> Tuple[str, str]:
    return (a, b) if a <= b else (b, a)
