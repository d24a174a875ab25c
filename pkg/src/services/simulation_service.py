# Simulation Service for the Intersection Safety Twin
import json
import logging
import math
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from src.models.world import (
    AGENT_KINDS, DEFAULT_PX_PER_METER, DEFAULT_RADII, Agent, AgentState, AgentTrack,
    CollisionEvent, Scenario, Waypoint, WorldState, canonical_pair,
)
from src.utils.exceptions import ParseError, ValidationError
from src.utils.seeding import make_rng

logger = logging.getLogger(__name__)

# Intersection box half-width (m) and lane geometry used by the generator
BOX_HALF = 10.0
LANE_OFFSET = 2.0
CROSSWALK_OFFSET = 8.0
EXIT_MARGIN = 30.0
PEDESTRIAN_SPEED = (1.0, 1.8)
VEHICLE_SPEED = (5.0, 14.0)

SCENARIO_KEYS = ('seed', 'duration_s', 'dt_s', 'px_per_meter', 'agents')
AGENT_KEYS = ('id', 'kind', 'radius_m', 'waypoints')
WAYPOINT_KEYS = ('x_m', 'y_m', 'speed_mps')
TRAJECTORY_COLUMNS = ['t_s', 'agent_id', 'x_m', 'y_m', 'vx_mps', 'vy_mps']


# Scenario files

def _field(obj, key: str, path: str):
    if not isinstance(obj, dict):
        raise ValidationError(path or 'scenario', 'expected an object')
    if key not in obj:
        raise ValidationError(f'{path}.{key}' if path else key, 'missing required field')
    return obj[key]


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(path, f'expected a number, got {value!r}')
    return float(value)


def _check_keys(obj: Dict, allowed: Tuple[str, ...], path: str):
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ValidationError(f'{path}.{extra[0]}' if path else extra[0], 'unknown field')


def scenario_from_dict(data) -> Scenario:
    """Validate a parsed scenario document"""
    if not isinstance(data, dict):
        raise ValidationError('scenario', 'expected a JSON object')
    _check_keys(data, SCENARIO_KEYS, '')
    seed = _field(data, 'seed', '')
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValidationError('seed', f'expected an integer, got {seed!r}')

    agents_data = _field(data, 'agents', '')
    if not isinstance(agents_data, list):
        raise ValidationError('agents', 'expected a list')

    agents = []
    for i, item in enumerate(agents_data):
        path = f'agents[{i}]'
        _check_keys(item if isinstance(item, dict) else {}, AGENT_KEYS, path)
        kind = _field(item, 'kind', path)
        if kind not in AGENT_KINDS:
            raise ValidationError(f'{path}.kind', f"unknown agent kind '{kind}'")
        wps_data = _field(item, 'waypoints', path)
        if not isinstance(wps_data, list):
            raise ValidationError(f'{path}.waypoints', 'expected a list')
        waypoints = []
        for j, wp in enumerate(wps_data):
            wp_path = f'{path}.waypoints[{j}]'
            _check_keys(wp if isinstance(wp, dict) else {}, WAYPOINT_KEYS, wp_path)
            waypoints.append(Waypoint(
                x=_num(_field(wp, 'x_m', wp_path), f'{wp_path}.x_m'),
                y=_num(_field(wp, 'y_m', wp_path), f'{wp_path}.y_m'),
                speed=_num(_field(wp, 'speed_mps', wp_path), f'{wp_path}.speed_mps'),
            ))
        try:
            agents.append(Agent(
                id=str(_field(item, 'id', path)),
                kind=kind,
                radius=_num(_field(item, 'radius_m', path), f'{path}.radius_m'),
                waypoints=tuple(waypoints),
            ))
        except ValidationError as e:
            raise ValidationError(f'{path}.{e.field}', e.message) from e

    return Scenario(
        seed=seed,
        duration=_num(_field(data, 'duration_s', ''), 'duration_s'),
        dt=_num(_field(data, 'dt_s', ''), 'dt_s'),
        px_per_meter=_num(_field(data, 'px_per_meter', ''), 'px_per_meter'),
        agents=tuple(agents),
    )


def load_scenario(text) -> Scenario:
    """Parse scenario bytes/text; ParseError on malformed JSON, ValidationError on invariants"""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode('utf-8')
        except UnicodeDecodeError as e:
            raise ParseError(f'Scenario is not valid UTF-8: {e}')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f'Malformed scenario JSON at line {e.lineno} column {e.colno}: {e.msg}')
    scenario = scenario_from_dict(data)
    logger.debug(f"Loaded scenario seed={scenario.seed} with {len(scenario.agents)} agents")
    return scenario


def load_scenario_file(path: str) -> Scenario:
    with open(path, 'rb') as f:
        return load_scenario(f.read())


def scenario_to_dict(scenario: Scenario) -> Dict:
    return {
        'seed': scenario.seed,
        'duration_s': scenario.duration,
        'dt_s': scenario.dt,
        'px_per_meter': scenario.px_per_meter,
        'agents': [
            {
                'id': agent.id,
                'kind': agent.kind,
                'radius_m': agent.radius,
                'waypoints': [
                    {'x_m': wp.x, 'y_m': wp.y, 'speed_mps': wp.speed}
                    for wp in agent.waypoints
                ],
            }
            for agent in scenario.agents
        ],
    }


def dump_scenario(scenario: Scenario) -> bytes:
    """Canonical scenario bytes; dump(load(dump(s))) == dump(s)"""
    return (json.dumps(scenario_to_dict(scenario), indent=2, ensure_ascii=False) + '\n').encode('utf-8')


def save_scenario(scenario: Scenario, path: str):
    with open(path, 'wb') as f:
        f.write(dump_scenario(scenario))
    logger.info(f"Scenario with {len(scenario.agents)} agents written to {path}")


# Kinematics

def _leg_velocity(agent: Agent, position: np.ndarray, leg: int) -> Tuple[float, float]:
    if leg >= len(agent.waypoints):
        return (0.0, 0.0)
    target = np.array(agent.waypoints[leg].position)
    delta = target - position
    dist = float(np.hypot(delta[0], delta[1]))
    speed = agent.waypoints[leg - 1].speed
    if dist == 0.0 or speed == 0.0:
        return (0.0, 0.0)
    return (float(delta[0] / dist * speed), float(delta[1] / dist * speed))


def initial_state(scenario: Scenario) -> WorldState:
    """All agents at their first waypoint, heading to the second"""
    agents = []
    for agent in scenario.agents:
        start = np.array(agent.waypoints[0].position, dtype=float)
        leg = 1
        velocity = _leg_velocity(agent, start, leg)
        agents.append(AgentState(agent.id, (float(start[0]), float(start[1])), velocity, leg))
    return WorldState(tick=0, dt=scenario.dt, agents=tuple(agents))


def _advance_agent(agent: Agent, state: AgentState, dt: float) -> AgentState:
    position = np.array(state.position, dtype=float)
    leg = state.leg
    remaining = dt
    n_wp = len(agent.waypoints)
    while remaining > 0.0 and leg < n_wp:
        speed = agent.waypoints[leg - 1].speed
        target = np.array(agent.waypoints[leg].position, dtype=float)
        delta = target - position
        dist = float(np.hypot(delta[0], delta[1]))
        if dist == 0.0:
            leg += 1
            continue
        if speed == 0.0:
            break
        reach = speed * remaining
        if reach >= dist:
            # Snap to the waypoint and carry the leftover time into the next leg
            position = target
            remaining -= dist / speed
            leg += 1
        else:
            position = position + delta / dist * reach
            remaining = 0.0
    velocity = _leg_velocity(agent, position, leg)
    return AgentState(state.id, (float(position[0]), float(position[1])), velocity, leg)


def step(state: WorldState, scenario: Scenario) -> WorldState:
    """Advance every agent one tick from the same pre-tick snapshot"""
    if state.tick >= scenario.n_ticks:
        return state
    by_id = scenario.agents_by_id()
    agents = tuple(_advance_agent(by_id[a.id], a, scenario.dt) for a in state.agents)
    return WorldState(tick=state.tick + 1, dt=scenario.dt, agents=agents)


def run_scenario(scenario: Scenario) -> List[WorldState]:
    """Snapshots for ticks 0..n_ticks inclusive"""
    state = initial_state(scenario)
    run = [state]
    for _ in range(scenario.n_ticks):
        state = step(state, scenario)
        run.append(state)
    logger.info(f"Simulated {len(run)} ticks for {len(scenario.agents)} agents")
    return run


def detect_collisions(run: Sequence[WorldState], scenario: Scenario) -> List[CollisionEvent]:
    """One event per pair per contiguous contact interval"""
    if not run or not scenario.agents:
        return []
    ids = [a.id for a in run[0].agents]
    radii_by_id = {agent.id: agent.radius for agent in scenario.agents}
    radii = np.array([radii_by_id[i] for i in ids])
    reach = radii[:, None] + radii[None, :]
    upper = np.triu(np.ones((len(ids), len(ids)), dtype=bool), k=1)

    events = []
    in_contact = np.zeros_like(upper)
    for state in run:
        pos = np.array([a.position for a in state.agents], dtype=float)
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        contact = (dist < reach) & upper
        started = contact & ~in_contact
        for i, j in zip(*np.nonzero(started)):
            a, b = canonical_pair(ids[i], ids[j])
            events.append(CollisionEvent(time=state.time, agent_a=a, agent_b=b))
        in_contact = contact
    events.sort(key=lambda e: (e.time, e.agent_a, e.agent_b))
    logger.info(f"Detected {len(events)} collision events")
    return events


def tracks_from_run(run: Sequence[WorldState], scenario: Scenario) -> Dict[str, AgentTrack]:
    """Ground-truth track per agent"""
    kinds = {agent.id: agent.kind for agent in scenario.agents}
    times = np.array([s.time for s in run])
    positions = np.array([[a.position for a in s.agents] for s in run], dtype=float)
    velocities = np.array([[a.velocity for a in s.agents] for s in run], dtype=float)
    tracks = {}
    for idx, agent_state in enumerate(run[0].agents if run else ()):
        tracks[agent_state.id] = AgentTrack(
            agent=agent_state.id,
            kind=kinds[agent_state.id],
            times=times,
            positions=positions[:, idx, :],
            velocities=velocities[:, idx, :],
        )
    return tracks


def trajectory_frame(run: Sequence[WorldState]) -> pd.DataFrame:
    rows = [
        (s.time, a.id, a.position[0], a.position[1], a.velocity[0], a.velocity[1])
        for s in run for a in s.agents
    ]
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def write_trajectory_csv(run: Sequence[WorldState], path: str):
    trajectory_frame(run).to_csv(path, index=False, float_format='%.6f')
    logger.info(f"Trajectory dump written to {path}")


# Scenario generation

def _pedestrian_path(rng: np.random.Generator, duration: float) -> Tuple[List[Tuple[float, float]], float]:
    """Approach, crosswalk start, crosswalk end and exit, all on one crosswalk line"""
    speed = float(rng.uniform(*PEDESTRIAN_SPEED))
    crosswalk = int(rng.integers(4))
    direction = 1.0 if rng.random() < 0.5 else -1.0
    lateral = CROSSWALK_OFFSET * (1.0 if crosswalk % 2 == 0 else -1.0) + float(rng.uniform(-1.0, 1.0))
    crossing_time = 2 * BOX_HALF / speed
    arrival = float(rng.uniform(0.0, max(duration - crossing_time, 0.0)))
    approach = arrival * speed
    tail = EXIT_MARGIN + float(rng.uniform(0.0, 20.0))
    along = [-BOX_HALF - approach, -BOX_HALF, BOX_HALF, BOX_HALF + tail]
    along = [direction * a for a in along]
    if crosswalk < 2:
        # Crosses the east-west road, walking along y
        points = [(lateral, a) for a in along]
    else:
        points = [(a, lateral) for a in along]
    return points, speed


def _vehicle_path(rng: np.random.Generator, duration: float) -> Tuple[List[Tuple[float, float]], float]:
    """Straight through-lane traversal; entry delay becomes extra approach distance"""
    speed = float(rng.uniform(*VEHICLE_SPEED))
    lane = int(rng.integers(4))
    entry = float(rng.uniform(0.0, duration))
    approach = entry * speed
    tail = EXIT_MARGIN + float(rng.uniform(0.0, 200.0))
    along = [-BOX_HALF - approach, -BOX_HALF, BOX_HALF, BOX_HALF + tail]
    if lane == 0:      # eastbound
        points = [(a, -LANE_OFFSET) for a in along]
    elif lane == 1:    # westbound
        points = [(-a, LANE_OFFSET) for a in along]
    elif lane == 2:    # northbound
        points = [(LANE_OFFSET, a) for a in along]
    else:              # southbound
        points = [(-LANE_OFFSET, -a) for a in along]
    return points, speed


def _round(value: float) -> float:
    return round(value, 4)


def generate_random_scenario(seed: int, n_pedestrians: int, n_vehicles: int, duration: float,
                             dt: float = 0.1, px_per_meter: float = DEFAULT_PX_PER_METER) -> Scenario:
    """Deterministic random crossing traffic for a 20 m x 20 m intersection box"""
    if n_pedestrians < 0 or n_vehicles < 0:
        raise ValidationError('counts', 'agent counts must be >= 0')
    rng = make_rng(seed, 'scenario')
    agents = []
    for i in range(n_pedestrians):
        points, speed = _pedestrian_path(rng, duration)
        agents.append(Agent(
            id=f'ped-{i:03d}',
            kind='pedestrian',
            radius=DEFAULT_RADII['pedestrian'],
            waypoints=tuple(Waypoint(_round(x), _round(y), _round(speed)) for x, y in points),
        ))
    for i in range(n_vehicles):
        points, speed = _vehicle_path(rng, duration)
        agents.append(Agent(
            id=f'veh-{i:03d}',
            kind='vehicle',
            radius=DEFAULT_RADII['vehicle'],
            waypoints=tuple(Waypoint(_round(x), _round(y), _round(speed)) for x, y in points),
        ))
    logger.info(f"Generated scenario seed={seed}: {n_pedestrians} pedestrians, {n_vehicles} vehicles")
    return Scenario(seed=seed, duration=float(duration), dt=float(dt), agents=tuple(agents),
                    px_per_meter=float(px_per_meter))


def build_headon_scenario(vehicle_speed: float = 5.0, start_distance: float = 20.0,
                          duration: float = 8.0, dt: float = 0.1) -> Scenario:
    """A vehicle driving head-on at a stationary pedestrian"""
    pedestrian = Agent('ped-000', 'pedestrian', DEFAULT_RADII['pedestrian'], (Waypoint(0.0, 0.0, 0.0),))
    vehicle = Agent('veh-000', 'vehicle', DEFAULT_RADII['vehicle'], (
        Waypoint(start_distance, 0.0, vehicle_speed),
        Waypoint(-start_distance, 0.0, vehicle_speed),
    ))
    return Scenario(seed=0, duration=duration, dt=dt, agents=(pedestrian, vehicle))
