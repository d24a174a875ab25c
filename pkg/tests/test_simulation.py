#!/usr/bin/env python3
"""
Tests for the scenario simulator
"""

import json
import os
import sys
import tempfile
import unittest

import numpy as np
import pandas as pd
from hypothesis import given, settings, strategies as st

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.models.world import Agent, AgentState, Scenario, Waypoint, WorldState
from src.services import simulation_service as sim
from src.utils.exceptions import ParseError, ValidationError


def _scenario_json(**agent_overrides):
    agent = {
        'id': 'ped-000',
        'kind': 'pedestrian',
        'radius_m': 0.3,
        'waypoints': [{'x_m': 0.0, 'y_m': 0.0, 'speed_mps': 1.2}, {'x_m': 5.0, 'y_m': 0.0, 'speed_mps': 1.2}],
    }
    agent.update(agent_overrides)
    return json.dumps({'seed': 1, 'duration_s': 1.0, 'dt_s': 0.1, 'px_per_meter': 20.0, 'agents': [agent]})


def _single(waypoints, dt=0.5, duration=10.0, kind='pedestrian', radius=0.3):
    agent = Agent('a', kind, radius, tuple(Waypoint(*w) for w in waypoints))
    return Scenario(seed=0, duration=duration, dt=dt, agents=(agent,))


class TestScenarioFiles(unittest.TestCase):

    def test_minimal_file(self):
        scenario = sim.load_scenario(_scenario_json().encode('utf-8'))
        self.assertEqual(len(scenario.agents), 1)
        self.assertEqual(scenario.n_ticks, 10)

    def test_negative_radius_names_field(self):
        with self.assertRaises(ValidationError) as ctx:
            sim.load_scenario(_scenario_json(radius_m=-1))
        self.assertIn('radius', ctx.exception.field)

    def test_unknown_kind_rejected(self):
        with self.assertRaises(ValidationError) as ctx:
            sim.load_scenario(_scenario_json(kind='tram'))
        self.assertIn('kind', ctx.exception.field)

    def test_malformed_json(self):
        with self.assertRaises(ParseError):
            sim.load_scenario(b'{"seed": 1, "agents": [')

    def test_missing_field(self):
        data = json.loads(_scenario_json())
        del data['dt_s']
        with self.assertRaises(ValidationError) as ctx:
            sim.load_scenario(json.dumps(data))
        self.assertEqual(ctx.exception.field, 'dt_s')

    def test_paper_scale_round_trip_is_byte_identical(self):
        for seed in (1, 2, 3):
            scenario = sim.generate_random_scenario(seed, 232, 20, 600.0)
            first = sim.dump_scenario(scenario)
            second = sim.dump_scenario(sim.load_scenario(first))
            self.assertEqual(first, second)


class TestStep(unittest.TestCase):

    def test_straight_line(self):
        scenario = _single([(0, 0, 2.0), (10, 0, 2.0)])
        state = sim.step(sim.initial_state(scenario), scenario)
        np.testing.assert_allclose(state.agents[0].position, (1.0, 0.0), atol=1e-12)
        self.assertAlmostEqual(state.time, 0.5)

    def test_final_waypoint_is_rest_state(self):
        scenario = _single([(3, 4, 1.0)])
        state = sim.initial_state(scenario)
        nxt = sim.step(state, scenario)
        self.assertEqual(nxt.agents[0].position, (3.0, 4.0))
        self.assertEqual(nxt.agents[0].velocity, (0.0, 0.0))

    def test_waypoint_snap_matches_fine_step_oracle(self):
        waypoints = [(9.95, 0, 2.0), (10, 0, 2.0), (10, 10, 2.0)]
        coarse = _single(waypoints, dt=0.5)
        state = sim.step(sim.initial_state(coarse), coarse)
        np.testing.assert_allclose(state.agents[0].position, (10.0, 0.95), atol=1e-9)

        fine = _single(waypoints, dt=1e-4, duration=1.0)
        fine_state = sim.initial_state(fine)
        for _ in range(5000):
            fine_state = sim.step(fine_state, fine)
        np.testing.assert_allclose(state.agents[0].position, fine_state.agents[0].position, atol=1e-3)

    def test_step_saturates_at_end(self):
        scenario = _single([(0, 0, 1.0), (100, 0, 1.0)], dt=0.5, duration=1.0)
        run = sim.run_scenario(scenario)
        self.assertEqual(len(run), 3)
        last = sim.step(run[-1], scenario)
        self.assertEqual(last.tick, run[-1].tick)

    def test_synchronous_update_is_order_independent(self):
        a = Agent('a', 'pedestrian', 0.3, (Waypoint(0, 0, 1.0), Waypoint(10, 0, 1.0)))
        b = Agent('b', 'vehicle', 1.0, (Waypoint(0, 5, 5.0), Waypoint(50, 5, 5.0)))
        forward = Scenario(0, 5.0, 0.1, (a, b))
        reverse = Scenario(0, 5.0, 0.1, (b, a))
        run_f = sim.run_scenario(forward)[-1].positions()
        run_r = sim.run_scenario(reverse)[-1].positions()
        self.assertEqual(run_f, run_r)


class TestCollisions(unittest.TestCase):

    def _brute_force(self, run, scenario):
        radii = {a.id: a.radius for a in scenario.agents}
        ids = sorted(radii)
        events = []
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                touching = False
                for state in run:
                    pos = state.positions()
                    d = np.hypot(pos[a][0] - pos[b][0], pos[a][1] - pos[b][1])
                    now = d < radii[a] + radii[b]
                    if now and not touching:
                        events.append((state.time, a, b))
                    touching = now
        return sorted(events)

    def test_passing_agents_collide_once(self):
        a = Agent('a', 'pedestrian', 0.3, (Waypoint(-5, 0.05, 1.0), Waypoint(5, 0.05, 1.0)))
        b = Agent('b', 'pedestrian', 0.3, (Waypoint(5, -0.05, 1.0), Waypoint(-5, -0.05, 1.0)))
        scenario = Scenario(0, 10.0, 0.1, (a, b))
        run = sim.run_scenario(scenario)
        events = sim.detect_collisions(run, scenario)
        self.assertEqual(len(events), 1)
        self.assertEqual([(e.time, e.agent_a, e.agent_b) for e in events], self._brute_force(run, scenario))

    def test_far_apart_agents(self):
        a = Agent('a', 'pedestrian', 0.3, (Waypoint(0, 0, 1.0), Waypoint(10, 0, 1.0)))
        b = Agent('b', 'vehicle', 1.0, (Waypoint(0, 6, 1.0), Waypoint(10, 6, 1.0)))
        scenario = Scenario(0, 10.0, 0.1, (a, b))
        self.assertEqual(sim.detect_collisions(sim.run_scenario(scenario), scenario), [])

    def test_contiguous_overlap_is_one_event(self):
        a = Agent('a', 'pedestrian', 0.3, (Waypoint(0, 0, 0.0),))
        b = Agent('b', 'pedestrian', 0.3, (Waypoint(0.1, 0, 0.0),))
        scenario = Scenario(0, 0.9, 0.1, (a, b))
        run = sim.run_scenario(scenario)
        self.assertEqual(len(run), 10)
        events = sim.detect_collisions(run, scenario)
        self.assertEqual(len(events), 1)
        self.assertEqual(events[0].time, 0.0)

    def test_canonical_pair_order(self):
        a = Agent('zed', 'vehicle', 1.0, (Waypoint(0, 0, 0.0),))
        b = Agent('abe', 'pedestrian', 0.3, (Waypoint(0.5, 0, 0.0),))
        scenario = Scenario(0, 1.0, 0.1, (a, b))
        events = sim.detect_collisions(sim.run_scenario(scenario), scenario)
        self.assertEqual((events[0].agent_a, events[0].agent_b), ('abe', 'zed'))

    def test_headon_collision_time(self):
        scenario = sim.build_headon_scenario()
        events = sim.detect_collisions(sim.run_scenario(scenario), scenario)
        self.assertEqual(len(events), 1)
        self.assertAlmostEqual(events[0].time, 3.8, places=9)


class TestGenerator(unittest.TestCase):

    def test_same_seed_same_bytes(self):
        a = sim.dump_scenario(sim.generate_random_scenario(42, 10, 5, 60.0))
        b = sim.dump_scenario(sim.generate_random_scenario(42, 10, 5, 60.0))
        self.assertEqual(a, b)

    def test_different_seeds_differ(self):
        a = sim.dump_scenario(sim.generate_random_scenario(1, 10, 5, 60.0))
        b = sim.dump_scenario(sim.generate_random_scenario(2, 10, 5, 60.0))
        self.assertNotEqual(a, b)

    def test_paper_population(self):
        scenario = sim.generate_random_scenario(7, 232, 0, 600.0)
        self.assertEqual(sum(a.kind == 'pedestrian' for a in scenario.agents), 232)

    def test_speed_ranges(self):
        scenario = sim.generate_random_scenario(3, 50, 50, 120.0)
        for agent in scenario.agents:
            if agent.kind == 'pedestrian':
                self.assertTrue(0.99 <= agent.max_speed <= 1.81)
            else:
                self.assertTrue(4.99 <= agent.max_speed <= 14.01)

    def test_pedestrians_cross_the_box(self):
        scenario = sim.generate_random_scenario(5, 20, 0, 60.0)
        for agent in scenario.agents:
            inside = [wp for wp in agent.waypoints if abs(wp.x) <= 10.0 + 1e-6 and abs(wp.y) <= 10.0 + 1e-6]
            self.assertGreaterEqual(len(inside), 2)

    def test_empty_scenario(self):
        scenario = sim.generate_random_scenario(0, 0, 0, 10.0)
        self.assertEqual(scenario.agents, ())
        self.assertEqual(sim.load_scenario(sim.dump_scenario(scenario)).agents, ())

    def test_negative_count_rejected(self):
        with self.assertRaises(ValidationError):
            sim.generate_random_scenario(0, -1, 0, 10.0)


class TestProperties(unittest.TestCase):

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_kinematic_consistency(self, seed):
        scenario = sim.generate_random_scenario(seed, 4, 3, 8.0)
        run = sim.run_scenario(scenario)
        limit = {a.id: a.max_speed * scenario.dt + 1e-9 for a in scenario.agents}
        for before, after in zip(run, run[1:]):
            for a, b in zip(before.agents, after.agents):
                self.assertLessEqual(np.hypot(b.position[0] - a.position[0], b.position[1] - a.position[1]),
                                     limit[a.id])

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_collision_times_within_run(self, seed):
        scenario = sim.generate_random_scenario(seed, 8, 6, 20.0)
        for event in sim.detect_collisions(sim.run_scenario(scenario), scenario):
            self.assertTrue(0.0 <= event.time <= scenario.duration)
            self.assertLess(event.agent_a, event.agent_b)

    @settings(max_examples=10, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_runs_are_deterministic(self, seed):
        scenario = sim.generate_random_scenario(seed, 3, 2, 5.0)
        self.assertEqual(sim.run_scenario(scenario), sim.run_scenario(scenario))


class TestTrajectoryDump(unittest.TestCase):

    def test_csv_header_and_rows(self):
        scenario = sim.build_headon_scenario(duration=1.0)
        run = sim.run_scenario(scenario)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'traj.csv')
            sim.write_trajectory_csv(run, path)
            with open(path) as f:
                self.assertEqual(f.readline().strip(), 't_s,agent_id,x_m,y_m,vx_mps,vy_mps')
            frame = pd.read_csv(path)
        self.assertEqual(len(frame), len(run) * 2)

    def test_tracks_from_run(self):
        scenario = sim.build_headon_scenario()
        tracks = sim.tracks_from_run(sim.run_scenario(scenario), scenario)
        vehicle = tracks['veh-000']
        np.testing.assert_allclose(vehicle.position_at(1.0), (15.0, 0.0), atol=1e-9)
        np.testing.assert_allclose(vehicle.velocities[5], (-5.0, 0.0), atol=1e-12)


if __name__ == '__main__':
    unittest.main()
