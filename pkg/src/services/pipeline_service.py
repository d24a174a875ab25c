# Pipeline Service: staged sensing -> tracking -> risk -> messaging loop with latency accounting
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.models.messages import HazardRef, WarningMessage
from src.models.pipeline import (
    STAGES, DetectorProfile, FrameLog, LatencyRecord, PipelineConfig, PipelineResult,
    RegionOfInterest, StageReport,
)
from src.models.prediction import PredictedTrajectory
from src.models.risk import RiskAssessment, RiskThresholds, WarningTrigger
from src.models.world import HAZARD_KINDS, Scenario, WorldState
from src.services import messaging_service, risk_service, simulation_service, tdma_service
from src.services.monitoring_service import PipelineMonitor, sample_or_time
from src.services.prediction_service import KalmanPredictor
from src.utils.exceptions import (
    ConfigurationError, InsufficientSamplesError, MessageError,
)
from src.utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)

LATENCY_COLUMNS = ['frame', 'stage', 'sample_ms', 'network', 'end_to_end_ms']
RISK_LOG_COLUMNS = ['assessed_at_s', 'pedestrian', 'hazard', 'ttc_s', 'min_predicted_distance_m',
                    'min_distance_within_tau_m']

Detection = Tuple[str, Tuple[float, float]]


# Resource optimization

def specify_rois(vehicle_predictions: Sequence[PredictedTrajectory], danger_distance_m: float,
                 ttl: float) -> List[RegionOfInterest]:
    """Inflated bounding box of each vehicle's predicted path"""
    rois = []
    for prediction in vehicle_predictions:
        xmin, ymin = prediction.points.min(axis=0)
        xmax, ymax = prediction.points.max(axis=0)
        rois.append(RegionOfInterest(
            bounds=(float(xmin - danger_distance_m), float(ymin - danger_distance_m),
                    float(xmax + danger_distance_m), float(ymax + danger_distance_m)),
            created_at=prediction.start_time,
            ttl=ttl,
            owner=prediction.agent,
        ))
    return rois


def pedestrians_in_rois(rois: Sequence[RegionOfInterest], pedestrian_points: Dict[str, np.ndarray],
                        time: float) -> bool:
    active = [r for r in rois if r.is_active(time)]
    for points in pedestrian_points.values():
        for point in np.asarray(points).reshape(-1, 2):
            if any(r.contains(point) for r in active):
                return True
    return False


def select_profile(rois: Sequence[RegionOfInterest], pedestrians_present_in_roi: bool,
                   profiles: Dict[str, DetectorProfile], in_hysteresis: bool = False) -> DetectorProfile:
    """Large model when a pedestrian sits in an active danger area, small otherwise"""
    if rois and pedestrians_present_in_roi:
        return profiles['large']
    if in_hysteresis:
        return profiles['medium']
    return profiles['small']


def virtual_detect(state: WorldState, profile: DetectorProfile, rng_seed: int,
                   field_of_view: Optional[Tuple[float, float, float, float]] = None) -> Tuple[List[Detection], float]:
    """Camera stand-in: each agent seen with probability 1 - miss_probability"""
    rng = make_rng(rng_seed)
    latency = profile.latency.sample(rng)
    draws = rng.random(len(state.agents))
    detections = []
    for agent, draw in zip(state.agents, draws):
        if field_of_view is not None:
            xmin, ymin, xmax, ymax = field_of_view
            if not (xmin <= agent.position[0] <= xmax and ymin <= agent.position[1] <= ymax):
                continue
        if draw >= profile.miss_probability:
            detections.append((agent.id, agent.position))
    return detections, latency


# Latency reporting

def latency_frame(records: Sequence[LatencyRecord]) -> pd.DataFrame:
    rows = [
        (r.frame_id, stage, sample, r.network_profile, r.end_to_end)
        for r in records for stage, sample in r.samples
    ]
    return pd.DataFrame(rows, columns=LATENCY_COLUMNS)


def latency_report(records: Sequence[LatencyRecord]) -> List[StageReport]:
    """Per-stage mean and sample std (n - 1), plus the end-to-end row"""
    if len(records) < 2:
        raise InsufficientSamplesError(f'need >= 2 latency records, got {len(records)}')
    frame = latency_frame(records)
    stats = frame.groupby('stage')['sample_ms'].agg(['mean', 'std', 'count'])
    report = [StageReport(stage, float(stats.loc[stage, 'mean']), float(stats.loc[stage, 'std']),
                          int(stats.loc[stage, 'count'])) for stage in STAGES]
    totals = pd.Series([r.end_to_end for r in records])
    report.append(StageReport('end_to_end', float(totals.mean()), float(totals.std(ddof=1)), len(totals)))
    return report


# Orchestration

class DigitalTwinPipeline:
    """Runs one scenario through the twin, one frame per simulator tick"""

    def __init__(self, scenario: Scenario, config: PipelineConfig, transport=None,
                 monitor: Optional[PipelineMonitor] = None):
        self.scenario = scenario
        self.config = config
        self.thresholds: RiskThresholds = config.thresholds_for(scenario.px_per_meter)
        self.monitor = monitor or PipelineMonitor()
        self.wallclock = config.latency_mode == 'wallclock'
        self._now_ms = config.start_epoch_ms
        self.transport = transport or messaging_service.LoopbackBroker(clock=lambda: self._now_ms)
        self.publisher = messaging_service.WarningPublisher(self.transport)
        self.subscriber = messaging_service.WarningSubscriber(self.transport, config.intersection)
        self.ids = messaging_service.MessageIdFactory(config.seed)
        self.kinds = {agent.id: agent.kind for agent in scenario.agents}
        self.pedestrians = sorted(a.id for a in scenario.agents if a.kind == 'pedestrian')
        self.hazards = sorted(a.id for a in scenario.agents if a.kind in HAZARD_KINDS)
        self._stage_rngs = {stage: make_rng(config.seed, f'latency:{stage}') for stage in STAGES}
        self._rois: Dict[str, RegionOfInterest] = {}
        self._last_warned: Dict[Tuple[str, str], float] = {}
        self._last_large: Optional[float] = None
        self._validate()

    def _validate(self):
        """Configuration problems surface before tick 0"""
        if self.config.network_profile not in self.config.network_models:
            raise ConfigurationError('network_profile', f'no retrieval model for {self.config.network_profile!r}')
        for name in ('small', 'medium', 'large'):
            if name not in self.config.profiles:
                raise ConfigurationError(f'profiles.{name}', 'missing detector profile')
        known = {a.id for a in self.scenario.agents}
        for user in self.config.schedule.user_order:
            if user not in known:
                raise ConfigurationError('schedule.user_order', f'tagged user {user!r} is not in the scenario')

    def _uwb_tracks(self, truth):
        schedule_cfg = self.config.schedule
        if not schedule_cfg.user_order:
            return {}
        schedule = tdma_service.build_schedule(schedule_cfg.user_order, schedule_cfg.slot_duration_s,
                                               schedule_cfg.slot_dead_time_s)
        return tdma_service.run_scheduled_localization(
            self.scenario, self.config.anchors, self.config.uwb_noise, schedule,
            schedule_cfg.fix_period_s, derive_seed(self.config.seed, 'uwb'), truth=truth)

    def _sample(self, stage: str) -> float:
        model = self.config.network_model if stage == 'msg_retrieve' else self.config.stages[stage]
        return model.sample(self._stage_rngs[stage])

    def _choose_profile(self, time: float, predictor: KalmanPredictor) -> Tuple[DetectorProfile, int]:
        policy = self.config.profile_policy
        self._rois = {owner: roi for owner, roi in self._rois.items() if roi.is_active(time)}
        active = list(self._rois.values())
        if policy != 'roi':
            return self.config.profiles[policy], len(active)
        points = {}
        for ped in self.pedestrians:
            prediction = predictor.predict(ped, time)
            if prediction is not None:
                current = predictor.state_at(ped, time).position
                points[ped] = np.vstack([current[None, :], prediction.points])
        present = pedestrians_in_rois(active, points, time)
        in_hysteresis = (self._last_large is not None and self.config.hysteresis_s > 0
                         and time - self._last_large < self.config.hysteresis_s)
        return select_profile(active, present, self.config.profiles, in_hysteresis), len(active)

    def _track(self, predictor: KalmanPredictor, detections: List[Detection], time: float,
               uwb_positions: Dict[str, np.ndarray]):
        sigma = self.config.predictor.measurement_sigma
        for agent_id, position in detections:
            if agent_id in uwb_positions:
                continue
            predictor.observe(agent_id, self.kinds[agent_id], time, position, sigma=sigma)
        uwb_sigma = max(self.config.uwb_noise.sigma, 1e-3)
        for agent_id, position in uwb_positions.items():
            predictor.observe(agent_id, self.kinds[agent_id], time, position, sigma=uwb_sigma)
        predictor.advance(time)

    def _assess(self, predictor: KalmanPredictor, time: float):
        predictions = {a: predictor.predict(a, time) for a in predictor.tracked_agents()}
        predictions = {a: p for a, p in predictions.items() if p is not None}
        margin = self.config.assessment_margin_m
        assessments: List[RiskAssessment] = []
        triggers: List[WarningTrigger] = []
        for ped in self.pedestrians:
            ped_pred = predictions.get(ped)
            if ped_pred is None:
                continue
            ped_lo, ped_hi = ped_pred.points.min(axis=0), ped_pred.points.max(axis=0)
            for haz in self.hazards:
                haz_pred = predictions.get(haz)
                if haz_pred is None:
                    continue
                haz_lo, haz_hi = haz_pred.points.min(axis=0), haz_pred.points.max(axis=0)
                if np.any(ped_lo - margin > haz_hi) or np.any(haz_lo - margin > ped_hi):
                    continue
                assessment = risk_service.compute_ttc(ped_pred, haz_pred, self.thresholds)
                assessments.append(assessment)
                trigger = risk_service.decide_warning(assessment, self.thresholds)
                if trigger is not None:
                    triggers.append(trigger)
        return predictions, assessments, triggers

    def _refresh_rois(self, predictions: Dict[str, PredictedTrajectory]):
        vehicles = [p for a, p in predictions.items() if self.kinds.get(a) in HAZARD_KINDS]
        for roi in specify_rois(vehicles, self.thresholds.danger_distance_m, self.config.roi_ttl_s):
            self._rois[roi.owner] = roi

    def _compose(self, triggers: List[WarningTrigger], predictor: KalmanPredictor,
                 time: float) -> List[Tuple[Tuple[str, str], WarningMessage]]:
        composed = []
        for trigger in triggers:
            pair = (trigger.pedestrian, trigger.hazard)
            last = self._last_warned.get(pair)
            if last is not None and time - last < self.config.warning_cooldown_s - 1e-9:
                continue
            ped_state = predictor.state_at(trigger.pedestrian, time)
            haz_state = predictor.state_at(trigger.hazard, time)
            try:
                msg = WarningMessage(
                    msg_id=self.ids.next_id(),
                    created_ms=self._now_ms,
                    intersection=self.config.intersection,
                    user=trigger.pedestrian,
                    ttc_s=trigger.ttc,
                    position=tuple(ped_state.position),
                    hazard=HazardRef(trigger.hazard, tuple(haz_state.position)),
                )
            except MessageError as e:
                logger.warning(f"Cannot build warning for {pair}: {e}")
                continue
            composed.append((pair, msg))
        return composed

    def _frame(self, state: WorldState, predictor: KalmanPredictor, uwb_tracks, result: PipelineResult):
        """Process one tick; `result` and the cooldown table change only once every stage succeeded"""
        tick, time = state.tick, state.time
        self._now_ms = self.config.start_epoch_ms + int(round(time * 1000))
        samples: Dict[str, float] = {}
        wallclock = self.wallclock

        with sample_or_time(samples, 'reception', wallclock, None if wallclock else self._sample('reception')):
            pass
        with sample_or_time(samples, 'preprocessing', wallclock,
                            None if wallclock else self._sample('preprocessing')):
            profile, n_rois = self._choose_profile(time, predictor)

        uwb_positions = {}
        for user, track in uwb_tracks.items():
            idx = int(np.searchsorted(track.times, time - 1e-9))
            if idx < len(track.times) and abs(track.times[idx] - time) < 1e-9:
                uwb_positions[user] = track.positions[idx]

        baseline = predictor.snapshot()
        escalated = False
        detect_seed = derive_seed(self.config.seed, f'detect:{tick}')
        with sample_or_time(samples, 'detection', wallclock, None):
            detections, detect_ms = virtual_detect(state, profile, detect_seed, self.config.field_of_view)
        with sample_or_time(samples, 'tracking', wallclock, None if wallclock else self._sample('tracking')):
            self._track(predictor, detections, time, uwb_positions)
            predictions, assessments, triggers = self._assess(predictor, time)

        if triggers and profile.name != 'large' and self.config.profile_policy == 'roi':
            # A warning needs the large model; re-run this frame at full resolution
            escalated = True
            profile = self.config.profiles['large']
            predictor.restore(baseline)
            with sample_or_time(samples, 'detection', wallclock, None):
                detections, extra_ms = virtual_detect(
                    state, profile, derive_seed(self.config.seed, f'detect:{tick}:large'),
                    self.config.field_of_view)
            detect_ms += extra_ms
            with sample_or_time(samples, 'tracking', wallclock, 0.0):
                self._track(predictor, detections, time, uwb_positions)
                predictions, assessments, triggers = self._assess(predictor, time)
        if not wallclock:
            samples['detection'] = detect_ms

        if profile.name == 'large':
            self._last_large = time
        self._refresh_rois(predictions)

        with sample_or_time(samples, 'msg_create', wallclock, None if wallclock else self._sample('msg_create')):
            composed = self._compose(triggers, predictor, time)
            for _, msg in composed:
                self.publisher.publish(msg)
        with sample_or_time(samples, 'msg_retrieve', wallclock,
                            None if wallclock else self._sample('msg_retrieve')):
            received = self.subscriber.poll()
        record = LatencyRecord.from_samples(tick, samples, self.config.network_profile, profile.name)

        # Commit
        result.risk_log.extend(assessments)
        for pair, msg in composed:
            self._last_warned[pair] = time
            result.warnings.append(msg)
            self.monitor.record_warning()
        result.received.extend(received)
        result.latency.append(record)
        result.frames.append(FrameLog(tick, time, profile.name, len(detections), n_rois, len(composed), escalated))
        self.monitor.record_frame(record, n_rois)

    def run(self) -> PipelineResult:
        run = simulation_service.run_scenario(self.scenario)
        truth = simulation_service.tracks_from_run(run, self.scenario)
        uwb_tracks = self._uwb_tracks(truth)
        predictor = KalmanPredictor(self.config.predictor)
        result = PipelineResult()
        result.states = run
        result.truth = truth
        result.collisions = simulation_service.detect_collisions(run, self.scenario)

        for state in run:
            snapshot = predictor.snapshot()
            rois, last_large = dict(self._rois), self._last_large
            try:
                self._frame(state, predictor, uwb_tracks, result)
            except Exception as e:
                # A failed frame leaves the tracker and gating state as they were before it
                predictor.restore(snapshot)
                self._rois, self._last_large = rois, last_large
                result.skipped_frames += 1
                self.monitor.record_skipped()
                logger.error(f"Frame {state.tick} skipped: {e}")

        receipts = [(msg.created_ms, received_ms) for msg, received_ms in result.received]
        result.retrieval_ms = list(messaging_service.retrieval_latency(
            receipts, self.config.network_model, derive_seed(self.config.seed, 'retrieval')))
        logger.info(f"Pipeline finished: {len(result.latency)} frames, {len(result.warnings)} warnings, "
                    f"{len(result.collisions)} collisions, {result.skipped_frames} skipped")
        return result


def run_pipeline(scenario: Scenario, config: PipelineConfig, transport=None,
                 monitor: Optional[PipelineMonitor] = None) -> PipelineResult:
    return DigitalTwinPipeline(scenario, config, transport, monitor).run()


# Output files

def write_latency_csv(records: Sequence[LatencyRecord], path: str):
    latency_frame(records).to_csv(path, index=False, float_format='%.6f')
    logger.info(f"Latency log with {len(records)} frames written to {path}")


def write_warnings_jsonl(warnings: Sequence[WarningMessage], path: str):
    with open(path, 'wb') as f:
        for msg in warnings:
            f.write(messaging_service.encode_warning(msg) + b'\n')
    logger.info(f"{len(warnings)} warnings written to {path}")


def risk_log_frame(assessments: Sequence[RiskAssessment]) -> pd.DataFrame:
    rows = [
        (a.assessed_at, a.pedestrian, a.hazard, a.ttc, a.min_predicted_distance,
         a.min_distance_within_tau if math.isfinite(a.min_distance_within_tau) else None)
        for a in assessments
    ]
    return pd.DataFrame(rows, columns=RISK_LOG_COLUMNS)


def write_risk_log_csv(assessments: Sequence[RiskAssessment], path: str):
    risk_log_frame(assessments).to_csv(path, index=False, float_format='%.6f')
    logger.info(f"Risk log with {len(assessments)} assessments written to {path}")
