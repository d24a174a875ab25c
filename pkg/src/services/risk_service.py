# Risk Service: time-to-collision, post-encroachment time and threshold evaluation
import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate

from src.models.prediction import PredictedTrajectory
from src.models.risk import (
    ConfusionMatrix, Episode, RiskAssessment, RiskThresholds, RocPoint, WarningTrigger,
)
from src.models.world import AgentTrack, CollisionEvent, canonical_pair
from src.utils.exceptions import EmptyEpisodeSetError, MismatchedHorizonError, ValidationError

logger = logging.getLogger(__name__)

CONFLICT_RADIUS = 0.5
ROC_AXES = ('ttc', 'distance')
_TIE = 1e-12


def compute_ttc(pedestrian: PredictedTrajectory, hazard: PredictedTrajectory,
                thresholds: RiskThresholds) -> RiskAssessment:
    """First predicted step at which the pair is strictly closer than the danger distance"""
    if len(pedestrian) != len(hazard):
        raise MismatchedHorizonError(f'horizons differ: {len(pedestrian)} vs {len(hazard)} steps')
    if abs(pedestrian.dt - hazard.dt) > 1e-12 or abs(pedestrian.start_time - hazard.start_time) > 1e-9:
        raise MismatchedHorizonError('trajectories must share start_time and dt')

    delta = pedestrian.points - hazard.points
    distances = np.hypot(delta[:, 0], delta[:, 1])
    close = np.nonzero(distances < thresholds.danger_distance_m)[0]
    # Rounded so 11 * 0.1 compares equal to a 1.1 s threshold
    ttc = round(float((close[0] + 1) * pedestrian.dt), 12) if len(close) else None

    within = int(math.floor(thresholds.ttc_threshold / pedestrian.dt + 1e-9))
    min_within = float(np.min(distances[:within])) if within >= 1 else math.inf

    return RiskAssessment(
        pedestrian=pedestrian.agent,
        hazard=hazard.agent,
        ttc=ttc,
        min_predicted_distance=float(np.min(distances)),
        assessed_at=pedestrian.start_time,
        min_distance_within_tau=min_within,
    )


def decide_warning(assessment: RiskAssessment, thresholds: RiskThresholds) -> Optional[WarningTrigger]:
    if assessment.ttc is None or assessment.ttc > thresholds.ttc_threshold:
        return None
    return WarningTrigger(assessment.pedestrian, assessment.hazard, assessment.ttc, assessment.assessed_at)


# Post-encroachment time

def simplify_path(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Drop repeated and collinear interior vertices of a polyline"""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    keep = [pts[0]]
    for p in pts[1:]:
        if np.hypot(*(p - keep[-1])) > tol:
            keep.append(p)
    if len(keep) < 3:
        return np.array(keep)
    out = [keep[0]]
    for i in range(1, len(keep) - 1):
        a, b, c = out[-1], keep[i], keep[i + 1]
        ab, bc = b - a, c - b
        cross = ab[0] * bc[1] - ab[1] * bc[0]
        if abs(cross) > tol * max(np.hypot(*ab) * np.hypot(*bc), 1.0) or np.dot(ab, bc) < 0:
            out.append(b)
    out.append(keep[-1])
    return np.array(out)


def _closest_points(p0, p1, q0, q1) -> Tuple[float, np.ndarray, np.ndarray]:
    """Closest points between segments p0-p1 and q0-q1"""
    d1, d2, r = p1 - p0, q1 - q0, p0 - q0
    a, e, f = np.dot(d1, d1), np.dot(d2, d2), np.dot(d2, r)
    if a <= 1e-18 and e <= 1e-18:
        return float(np.hypot(*(p0 - q0))), p0, q0
    if a <= 1e-18:
        s, t = 0.0, float(np.clip(f / e, 0.0, 1.0))
    else:
        c = np.dot(d1, r)
        if e <= 1e-18:
            t, s = 0.0, float(np.clip(-c / a, 0.0, 1.0))
        else:
            b = np.dot(d1, d2)
            denom = a * e - b * b
            s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > 1e-18 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, float(np.clip(-c / a, 0.0, 1.0))
            elif t > 1.0:
                t, s = 1.0, float(np.clip((b - c) / a, 0.0, 1.0))
    cp, cq = p0 + d1 * s, q0 + d2 * t
    return float(np.hypot(*(cp - cq))), cp, cq


def conflict_point(path_a: np.ndarray, path_b: np.ndarray) -> Tuple[float, np.ndarray]:
    """Point of minimum inter-path distance, and that distance"""
    a = simplify_path(path_a)
    b = simplify_path(path_b)
    seg_a = [(a[i], a[i + 1]) for i in range(len(a) - 1)] or [(a[0], a[0])]
    seg_b = [(b[i], b[i + 1]) for i in range(len(b) - 1)] or [(b[0], b[0])]
    best = (math.inf, None)
    for p0, p1 in seg_a:
        for q0, q1 in seg_b:
            dist, cp, cq = _closest_points(p0, p1, q0, q1)
            if dist < best[0]:
                best = (dist, 0.5 * (cp + cq))
    return best


def _boundary_time(t0, t1, p0, p1, center, radius, entering: bool) -> float:
    """Time the straight move p0->p1 crosses the circle boundary"""
    d = p1 - p0
    f = p0 - center
    a = np.dot(d, d)
    if a <= 1e-18:
        return t0 if entering else t1
    b = 2.0 * np.dot(f, d)
    c = np.dot(f, f) - radius * radius
    disc = max(b * b - 4 * a * c, 0.0)
    root = math.sqrt(disc)
    s = (-b - root) / (2 * a) if entering else (-b + root) / (2 * a)
    s = min(max(s, 0.0), 1.0)
    return t0 + s * (t1 - t0)


def occupancy_interval(track: AgentTrack, center: np.ndarray, radius: float = CONFLICT_RADIUS) -> Optional[Tuple[float, float]]:
    """(first entry, last exit) of the conflict circle; None if never inside"""
    pos = np.asarray(track.positions, dtype=float)
    times = np.asarray(track.times, dtype=float)
    inside = np.hypot(*(pos - center).T) < radius
    if not inside.any():
        # The segment between two outside samples can still cut the circle
        for i in range(len(pos) - 1):
            dist, _, _ = _closest_points(pos[i], pos[i + 1], center, center)
            if dist < radius:
                enter = _boundary_time(times[i], times[i + 1], pos[i], pos[i + 1], center, radius, True)
                leave = _boundary_time(times[i], times[i + 1], pos[i], pos[i + 1], center, radius, False)
                return enter, leave
        return None
    first = int(np.argmax(inside))
    last = len(inside) - 1 - int(np.argmax(inside[::-1]))
    enter = times[first] if first == 0 else _boundary_time(
        times[first - 1], times[first], pos[first - 1], pos[first], center, radius, True)
    leave = times[last] if last == len(inside) - 1 else _boundary_time(
        times[last], times[last + 1], pos[last], pos[last + 1], center, radius, False)
    return float(enter), float(leave)


def compute_pet(track_a: AgentTrack, track_b: AgentTrack, radius: float = CONFLICT_RADIUS) -> Optional[float]:
    """Gap between the first occupant leaving the conflict point and the second arriving"""
    if len(track_a) == 0 or len(track_b) == 0:
        return None
    distance, center = conflict_point(track_a.positions, track_b.positions)
    if center is None or distance >= radius:
        return None
    occ_a = occupancy_interval(track_a, center, radius)
    occ_b = occupancy_interval(track_b, center, radius)
    if occ_a is None or occ_b is None:
        return None
    first, second = (occ_a, occ_b) if occ_a[0] <= occ_b[0] else (occ_b, occ_a)
    if second[0] <= first[1]:
        return None
    return float(second[0] - first[1])


# Episodes and ROC

def build_episodes(assessments: Iterable[RiskAssessment], collisions: Iterable[CollisionEvent],
                   pedestrians: Sequence[str] = (), hazards: Sequence[str] = (),
                   truth: Optional[Dict[str, AgentTrack]] = None) -> List[Episode]:
    """One episode per (pedestrian, hazard) pair of the run.

    Pairs never assessed score as safe (no TTC, infinite distance); assessed
    pairs outside the given id lists are kept as well.
    """
    scores: Dict[Tuple[str, str], List] = {
        (ped, haz): [None, math.inf, math.inf] for ped in pedestrians for haz in hazards
    }
    for a in assessments:
        key = (a.pedestrian, a.hazard)
        entry = scores.setdefault(key, [None, math.inf, math.inf])
        if a.ttc is not None and (entry[0] is None or a.ttc < entry[0]):
            entry[0] = a.ttc
        entry[1] = min(entry[1], a.min_predicted_distance)
        entry[2] = min(entry[2], a.min_distance_within_tau)

    ped_set, hazard_set = set(pedestrians), set(hazards)
    collided = set()
    for event in collisions:
        pair = canonical_pair(event.agent_a, event.agent_b)
        collided.add(pair)
        for ped, haz in ((event.agent_a, event.agent_b), (event.agent_b, event.agent_a)):
            if ped in ped_set and haz in hazard_set:
                scores.setdefault((ped, haz), [None, math.inf, math.inf])

    episodes = []
    for (ped, haz), (min_ttc, min_dist, min_within) in sorted(scores.items()):
        pet = None
        if truth is not None and ped in truth and haz in truth:
            pet = compute_pet(truth[ped], truth[haz])
        episodes.append(Episode(
            pedestrian=ped,
            hazard=haz,
            min_ttc=min_ttc,
            min_distance=min_dist,
            collided=canonical_pair(ped, haz) in collided,
            min_distance_within_tau=min_within,
            pet=pet,
        ))
    return episodes


def _warns(episode: Episode, axis: str, threshold: float) -> bool:
    if axis == 'ttc':
        return episode.min_ttc is not None and episode.min_ttc <= threshold
    return episode.min_distance_within_tau < threshold


def classify(episodes: Sequence[Episode], axis: str, threshold: float) -> List[Tuple[bool, bool]]:
    return [(_warns(e, axis, threshold), e.collided) for e in episodes]


def sweep_roc(episodes: Sequence[Episode], axis: str, grid: Sequence[float],
              px_per_meter: float = 20.0) -> List[RocPoint]:
    """ROC points along a TTC (seconds) or danger-distance (pixels) grid"""
    if not episodes:
        raise EmptyEpisodeSetError('cannot sweep an empty episode set')
    if axis not in ROC_AXES:
        raise ValidationError('axis', f"must be one of {ROC_AXES}, got {axis!r}")
    grid = [float(g) for g in grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError('grid', 'grid must be non-empty and strictly increasing')

    ordered = sorted(episodes, key=lambda e: e.episode_id)
    points = []
    for threshold in grid:
        value = threshold if axis == 'ttc' else threshold / px_per_meter
        matrix = build_confusion_matrix(classify(ordered, axis, value))
        points.append(RocPoint(threshold=threshold, tpr=matrix.tpr, fpr=matrix.fpr))
    logger.info(f"ROC sweep over {len(ordered)} episodes on the {axis} axis: {len(points)} points")
    return points


def select_threshold(points: Sequence[RocPoint]) -> RocPoint:
    """Maximum Youden's J; ties go to the smaller threshold"""
    if not points:
        raise ValidationError('points', 'need at least one ROC point')
    best = None
    for point in sorted(points, key=lambda p: p.threshold):
        if best is None or point.youden_j > best.youden_j + _TIE:
            best = point
    return best


def build_confusion_matrix(decisions: Iterable[Tuple[bool, bool]]) -> ConfusionMatrix:
    tp = fp = fn = tn = 0
    for warned, collided in decisions:
        if warned and collided:
            tp += 1
        elif warned:
            fp += 1
        elif collided:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def roc_auc(points: Sequence[RocPoint]) -> Optional[float]:
    """Area under the curve through (0,0) and (1,1); None if any rate is undefined"""
    if any(p.tpr is None or p.fpr is None for p in points):
        return None
    curve = sorted([(0.0, 0.0)] + [(p.fpr, p.tpr) for p in points] + [(1.0, 1.0)])
    fpr, tpr = zip(*curve)
    return float(integrate.trapezoid(tpr, fpr))


def parse_grid(text: str) -> List[float]:
    """'start:stop:step' (stop inclusive) or a comma separated list"""
    text = text.strip()
    try:
        if ':' in text:
            start, stop, step = (float(part) for part in text.split(':'))
            if not (step > 0):
                raise ValidationError('grid', 'step must be > 0')
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + i * step, 10) for i in range(max(n, 0))]
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError('grid', f'cannot parse grid {text!r}') from e
