# UWB Localization Service: ranging simulation and Gauss-Newton multilateration
import json
import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from src.models.localization import (
    COLLINEAR_AREA_TOL, AnchorSet, BenchmarkRow, PositionEstimate, RangeMeasurement,
    RangeNoiseModel, max_triangle_area,
)
from src.utils.exceptions import (
    DegenerateGeometryError, InsufficientRangesError, ParseError, ValidationError,
)
from src.utils.seeding import make_rng

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 50
STEP_TOLERANCE = 1e-9
CONVERGED_STEP = 1e-6

BENCHMARK_COLUMNS = ['scenario', 'mean_error_m', 'std_error_m', 'freq_hz']


def simulate_ranges(position, anchors: AnchorSet, noise: RangeNoiseModel,
                    rng_seed: Union[int, np.random.Generator], timestamp: float = 0.0) -> List[RangeMeasurement]:
    """One two-way-ranging exchange per anchor.

    `rng_seed` is either a seed (derived under the 'uwb' name) or a generator
    already being consumed by a longer run.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed, 'uwb')
    position = np.asarray(position, dtype=float)
    readings = []
    for anchor_id, anchor_pos in anchors.anchors:
        true_dist = float(np.hypot(position[0] - anchor_pos[0], position[1] - anchor_pos[1]))
        measured = true_dist + (float(rng.normal(0.0, noise.sigma)) if noise.sigma > 0 else 0.0)
        if noise.nlos_p > 0 and rng.random() < noise.nlos_p:
            measured += noise.nlos_bias
        valid = not (noise.dropout_p > 0 and rng.random() < noise.dropout_p)
        readings.append(RangeMeasurement(anchor_id, max(measured, 0.0), timestamp, valid))
    return readings


def _usable(ranges: Sequence[RangeMeasurement], anchors: AnchorSet):
    """Valid readings from distinct known anchors; first reading per anchor wins"""
    lookup = anchors.as_dict()
    seen = set()
    points, dists = [], []
    for r in ranges:
        if not r.valid or r.anchor_id in seen or r.anchor_id not in lookup:
            continue
        seen.add(r.anchor_id)
        points.append(lookup[r.anchor_id])
        dists.append(r.distance)
    return np.array(points, dtype=float).reshape(-1, 2), np.array(dists, dtype=float)


def linearized_initial_guess(points: np.ndarray, dists: np.ndarray) -> np.ndarray:
    """Closed-form start: subtract the first circle equation from the others"""
    a0, d0 = points[0], dists[0]
    A = 2.0 * (points[1:] - a0)
    b = (d0 ** 2 - dists[1:] ** 2) + np.sum(points[1:] ** 2, axis=1) - np.sum(a0 ** 2)
    guess, *_ = np.linalg.lstsq(A, b, rcond=None)
    return guess


def _residuals(p: np.ndarray, points: np.ndarray, dists: np.ndarray):
    diff = p - points
    predicted = np.hypot(diff[:, 0], diff[:, 1])
    return predicted - dists, diff, predicted


def multilaterate(ranges: Sequence[RangeMeasurement], anchors: AnchorSet,
                  initial_guess=None, timestamp: Optional[float] = None) -> PositionEstimate:
    """Least-squares position from >= 3 valid ranges"""
    points, dists = _usable(ranges, anchors)
    if len(points) < 3:
        raise InsufficientRangesError(f'need >= 3 valid ranges from distinct anchors, got {len(points)}')
    if max_triangle_area(points) <= COLLINEAR_AREA_TOL:
        raise DegenerateGeometryError('anchors used for this fix are collinear')
    if timestamp is None:
        timestamp = max((r.timestamp for r in ranges), default=0.0)

    p = (np.asarray(initial_guess, dtype=float) if initial_guess is not None
         else linearized_initial_guess(points, dists))

    status = 'ok'
    step_norm = np.inf
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        residual, diff, predicted = _residuals(p, points, dists)
        jac = np.zeros_like(diff)
        nonzero = predicted > 0
        jac[nonzero] = diff[nonzero] / predicted[nonzero, None]
        step, *_ = np.linalg.lstsq(jac, -residual, rcond=None)
        p = p + step
        step_norm = float(np.linalg.norm(step))
        if step_norm < STEP_TOLERANCE:
            break
    else:
        if step_norm > CONVERGED_STEP:
            status = 'non_convergence'
            logger.warning(f"Multilateration hit {MAX_ITERATIONS} iterations with step {step_norm:.3e}")

    residual, _, _ = _residuals(p, points, dists)
    rms = float(np.sqrt(np.mean(residual ** 2)))
    return PositionEstimate(
        position=(float(p[0]), float(p[1])),
        residual_rms=rms,
        n_ranges_used=len(points),
        timestamp=float(timestamp),
        status=status,
        iterations=iterations,
    )


def localization_error(estimate, truth) -> float:
    """Euclidean distance between an estimate (or plain point) and the true position"""
    p = estimate.position if isinstance(estimate, PositionEstimate) else estimate
    return float(np.hypot(p[0] - truth[0], p[1] - truth[1]))


def locate(position, anchors: AnchorSet, noise: RangeNoiseModel, rng: np.random.Generator,
           timestamp: float = 0.0) -> Optional[PositionEstimate]:
    """Range and solve in one go; None when the fix fails"""
    ranges = simulate_ranges(position, anchors, noise, rng, timestamp)
    try:
        return multilaterate(ranges, anchors, timestamp=timestamp)
    except (InsufficientRangesError, DegenerateGeometryError) as e:
        logger.debug(f"No fix at t={timestamp:.3f}: {e}")
        return None


# Anchor files

def anchors_from_dict(data) -> AnchorSet:
    if not isinstance(data, dict) or 'anchors' not in data:
        raise ValidationError('anchors', 'missing required field')
    items = data['anchors']
    if not isinstance(items, list):
        raise ValidationError('anchors', 'expected a list')
    anchors = []
    for i, item in enumerate(items):
        path = f'anchors[{i}]'
        if not isinstance(item, dict):
            raise ValidationError(path, 'expected an object')
        for key in ('id', 'x_m', 'y_m'):
            if key not in item:
                raise ValidationError(f'{path}.{key}', 'missing required field')
        for key in ('x_m', 'y_m'):
            if isinstance(item[key], bool) or not isinstance(item[key], (int, float)):
                raise ValidationError(f'{path}.{key}', 'expected a number')
        anchors.append((str(item['id']), (float(item['x_m']), float(item['y_m']))))
    return AnchorSet(tuple(anchors))


def load_anchor_file(path: str) -> AnchorSet:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f'Malformed anchor JSON in {path}: {e.msg}')
    return anchors_from_dict(data)


def anchors_to_dict(anchors: AnchorSet) -> Dict:
    return {'anchors': [{'id': aid, 'x_m': pos[0], 'y_m': pos[1]} for aid, pos in anchors.anchors]}


# Benchmark

def summarize_errors(label: str, errors: Sequence[float], frequency: float) -> BenchmarkRow:
    errors = np.asarray(errors, dtype=float)
    if len(errors) == 0:
        return BenchmarkRow(label, float('nan'), float('nan'), frequency, 0)
    std = float(np.std(errors, ddof=1)) if len(errors) > 1 else 0.0
    return BenchmarkRow(label, float(np.mean(errors)), std, float(frequency), int(len(errors)))


def benchmark_frame(rows: Sequence[BenchmarkRow]) -> pd.DataFrame:
    return pd.DataFrame(
        [(r.scenario_label, r.mean_error, r.std_error, r.measure_frequency) for r in rows],
        columns=BENCHMARK_COLUMNS,
    )


def write_benchmark(rows: Sequence[BenchmarkRow], path: str, fmt: str = 'csv'):
    frame = benchmark_frame(rows)
    if fmt == 'json':
        frame.to_json(path, orient='records', indent=2)
    else:
        frame.to_csv(path, index=False, float_format='%.6f')
    logger.info(f"UWB benchmark with {len(rows)} rows written to {path}")
