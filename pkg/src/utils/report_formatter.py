"""
Report Formatter
Writes ROC sweeps, episode scores, confusion matrices, latency tables and run manifests
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

import pandas as pd

from src.models.pipeline import StageReport
from src.models.risk import ConfusionMatrix, Episode, RocPoint

logger = logging.getLogger(__name__)

ROC_COLUMNS = ['axis', 'threshold', 'tpr', 'fpr']
EPISODE_COLUMNS = ['episode_id', 'min_ttc_s', 'min_distance_m', 'collided', 'pet_s']
REPORT_FORMATS = ('csv', 'json')


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    output_paths: List[str] = field(default_factory=list)
    summary: Dict = field(default_factory=dict)

    def add_output(self, path: str):
        self.output_paths.append(os.path.basename(path))

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, 'manifest.json')
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True)
            f.write('\n')
        return path


def roc_frame(points: Sequence[RocPoint], axis: str) -> pd.DataFrame:
    # Undefined rates stay empty cells rather than 0
    return pd.DataFrame(
        [(axis, p.threshold, p.tpr, p.fpr) for p in points],
        columns=ROC_COLUMNS,
    )


def write_roc(points: Sequence[RocPoint], axis: str, path: str, fmt: str = 'csv'):
    frame = roc_frame(points, axis)
    if fmt == 'json':
        frame.to_json(path, orient='records', indent=2)
    else:
        frame.to_csv(path, index=False, float_format='%.6f')
    logger.info(f"ROC sweep ({len(points)} points) written to {path}")


def episodes_frame(episodes: Sequence[Episode]) -> pd.DataFrame:
    # Unassessed pairs have no TTC and an infinite distance; both stay empty cells
    return pd.DataFrame(
        [(e.episode_id, e.min_ttc, e.min_distance if math.isfinite(e.min_distance) else None,
          e.collided, e.pet) for e in episodes],
        columns=EPISODE_COLUMNS,
    )


def write_episodes(episodes: Sequence[Episode], path: str, fmt: str = 'csv'):
    frame = episodes_frame(episodes)
    if fmt == 'json':
        frame.to_json(path, orient='records', indent=2)
    else:
        frame.to_csv(path, index=False, float_format='%.6f')
    logger.info(f"{len(episodes)} episodes written to {path}")


def write_confusion(matrix: ConfusionMatrix, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(matrix.to_dict(), f, indent=2)
        f.write('\n')


def latency_report_frame(report: Sequence[StageReport]) -> pd.DataFrame:
    return pd.DataFrame([(r.stage, r.avg, r.std, r.n) for r in report],
                        columns=['stage', 'avg_ms', 'std_ms', 'n'])


def write_latency_report(report: Sequence[StageReport], path: str, fmt: str = 'csv'):
    frame = latency_report_frame(report)
    if fmt == 'json':
        frame.to_json(path, orient='records', indent=2)
    else:
        frame.to_csv(path, index=False, float_format='%.6f')
    logger.info(f"Latency report written to {path}")


def format_latency_table(report: Sequence[StageReport]) -> str:
    """Fixed-width table for the terminal"""
    lines = [f"{'Stage':<16} {'Avg (ms)':>10} {'Std (ms)':>10} {'N':>8}", '-' * 47]
    for r in report:
        lines.append(f"{r.stage:<16} {r.avg:>10.3f} {r.std:>10.3f} {r.n:>8}")
    return '\n'.join(lines)


def format_rate(value: Optional[float]) -> str:
    return 'n/a' if value is None else f'{value:.3f}'
