# Risk assessment models
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

from src.utils.exceptions import ValidationError


@dataclass(frozen=True)
class RiskThresholds:
    ttc_threshold: float = 1.1      # seconds
    danger_distance: float = 30.0   # pixels
    px_per_meter: float = 20.0

    def __post_init__(self):
        if not (self.ttc_threshold > 0):
            raise ValidationError('ttc_threshold', f'must be > 0, got {self.ttc_threshold}')
        if not (self.danger_distance > 0):
            raise ValidationError('danger_distance', f'must be > 0, got {self.danger_distance}')
        if not (self.px_per_meter > 0):
            raise ValidationError('px_per_meter', f'must be > 0, got {self.px_per_meter}')

    @property
    def danger_distance_m(self) -> float:
        return self.danger_distance / self.px_per_meter


@dataclass(frozen=True)
class RiskAssessment:
    pedestrian: str
    hazard: str
    ttc: Optional[float]
    min_predicted_distance: float
    assessed_at: float
    min_distance_within_tau: float = math.inf


@dataclass(frozen=True)
class WarningTrigger:
    pedestrian: str
    hazard: str
    ttc: float
    assessed_at: float


@dataclass(frozen=True)
class Episode:
    """One (pedestrian, hazard) pair over a run, scored by its worst assessment"""
    pedestrian: str
    hazard: str
    min_ttc: Optional[float]
    min_distance: float
    collided: bool
    min_distance_within_tau: float = math.inf
    pet: Optional[float] = None

    @property
    def episode_id(self) -> str:
        return f'{self.pedestrian}|{self.hazard}'


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    tpr: Optional[float]
    fpr: Optional[float]

    @property
    def youden_j(self) -> float:
        return (self.tpr or 0.0) - (self.fpr or 0.0)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ('tp', 'fp', 'fn', 'tn'):
            if getattr(self, name) < 0:
                raise ValidationError(name, 'counts must be non-negative')

    @classmethod
    def from_layout(cls, layout: Sequence[Sequence[int]]) -> 'ConfusionMatrix':
        """Build from the [[TP, FP], [FN, TN]] layout"""
        (tp, fp), (fn, tn) = layout
        return cls(tp=int(tp), fp=int(fp), fn=int(fn), tn=int(tn))

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def tpr(self) -> Optional[float]:
        positives = self.tp + self.fn
        return self.tp / positives if positives else None

    @property
    def fpr(self) -> Optional[float]:
        negatives = self.fp + self.tn
        return self.fp / negatives if negatives else None

    def as_layout(self):
        return [[self.tp, self.fp], [self.fn, self.tn]]

    def to_dict(self) -> Dict:
        return {
            'tp': self.tp,
            'fp': self.fp,
            'fn': self.fn,
            'tn': self.tn,
            'tpr': self.tpr,
            'fpr': self.fpr,
        }
