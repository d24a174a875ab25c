"""
Message Models
Safety warning payload and MQTT topic scheme
"""

import math
import re
from dataclasses import dataclass
from typing import Tuple

from src.utils.exceptions import InvalidMessageError

WIRE_VERSION = 1
MESSAGE_KINDS = ('collision_warning',)
TOPIC_ROOT = 'dt'
TOPIC_WARN = 'warn'

_MSG_ID_RE = re.compile(r'^[0-9a-f]{32}$')
_FORBIDDEN_TOPIC_CHARS = ('+', '#', '/')


def round_sig(value: float, digits: int = 6) -> float:
    """Round to the precision the wire format carries"""
    return float(format(float(value), f'.{digits}g'))


@dataclass(frozen=True)
class HazardRef:
    id: str
    position: Tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, 'position', (round_sig(self.position[0]), round_sig(self.position[1])))


@dataclass(frozen=True)
class WarningMessage:
    msg_id: str
    created_ms: int
    intersection: str
    user: str
    ttc_s: float
    position: Tuple[float, float]
    hazard: HazardRef
    kind: str = 'collision_warning'
    version: int = WIRE_VERSION

    def __post_init__(self):
        # Floats are held at wire precision so decode(encode(m)) == m
        object.__setattr__(self, 'ttc_s', round_sig(self.ttc_s))
        object.__setattr__(self, 'position', (round_sig(self.position[0]), round_sig(self.position[1])))
        self.validate()

    def validate(self):
        if self.version != WIRE_VERSION:
            raise InvalidMessageError(f'version must be {WIRE_VERSION}')
        if not isinstance(self.msg_id, str) or not _MSG_ID_RE.match(self.msg_id):
            raise InvalidMessageError('msg_id must be 32 lowercase hex characters')
        if isinstance(self.created_ms, bool) or not isinstance(self.created_ms, int) or self.created_ms < 0:
            raise InvalidMessageError('created_ms must be a non-negative integer')
        if self.kind not in MESSAGE_KINDS:
            raise InvalidMessageError(f'unknown kind {self.kind!r}')
        if not (math.isfinite(self.ttc_s) and self.ttc_s > 0):
            raise InvalidMessageError('ttc_s must be > 0')
        for value in (*self.position, *self.hazard.position):
            if not math.isfinite(value):
                raise InvalidMessageError('positions must be finite')
        validate_topic_level(self.intersection, 'intersection')
        validate_topic_level(self.user, 'user')
        if not self.hazard.id:
            raise InvalidMessageError('hazard id must be non-empty')

    @property
    def topic(self) -> str:
        return topic_for(self.intersection, self.user)


def validate_topic_level(value: str, name: str):
    if not isinstance(value, str) or not value:
        raise InvalidMessageError(f'{name} must be a non-empty string')
    for ch in _FORBIDDEN_TOPIC_CHARS:
        if ch in value:
            raise InvalidMessageError(f'{name} may not contain {ch!r}')


def topic_for(intersection: str, user: str) -> str:
    """Topic path `dt/{intersection}/warn/{user}`"""
    validate_topic_level(intersection, 'intersection')
    validate_topic_level(user, 'user')
    return f'{TOPIC_ROOT}/{intersection}/{TOPIC_WARN}/{user}'


def intersection_filter(intersection: str) -> str:
    validate_topic_level(intersection, 'intersection')
    return f'{TOPIC_ROOT}/{intersection}/{TOPIC_WARN}/+'
