# Exception hierarchy for the Intersection Safety Twin
from typing import Optional


class DigitalTwinError(Exception):
    """Base class for every error raised by the twin"""


class ValidationError(DigitalTwinError, ValueError):
    """An input violates a domain invariant; `field` names the offender"""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


class ParseError(DigitalTwinError, ValueError):
    """Input text could not be parsed at all"""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(message if field is None else f"{field}: {message}")


class ConfigurationError(ValidationError):
    """Pipeline or CLI configuration is missing a field or holds a bad value"""


# uwb-loc
class InsufficientRangesError(DigitalTwinError, ValueError):
    pass


class DegenerateGeometryError(DigitalTwinError, ValueError):
    pass


# tdma
class DuplicateUserError(ValidationError):
    pass


class NonPositiveSlotError(ValidationError):
    pass


class IdenticalTimestampsError(DigitalTwinError, ValueError):
    pass


class SingleFixError(DigitalTwinError, ValueError):
    pass


# predict / risk
class CoverageError(DigitalTwinError, ValueError):
    pass


class MismatchedHorizonError(DigitalTwinError, ValueError):
    pass


class EmptyEpisodeSetError(DigitalTwinError, ValueError):
    pass


# pipeline
class InsufficientSamplesError(DigitalTwinError, ValueError):
    pass


# messaging
class MessageError(DigitalTwinError, ValueError):
    """Base for wire-format problems"""


class MalformedPayloadError(MessageError):
    pass


class UnsupportedVersionError(MessageError):
    def __init__(self, version):
        self.version = version
        super().__init__(f"Unsupported message version: {version}")


class InvalidMessageError(MessageError):
    pass


class TransportError(DigitalTwinError, RuntimeError):
    pass


class BrokerUnreachableError(TransportError, ConnectionError):
    pass


class QueueFullError(TransportError):
    pass
