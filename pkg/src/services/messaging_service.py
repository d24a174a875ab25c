# Messaging Service: warning wire format, loopback broker and MQTT transport
import json
import logging
import queue
import threading
import time
import uuid
from collections import OrderedDict
from typing import Callable, Dict, List, Sequence, Tuple
from urllib.parse import urlparse

import numpy as np
import paho.mqtt.client as mqtt

from src.models.messages import (
    WIRE_VERSION, HazardRef, WarningMessage, intersection_filter,
)
from src.models.pipeline import StageLatencyModel
from src.utils.exceptions import (
    BrokerUnreachableError, InvalidMessageError, MalformedPayloadError, MessageError,
    QueueFullError, TransportError, UnsupportedVersionError, ValidationError,
)
from src.utils.seeding import make_rng

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_SIZE = 1024
FIELD_ORDER = ('version', 'msg_id', 'created_ms', 'intersection', 'user', 'kind',
               'ttc_s', 'position', 'hazard')


# Wire format

def _num(value: float) -> str:
    return format(float(value), '.6g')


def _str(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)


def encode_warning(msg: WarningMessage) -> bytes:
    """Canonical compact JSON with the documented key order"""
    msg.validate()
    text = (
        '{'
        f'"version":{msg.version},'
        f'"msg_id":{_str(msg.msg_id)},'
        f'"created_ms":{msg.created_ms},'
        f'"intersection":{_str(msg.intersection)},'
        f'"user":{_str(msg.user)},'
        f'"kind":{_str(msg.kind)},'
        f'"ttc_s":{_num(msg.ttc_s)},'
        f'"position":{{"x_m":{_num(msg.position[0])},"y_m":{_num(msg.position[1])}}},'
        f'"hazard":{{"id":{_str(msg.hazard.id)},"x_m":{_num(msg.hazard.position[0])},'
        f'"y_m":{_num(msg.hazard.position[1])}}}'
        '}'
    )
    return text.encode('utf-8')


def _require(data: Dict, key: str, kind, path: str = ''):
    name = f'{path}.{key}' if path else key
    if key not in data:
        raise InvalidMessageError(f'missing field {name}')
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, kind):
        raise InvalidMessageError(f'field {name} has wrong type')
    return value


def _point(data, path: str) -> Tuple[float, float]:
    if not isinstance(data, dict):
        raise InvalidMessageError(f'field {path} must be an object')
    return (float(_require(data, 'x_m', (int, float), path)),
            float(_require(data, 'y_m', (int, float), path)))


def decode_warning(payload: bytes) -> WarningMessage:
    """Parse any key order; malformed, unsupported-version and invalid payloads raise distinct errors"""
    try:
        data = json.loads(payload.decode('utf-8') if isinstance(payload, (bytes, bytearray)) else payload)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedPayloadError(f'payload is not valid JSON: {e}') from e
    if not isinstance(data, dict):
        raise MalformedPayloadError('payload must be a JSON object')

    version = _require(data, 'version', int)
    if version != WIRE_VERSION:
        raise UnsupportedVersionError(version)

    hazard = data.get('hazard')
    if not isinstance(hazard, dict):
        raise InvalidMessageError('field hazard must be an object')
    return WarningMessage(
        version=version,
        msg_id=_require(data, 'msg_id', str),
        created_ms=_require(data, 'created_ms', int),
        intersection=_require(data, 'intersection', str),
        user=_require(data, 'user', str),
        kind=_require(data, 'kind', str),
        ttc_s=float(_require(data, 'ttc_s', (int, float))),
        position=_point(data.get('position'), 'position'),
        hazard=HazardRef(id=_require(hazard, 'id', str, 'hazard'), position=_point(hazard, 'hazard')),
    )


class MessageIdFactory:
    """Seeded 128-bit message ids"""

    def __init__(self, seed: int):
        self._rng = make_rng(seed, 'msg_id')

    def next_id(self) -> str:
        return uuid.UUID(bytes=self._rng.bytes(16), version=4).hex


# Transports

def validate_filter(topic_filter: str):
    if '#' in topic_filter:
        raise ValidationError('topic_filter', "only the '+' single-level wildcard is supported")
    for level in topic_filter.split('/'):
        if '+' in level and level != '+':
            raise ValidationError('topic_filter', f"'+' must occupy a whole level in {topic_filter!r}")


def topic_matches(topic_filter: str, topic: str) -> bool:
    return mqtt.topic_matches_sub(topic_filter, topic)


def _wall_clock_ms() -> int:
    return int(time.time() * 1000)


class Subscription:
    """Bounded FIFO of (topic, payload, receive_ms) tuples for one subscriber"""

    def __init__(self, topic_filter: str, maxsize: int = DEFAULT_QUEUE_SIZE,
                 clock: Callable[[], int] = _wall_clock_ms):
        self.topic_filter = topic_filter
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self._clock = clock

    def deliver(self, topic: str, payload: bytes):
        try:
            self.queue.put_nowait((topic, payload, self._clock()))
        except queue.Full:
            raise QueueFullError(f'subscriber queue for {self.topic_filter!r} is full ({self.queue.maxsize})')

    def drain(self) -> List[Tuple[str, bytes, int]]:
        items = []
        while True:
            try:
                items.append(self.queue.get_nowait())
            except queue.Empty:
                return items


class LoopbackBroker:
    """In-process broker: subscribe with '+', publish, FIFO per subscriber"""

    name = 'loopback'

    def __init__(self, queue_size: int = DEFAULT_QUEUE_SIZE, clock: Callable[[], int] = _wall_clock_ms):
        self.queue_size = queue_size
        self.clock = clock
        self._subscriptions: List[Subscription] = []
        self._lock = threading.Lock()
        self.published = 0

    def subscribe(self, topic_filter: str) -> Subscription:
        validate_filter(topic_filter)
        subscription = Subscription(topic_filter, self.queue_size, self.clock)
        with self._lock:
            self._subscriptions.append(subscription)
        logger.debug(f"Loopback subscription on {topic_filter}")
        return subscription

    def unsubscribe(self, subscription: Subscription):
        with self._lock:
            if subscription in self._subscriptions:
                self._subscriptions.remove(subscription)

    def publish(self, topic: str, payload: bytes) -> int:
        """Deliver to every matching subscriber; returns the receipt timestamp in ms"""
        if '+' in topic or '#' in topic:
            raise ValidationError('topic', 'published topics may not contain wildcards')
        # Holding the lock across delivery serializes publishes and keeps FIFO order
        with self._lock:
            for subscription in self._subscriptions:
                if topic_matches(subscription.topic_filter, topic):
                    subscription.deliver(topic, payload)
            self.published += 1
        return self.clock()

    def close(self):
        with self._lock:
            self._subscriptions.clear()


def parse_mqtt_url(url: str) -> Tuple[str, int]:
    parsed = urlparse(url if '://' in url else f'mqtt://{url}')
    if parsed.scheme not in ('mqtt', 'tcp'):
        raise ValidationError('DT_MQTT_URL', f'unsupported scheme {parsed.scheme!r}')
    if not parsed.hostname:
        raise ValidationError('DT_MQTT_URL', f'no host in {url!r}')
    return parsed.hostname, parsed.port or 1883


class MqttTransport:
    """External MQTT 3.1.1 broker connection publishing at QoS 1"""

    name = 'external-broker'

    def __init__(self, url: str, qos: int = 1, keepalive: int = 60, timeout: float = 5.0,
                 queue_size: int = DEFAULT_QUEUE_SIZE, client_id: str = ''):
        self.host, self.port = parse_mqtt_url(url)
        self.qos = qos
        self.timeout = timeout
        self.queue_size = queue_size
        self._subscriptions: List[Subscription] = []
        self._lock = threading.Lock()
        self.client = mqtt.Client(client_id=client_id, protocol=mqtt.MQTTv311)
        self.client.on_message = self._on_message
        self.client.on_disconnect = self._on_disconnect
        try:
            self.client.connect(self.host, self.port, keepalive)
        except OSError as e:
            raise BrokerUnreachableError(f'cannot reach MQTT broker at {self.host}:{self.port}: {e}') from e
        self.client.loop_start()
        logger.info(f"Connected to MQTT broker {self.host}:{self.port}")

    def _on_message(self, client, userdata, message):
        with self._lock:
            targets = [s for s in self._subscriptions if topic_matches(s.topic_filter, message.topic)]
        for subscription in targets:
            try:
                subscription.deliver(message.topic, bytes(message.payload))
            except QueueFullError as e:
                logger.error(f"Dropping message on {message.topic}: {e}")

    def _on_disconnect(self, client, userdata, rc):
        if rc != 0:
            logger.warning(f"Unexpected disconnect from MQTT broker (rc={rc})")

    def subscribe(self, topic_filter: str) -> Subscription:
        validate_filter(topic_filter)
        subscription = Subscription(topic_filter, self.queue_size)
        with self._lock:
            self._subscriptions.append(subscription)
        result, _ = self.client.subscribe(topic_filter, qos=self.qos)
        if result != mqtt.MQTT_ERR_SUCCESS:
            raise TransportError(f'subscribe to {topic_filter} failed: {mqtt.error_string(result)}')
        return subscription

    def publish(self, topic: str, payload: bytes) -> int:
        info = self.client.publish(topic, payload, qos=self.qos)
        if info.rc == mqtt.MQTT_ERR_NO_CONN:
            raise BrokerUnreachableError(f'not connected to {self.host}:{self.port}')
        if info.rc != mqtt.MQTT_ERR_SUCCESS:
            raise TransportError(f'publish to {topic} failed: {mqtt.error_string(info.rc)}')
        info.wait_for_publish(timeout=self.timeout)
        return _wall_clock_ms()

    def close(self):
        self.client.loop_stop()
        self.client.disconnect()


# Publisher / subscriber

class WarningPublisher:
    def __init__(self, transport):
        self.transport = transport
        self.sent = 0

    def publish(self, msg: WarningMessage) -> int:
        """Encode and publish on the user's topic; returns the delivery receipt in ms"""
        receipt = self.transport.publish(msg.topic, encode_warning(msg))
        self.sent += 1
        logger.debug(f"Published warning {msg.msg_id} to {msg.topic}")
        return receipt


class WarningSubscriber:
    """Decodes warnings for one intersection and drops QoS-1 duplicates by msg_id.

    Only the `max_seen` most recent ids are remembered.
    """

    def __init__(self, transport, intersection: str, max_seen: int = DEFAULT_QUEUE_SIZE):
        self.subscription = transport.subscribe(intersection_filter(intersection))
        self.max_seen = max_seen
        self._seen: OrderedDict = OrderedDict()
        self.rejected = 0

    def poll(self) -> List[Tuple[WarningMessage, int]]:
        received = []
        for topic, payload, receive_ms in self.subscription.drain():
            try:
                msg = decode_warning(payload)
            except MessageError as e:
                self.rejected += 1
                logger.warning(f"Rejected payload on {topic}: {e}")
                continue
            if msg.msg_id in self._seen:
                self._seen.move_to_end(msg.msg_id)
                continue
            self._seen[msg.msg_id] = None
            if len(self._seen) > self.max_seen:
                self._seen.popitem(last=False)
            received.append((msg, receive_ms))
        return received


def retrieval_latency(receipts: Sequence[Tuple[float, float]], network_model: StageLatencyModel,
                      rng_seed=0) -> np.ndarray:
    """Observed publish-to-receive gap plus a sampled network delay per message"""
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed, 'retrieval')
    gaps = np.array([max(received - published, 0.0) for published, received in receipts], dtype=float)
    return gaps + network_model.sample_many(rng, len(gaps))
