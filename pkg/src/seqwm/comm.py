"""
Sequential message protocol.

A message is a fixed-length vector with one slot per agent. Agent ``i``
(0-based here) writes ``(z_pred || a)`` into slot ``i`` and forwards the
message to agent ``i + 1``; unused slots stay zero and are flagged invalid.
Consumers only ever see :meth:`MessageBatch.features`, which zeroes the
payload of invalid slots, so stale bytes in an invalid slot never matter.

A planning step exchanges a *schedule*: one message per predicted step of
the horizon, ``h = 0..H``.
"""

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from seqwm.exceptions import ShapeMismatchError, SlotError, WireFormatError
from seqwm.types import MessageMode, Provenance

logger = logging.getLogger(__name__)

WIRE_MAGIC = b"SQWM"
WIRE_VERSION = 1
_HEADER = struct.Struct("<4sHHHHB")
_MODE_CODES = {MessageMode.full: 0, MessageMode.action_only: 1}


@dataclass(frozen=True)
class MessageLayout:
    """Slot geometry shared by every message of a team."""

    n_agents: int
    act_dim: int
    latent_dim: int
    mode: MessageMode = MessageMode.full

    def __post_init__(self):
        if self.n_agents <= 0 or self.act_dim <= 0 or self.latent_dim <= 0:
            raise ShapeMismatchError("message layout", "positive dims", (self.n_agents, self.act_dim, self.latent_dim))

    @property
    def slot_dim(self) -> int:
        if self.mode == MessageMode.action_only:
            return self.act_dim
        return self.latent_dim + self.act_dim

    @property
    def payload_dim(self) -> int:
        return self.n_agents * self.slot_dim

    @property
    def feature_dim(self) -> int:
        """Width of the model input: masked payload followed by one validity bit per slot."""
        return self.payload_dim + self.n_agents

    def slot_offset(self, slot: int) -> int:
        if not 0 <= slot < self.n_agents:
            raise SlotError(slot, f"slot {slot} outside 0..{self.n_agents - 1}")
        return slot * self.slot_dim

    def pack(self, z_pred, action) -> np.ndarray:
        action = np.asarray(action, dtype=np.float64)
        if action.shape[-1] != self.act_dim:
            raise ShapeMismatchError("message.action", self.act_dim, action.shape[-1])
        if self.mode == MessageMode.action_only:
            return action
        z_pred = np.asarray(z_pred, dtype=np.float64)
        if z_pred.shape[-1] != self.latent_dim:
            raise ShapeMismatchError("message.latent", self.latent_dim, z_pred.shape[-1])
        return np.concatenate([z_pred, action], axis=-1)


@dataclass(frozen=True)
class Message:
    """One immutable message. ``provenance`` is informational and not sent on the wire."""

    layout: MessageLayout
    payload: np.ndarray
    validity: tuple[bool, ...]
    provenance: tuple[Provenance, ...] = field(default=(), compare=False)

    def __post_init__(self):
        payload = np.array(self.payload, dtype=np.float64).reshape(-1)
        if payload.size != self.layout.payload_dim:
            raise ShapeMismatchError("message.payload", self.layout.payload_dim, payload.size)
        if len(self.validity) != self.layout.n_agents:
            raise ShapeMismatchError("message.validity", self.layout.n_agents, len(self.validity))
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "validity", tuple(bool(v) for v in self.validity))
        if not self.provenance:
            provenance = tuple(Provenance.live if v else Provenance.empty for v in self.validity)
            object.__setattr__(self, "provenance", provenance)

    def __eq__(self, other):
        if not isinstance(other, Message):
            return NotImplemented
        return (
            self.layout == other.layout
            and self.validity == other.validity
            and np.array_equal(self.payload, other.payload)
        )

    def __hash__(self):
        return hash((self.layout, self.validity, self.payload.tobytes()))

    def slot(self, slot: int) -> np.ndarray:
        offset = self.layout.slot_offset(slot)
        return self.payload[offset:offset + self.layout.slot_dim]

    def read_slot(self, slot: int) -> tuple[np.ndarray | None, np.ndarray]:
        """Return ``(z_pred, action)``; ``z_pred`` is None in action-only mode."""
        content = self.slot(slot)
        if self.layout.mode == MessageMode.action_only:
            return None, content.copy()
        return content[: self.layout.latent_dim].copy(), content[self.layout.latent_dim:].copy()

    def features(self) -> np.ndarray:
        return MessageBatch.from_messages([self]).features()[0]

    def with_provenance(self, provenance: Provenance) -> "Message":
        marks = tuple(provenance if v else Provenance.empty for v in self.validity)
        return Message(self.layout, self.payload, self.validity, marks)


def empty_message(n_agents: int, act_dim: int, latent_dim: int, mode: MessageMode = MessageMode.full) -> Message:
    layout = MessageLayout(n_agents, act_dim, latent_dim, mode)
    return Message(layout, np.zeros(layout.payload_dim), (False,) * n_agents)


def append_slot(message: Message, slot: int, z_pred, action) -> Message:
    """Fill ``slot`` with this agent's prediction; every other slot is copied as is."""
    layout = message.layout
    offset = layout.slot_offset(slot)
    if message.validity[slot]:
        raise SlotError(slot)
    payload = message.payload.copy()
    payload[offset:offset + layout.slot_dim] = layout.pack(z_pred, action)
    validity = list(message.validity)
    validity[slot] = True
    provenance = list(message.provenance)
    provenance[slot] = Provenance.live
    return Message(layout, payload, tuple(validity), tuple(provenance))


# ------------------- SCHEDULES -------------------
def empty_schedule(layout: MessageLayout, length: int) -> tuple[Message, ...]:
    message = Message(layout, np.zeros(layout.payload_dim), (False,) * layout.n_agents)
    return (message,) * length


def extend_schedule(schedule, slot: int, latents, actions) -> tuple[Message, ...]:
    """Append one agent's predicted trajectory, step by step, to a schedule."""
    if len(latents) != len(schedule) or len(actions) != len(schedule):
        raise ShapeMismatchError("schedule", len(schedule), (len(latents), len(actions)))
    return tuple(append_slot(m, slot, z, a) for m, z, a in zip(schedule, latents, actions))


def schedule_features(schedule) -> np.ndarray:
    return MessageBatch.from_messages(list(schedule)).features()


# ------------------- BATCHED MESSAGES -------------------
@dataclass
class MessageBatch:
    """
    Messages laid out as arrays: ``payload`` has shape (..., n, slot_dim) and
    ``validity`` shape (..., n). Used for training and batched planning.
    """

    layout: MessageLayout
    payload: np.ndarray
    validity: np.ndarray

    @classmethod
    def empty(cls, layout: MessageLayout, leading_shape: tuple) -> "MessageBatch":
        return cls(
            layout,
            np.zeros(tuple(leading_shape) + (layout.n_agents, layout.slot_dim)),
            np.zeros(tuple(leading_shape) + (layout.n_agents,), dtype=bool),
        )

    @classmethod
    def from_messages(cls, messages) -> "MessageBatch":
        layout = messages[0].layout
        payload = np.stack([m.payload for m in messages]).reshape(len(messages), layout.n_agents, layout.slot_dim)
        validity = np.array([m.validity for m in messages], dtype=bool)
        return cls(layout, payload, validity)

    @property
    def leading_shape(self) -> tuple:
        return self.validity.shape[:-1]

    def with_slot(self, slot: int, z_pred, action) -> "MessageBatch":
        self.layout.slot_offset(slot)
        payload = self.payload.copy()
        validity = self.validity.copy()
        payload[..., slot, :] = self.layout.pack(z_pred, action)
        validity[..., slot] = True
        return MessageBatch(self.layout, payload, validity)

    def features(self) -> np.ndarray:
        masked = self.payload * self.validity[..., None]
        flat = masked.reshape(self.leading_shape + (self.layout.payload_dim,))
        return np.concatenate([flat, self.validity.astype(np.float64)], axis=-1)


# ------------------- WIRE FORMAT -------------------
def serialize(message: Message) -> bytes:
    """Header, validity bitmap (LSB first), then slot-major little-endian float32 payload."""
    layout = message.layout
    header = _HEADER.pack(
        WIRE_MAGIC, WIRE_VERSION, layout.n_agents, layout.act_dim, layout.latent_dim, _MODE_CODES[layout.mode]
    )
    bitmap = np.packbits(np.array(message.validity, dtype=np.uint8), bitorder="little").tobytes()
    return header + bitmap + message.payload.astype("<f4").tobytes()


def deserialize(blob: bytes) -> Message:
    if len(blob) < _HEADER.size:
        raise WireFormatError("message shorter than its header")
    magic, version, n_agents, act_dim, latent_dim, mode_code = _HEADER.unpack_from(blob)
    if magic != WIRE_MAGIC:
        raise WireFormatError(f"bad message magic {magic!r}")
    if version != WIRE_VERSION:
        raise WireFormatError(f"unsupported message version {version}")
    modes = {code: mode for mode, code in _MODE_CODES.items()}
    if mode_code not in modes:
        raise WireFormatError(f"unknown message mode {mode_code}")
    layout = MessageLayout(n_agents, act_dim, latent_dim, modes[mode_code])
    bitmap_len = (n_agents + 7) // 8
    expected = _HEADER.size + bitmap_len + 4 * layout.payload_dim
    if len(blob) != expected:
        raise WireFormatError(f"message length {len(blob)} != expected {expected}")
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, count=bitmap_len, offset=_HEADER.size), bitorder="little")
    payload = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size + bitmap_len).astype(np.float64)
    return Message(layout, payload, tuple(bool(b) for b in bits[:n_agents]))


# ------------------- LINKS AND CACHE -------------------
class LinkModel:
    """Independent Bernoulli drops per link and per step, reproducible from ``seed``."""

    def __init__(self, drop_prob: float = 0.0, seed: int | None = None, per_link: dict | None = None):
        for p in [drop_prob, *(per_link or {}).values()]:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"drop probability {p} outside [0, 1]")
        self.drop_prob = drop_prob
        self.per_link = dict(per_link or {})
        self.rng = np.random.default_rng(seed)
        self.attempts = 0
        self.drops = 0

    def delivers(self, sender: int, receiver: int) -> bool:
        self.attempts += 1
        p = self.per_link.get((sender, receiver), self.drop_prob)
        if p > 0.0 and self.rng.random() < p:
            self.drops += 1
            return False
        return True


class CommCache:
    """Last schedule each receiver got, and when. Owned by the receiving side."""

    def __init__(self):
        self._entries: dict[int, tuple[int, tuple[Message, ...]]] = {}
        self.hits = 0
        self.misses = 0
        self.deliveries = 0

    def clear(self) -> None:
        self._entries.clear()

    def store(self, receiver: int, t: int, schedule) -> None:
        self._entries[receiver] = (t, tuple(schedule))

    def lookup(self, receiver: int, t: int, length: int) -> tuple[Message, ...] | None:
        """The cached schedule shifted to start at ``t``, padded with its last step."""
        if receiver not in self._entries:
            return None
        stored_at, schedule = self._entries[receiver]
        age = t - stored_at
        if age < 0 or age >= len(schedule):
            return None
        shifted = list(schedule[age:])
        shifted += [shifted[-1]] * (length - len(shifted))
        return tuple(m.with_provenance(Provenance.cached) for m in shifted[:length])


def transmit(schedule, link: LinkModel, cache: CommCache, sender: int, receiver: int, t: int, wire: bool = False):
    """
    Deliver ``schedule`` from ``sender`` to ``receiver`` at step ``t``.

    A delivered schedule refreshes the receiver's cache. A dropped one is
    replaced by the cached prediction, or by an all-invalid schedule when the
    cache has nothing for this step.
    """
    schedule = tuple(schedule)
    if link.delivers(sender, receiver):
        if wire:
            schedule = tuple(deserialize(serialize(m)) for m in schedule)
        cache.store(receiver, t, schedule)
        cache.deliveries += 1
        return schedule
    cached = cache.lookup(receiver, t, len(schedule))
    if cached is None:
        cache.misses += 1
        logger.debug("link %d->%d dropped at t=%d, cache empty", sender, receiver, t)
        return empty_schedule(schedule[0].layout, len(schedule))
    cache.hits += 1
    logger.debug("link %d->%d dropped at t=%d, using cached prediction", sender, receiver, t)
    return cached
