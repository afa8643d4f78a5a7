"""EDR histories and signed, digested event data records.

An EventData record is one participant's account of an accident: location,
timestamp, a window of EDR samples, a digest over the canonical
serialization of those fields, and the reporter's signature over the digest.
Witness EDR samples may carry speed observations of other vehicles, which
later feed forensic cross-examination.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Protocol

from . import encoding as enc
from .crypto import DmvRegistry, KeyPair, VehicleId, digest, sign
from .encoding import Cursor
from .errors import UnregisteredVehicle
from .world import Position

AccidentId = bytes  # 16-byte content-derived identifier
ACCIDENT_ID_SIZE = 16


class ReporterRole(enum.IntEnum):
    ACCIDENT = 1
    WITNESS = 2


@dataclass(frozen=True)
class SpeedObservation:
    """One vehicle's sensor estimate of another vehicle's speed."""

    subject: VehicleId
    estimated_speed: float


@dataclass(frozen=True)
class EdrSample:
    t: int  # milliseconds since scenario start
    position: Position
    speed: float
    heading: float  # degrees in [0, 360)
    observations: tuple[SpeedObservation, ...] = ()

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")
        if not 0.0 <= self.heading < 360.0:
            raise ValueError(f"heading {self.heading} outside [0, 360)")


class EdrLog:
    """Bounded, time-ordered recorder. Appending drops the oldest sample once
    capacity is reached; timestamps must be strictly increasing."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._samples: deque[EdrSample] = deque(maxlen=capacity)

    def append(self, sample: EdrSample) -> None:
        if self._samples and sample.t <= self._samples[-1].t:
            raise ValueError(
                f"sample time {sample.t} not after {self._samples[-1].t}"
            )
        self._samples.append(sample)

    def samples(self) -> tuple[EdrSample, ...]:
        return tuple(self._samples)

    def __len__(self) -> int:
        return len(self._samples)


def edr_window(log: EdrLog, t_center: int, half_width: int) -> tuple[EdrSample, ...]:
    """Samples with |t - t_center| <= half_width, order preserved."""
    if half_width < 0:
        raise ValueError("half_width must be non-negative")
    return tuple(s for s in log.samples() if abs(s.t - t_center) <= half_width)


@dataclass(frozen=True)
class EventData:
    accident_id: AccidentId
    reporter: VehicleId
    role: ReporterRole
    location: Position
    timestamp: int
    edr_window: tuple[EdrSample, ...]
    digest: bytes
    signature: bytes

    def content_digest(self) -> bytes:
        """Digest recomputed from the record's own fields."""
        return digest(event_preimage(
            self.accident_id, self.reporter, self.role,
            self.location, self.timestamp, self.edr_window,
        ))


class VehicleIdentity(Protocol):
    """What event creation needs from a vehicle actor."""

    vehicle_id: VehicleId
    position: Position
    edr_log: EdrLog
    keypair: KeyPair


@dataclass(frozen=True)
class WindowParams:
    t_center: int
    half_width: int


def make_event_data(
    vehicle: VehicleIdentity,
    role: ReporterRole,
    accident_id: AccidentId,
    now: int,
    window: WindowParams,
    registry: DmvRegistry,
) -> EventData:
    """Build a signed event record from the vehicle's current state.

    Deterministic: identical inputs give a byte-identical record.
    """
    if vehicle.vehicle_id not in registry:
        raise UnregisteredVehicle(f"vehicle {vehicle.vehicle_id} not registered")
    samples = edr_window(vehicle.edr_log, window.t_center, window.half_width)
    preimage = event_preimage(
        accident_id, vehicle.vehicle_id, role, vehicle.position, now, samples
    )
    d = digest(preimage)
    return EventData(
        accident_id=accident_id,
        reporter=vehicle.vehicle_id,
        role=role,
        location=vehicle.position,
        timestamp=now,
        edr_window=samples,
        digest=d,
        signature=sign(vehicle.keypair.secret, d),
    )


def derive_accident_id(
    first_cell: int, accident_time: int, colliding: Iterable[VehicleId]
) -> AccidentId:
    """Content-derived accident name: digest of (cell of the first accident
    vehicle, accident timestamp, sorted accident vehicle ids), truncated to
    16 bytes."""
    payload = (
        enc.u32(first_cell)
        + enc.u64(accident_time)
        + enc.list_([enc.u64(v) for v in sorted(colliding)])
    )
    return digest(payload)[:ACCIDENT_ID_SIZE]


# --- canonical encoding -----------------------------------------------------
# Field order is normative: see tests/vectors/ for frozen byte-level vectors.

def encode_position(p: Position) -> bytes:
    return enc.f64(p.x) + enc.f64(p.y)


def decode_position(cur: Cursor) -> Position:
    return Position(x=cur.f64(), y=cur.f64())


def encode_observation(o: SpeedObservation) -> bytes:
    return enc.u64(o.subject) + enc.f64(o.estimated_speed)


def decode_observation(cur: Cursor) -> SpeedObservation:
    return SpeedObservation(subject=cur.u64(), estimated_speed=cur.f64())


def encode_sample(s: EdrSample) -> bytes:
    return (
        enc.u64(s.t)
        + encode_position(s.position)
        + enc.f64(s.speed)
        + enc.f64(s.heading)
        + enc.list_([encode_observation(o) for o in s.observations])
    )


def decode_sample(cur: Cursor) -> EdrSample:
    t = cur.u64()
    position = decode_position(cur)
    speed = cur.f64()
    heading = cur.f64()
    observations = tuple(decode_observation(cur) for _ in range(cur.count()))
    return EdrSample(t=t, position=position, speed=speed, heading=heading,
                     observations=observations)


def event_preimage(
    accident_id: AccidentId,
    reporter: VehicleId,
    role: ReporterRole,
    location: Position,
    timestamp: int,
    samples: tuple[EdrSample, ...],
) -> bytes:
    """Digest input: (accident_id, reporter, role, location, timestamp,
    edr_window) in that order."""
    return (
        enc.bytes_(accident_id)
        + enc.u64(reporter)
        + enc.u8(int(role))
        + encode_position(location)
        + enc.u64(timestamp)
        + enc.list_([encode_sample(s) for s in samples])
    )


def encode_event(e: EventData) -> bytes:
    """Full wire form: preimage fields followed by digest and signature."""
    return (
        event_preimage(e.accident_id, e.reporter, e.role, e.location,
                       e.timestamp, e.edr_window)
        + enc.bytes_(e.digest)
        + enc.bytes_(e.signature)
    )


def decode_event(cur: Cursor) -> EventData:
    accident_id = cur.bytes_()
    reporter = cur.u64()
    raw_role = cur.u8()
    try:
        role = ReporterRole(raw_role)
    except ValueError:
        raise enc.DecodeError(f"unknown reporter role {raw_role}") from None
    location = decode_position(cur)
    timestamp = cur.u64()
    samples = tuple(decode_sample(cur) for _ in range(cur.count()))
    d = cur.bytes_()
    signature = cur.bytes_()
    return EventData(
        accident_id=accident_id, reporter=reporter, role=role,
        location=location, timestamp=timestamp, edr_window=samples,
        digest=d, signature=signature,
    )


def synthesize_edr_log(
    vehicle_id: VehicleId,
    position: Position,
    velocity: tuple[float, float],
    now: int,
    capacity: int,
    sample_interval: int,
    self_speed: float | None = None,
    observed_speeds: dict[VehicleId, float] | None = None,
) -> EdrLog:
    """Deterministic EDR history up to `now`: samples every sample_interval
    ms, positions extrapolated backwards at constant velocity.

    `self_speed` overrides the speed field (a faulty or lying sensor);
    `observed_speeds` attaches per-sample speed observations of other
    vehicles.
    """
    vx, vy = velocity
    true_speed = math.hypot(vx, vy)
    speed = true_speed if self_speed is None else self_speed
    heading = math.degrees(math.atan2(vy, vx)) % 360.0 if true_speed > 0 else 0.0
    observations = tuple(
        SpeedObservation(subject=sid, estimated_speed=observed_speeds[sid])
        for sid in sorted(observed_speeds or {})
    )
    log = EdrLog(capacity)
    times = []
    t = now
    while t >= 0 and len(times) < capacity:
        times.append(t)
        t -= sample_interval
    for t in reversed(times):
        dt_s = (now - t) / 1000.0
        log.append(EdrSample(
            t=t,
            position=Position(x=position.x - vx * dt_s, y=position.y - vy * dt_s),
            speed=speed,
            heading=heading,
            observations=observations,
        ))
    return log
