"""Deterministic discrete-event simulation of one accident's protocol run.

The scheduler is a time-ordered priority queue with ties broken by
(deliver_time, sender id, sequence number); all randomness flows from the
scenario seed. Attacks are behavioral wrappers around protocol_step, so every
adversarial path exercises the same protocol seam the honest code uses.
"""

from __future__ import annotations

import dataclasses
import enum
import heapq
import json
import os
from dataclasses import dataclass

from . import encoding as enc
from .crypto import (
    DmvRegistry,
    KeyPair,
    RegistryEntry,
    VehicleId,
    digest,
    keygen,
    sign,
    verify,
)
from .errors import (
    EmptyFederation,
    InvalidAttack,
    InvalidConfig,
    LedgerAppendError,
    PoefedError,
)
from .events import (
    AccidentId,
    EventData,
    ReporterRole,
    edr_window,
    event_preimage,
    synthesize_edr_log,
)
from .ledger import (
    Ledger,
    UnconfirmedEventRecord,
    UnconfirmedReason,
    append_block,
    ledger_to_dict,
    write_ledger_file,
    write_unconfirmed_file,
)
from .protocol import (
    AccidentInfo,
    EventDataBroadcast,
    EventGenerationRequest,
    Federation,
    FederationFormationRequest,
    IncentiveOutcome,
    Message,
    NewBlockAnnouncement,
    NodeState,
    ProtocolContext,
    ProtocolParams,
    Role,
    TimerExpiry,
    TimerKind,
    UnconfirmedSubmission,
    ValidationFailure,
    Verdict,
    VerifierValidation,
    WitnessConfirm,
    apply_incentives,
    build_validation,
    detect_accident,
    encode_message,
    protocol_step,
    select_verifiers,
    validate_event,
)
from .world import (
    BaseStation,
    Position,
    VehicleSite,
    WorldState,
    dsrc_reachable,
    scene_position,
    vehicular_network,
)

DMV = "dmv"  # transcript label for the authority endpoint


# --- scenario configuration ---------------------------------------------------

@dataclass(frozen=True)
class VehicleSpec:
    vehicle_id: VehicleId
    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    reputation: float = 50.0
    self_speed: float | None = None  # sensor override, e.g. a faulty EDR
    observed_speeds: tuple[tuple[VehicleId, float], ...] = ()
    key_seed: bytes | None = None


@dataclass(frozen=True)
class WorldSpec:
    dsrc_range: float
    stations: tuple[BaseStation, ...]
    vehicles: tuple[VehicleSpec, ...]
    edr_capacity: int = 600
    edr_sample_interval: int = 100


@dataclass(frozen=True)
class AccidentSpec:
    colliding: tuple[VehicleId, ...]
    time: int


@dataclass(frozen=True)
class LatencyModel:
    dsrc: int = 10
    cellular: int = 50


@dataclass(frozen=True)
class TamperEvent:
    attacker: VehicleId
    field: str  # speed | location_x | location_y | timestamp
    delta: float


@dataclass(frozen=True)
class Impersonate:
    attacker: VehicleId
    claimed_id: VehicleId


@dataclass(frozen=True)
class FakeWitnessRelay:
    relayer: VehicleId
    fake_witnesses: tuple[VehicleId, ...]
    relay_delay: int


@dataclass(frozen=True)
class ColludingVerifiers:
    members: tuple[VehicleId, ...]
    behavior: str = "approve_tampered"


AttackSpec = TamperEvent | Impersonate | FakeWitnessRelay | ColludingVerifiers

TAMPER_FIELDS = ("speed", "location_x", "location_y", "timestamp")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    world: WorldSpec
    accident: AccidentSpec
    params: ProtocolParams = ProtocolParams()
    latency: LatencyModel = LatencyModel()
    attacks: tuple[AttackSpec, ...] = ()


def _require(cond: bool, path: str, detail: str) -> None:
    if not cond:
        raise InvalidConfig(path, detail)


def validate_config(cfg: ScenarioConfig) -> None:
    _require(isinstance(cfg.seed, int) and 0 <= cfg.seed < 2 ** 64,
             "seed", "must be an integer in [0, 2^64)")
    w = cfg.world
    _require(w.dsrc_range > 0, "world.dsrc_range", "must be positive")
    _require(len(w.stations) >= 1, "world.base_stations",
             "at least one required")
    cells = [s.cell_id for s in w.stations]
    _require(len(set(cells)) == len(cells), "world.base_stations",
             "duplicate cell_id")
    _require(len(w.vehicles) >= 1, "world.vehicles", "at least one required")
    _require(w.edr_capacity >= 1, "world.edr_capacity", "must be >= 1")
    _require(w.edr_sample_interval >= 1, "world.edr_sample_interval",
             "must be >= 1")
    ids = set()
    for i, v in enumerate(w.vehicles):
        path = f"world.vehicles[{i}]"
        _require(v.vehicle_id >= 0, f"{path}.id", "must be non-negative")
        _require(v.vehicle_id not in ids, f"{path}.id",
                 f"duplicate id {v.vehicle_id}")
        ids.add(v.vehicle_id)
        _require(0.0 <= v.reputation <= 100.0, f"{path}.reputation",
                 "must be in [0, 100]")
        _require(v.self_speed is None or v.self_speed >= 0,
                 f"{path}.self_speed", "must be non-negative")
        for subject, speed in v.observed_speeds:
            _require(speed >= 0, f"{path}.observed_speeds.{subject}",
                     "must be non-negative")
        _require(v.key_seed is None or len(v.key_seed) == 32,
                 f"{path}.key_seed", "must be 32 bytes")
    for j, (subject, _) in enumerate(
            (s, sp) for v in w.vehicles for s, sp in v.observed_speeds):
        _require(subject in ids, f"world.vehicles.observed_speeds[{j}]",
                 f"unknown vehicle {subject}")
    a = cfg.accident
    _require(len(a.colliding) >= 1, "accident.colliding",
             "at least one required")
    _require(len(set(a.colliding)) == len(a.colliding), "accident.colliding",
             "duplicate ids")
    for v in a.colliding:
        _require(v in ids, "accident.colliding", f"unknown vehicle {v}")
    _require(a.time >= 0, "accident.time", "must be non-negative")
    p = cfg.params
    _require(p.m >= 1, "protocol.m", "must be >= 1")
    _require(p.threshold_n is None or p.threshold_n >= 1,
             "protocol.threshold_n", "must be >= 1 or null")
    _require(0.0 <= p.min_reputation <= 100.0, "protocol.min_reputation",
             "must be in [0, 100]")
    _require(p.reply_window >= 0, "protocol.reply_window_ms",
             "must be non-negative")
    _require(p.validation_deadline >= 0, "protocol.validation_deadline_ms",
             "must be non-negative")
    _require(p.window_half_width >= 0, "protocol.window_half_width_ms",
             "must be non-negative")
    _require(cfg.latency.dsrc >= 0, "latency.dsrc_ms", "must be non-negative")
    _require(cfg.latency.cellular >= 0, "latency.cellular_ms",
             "must be non-negative")
    for i, attack in enumerate(cfg.attacks):
        _validate_attack(attack, ids, f"attacks[{i}]", InvalidConfig)


def _validate_attack(spec: AttackSpec, ids: set[VehicleId], path: str,
                     err: type) -> None:
    def fail(sub: str, detail: str):
        if err is InvalidConfig:
            raise InvalidConfig(f"{path}.{sub}", detail)
        raise InvalidAttack(f"{path}.{sub}: {detail}")

    if isinstance(spec, TamperEvent):
        if spec.attacker not in ids:
            fail("attacker", f"unknown vehicle {spec.attacker}")
        if spec.field not in TAMPER_FIELDS:
            fail("field", f"must be one of {', '.join(TAMPER_FIELDS)}")
    elif isinstance(spec, Impersonate):
        if spec.attacker not in ids:
            fail("attacker", f"unknown vehicle {spec.attacker}")
    elif isinstance(spec, FakeWitnessRelay):
        if spec.relayer not in ids:
            fail("relayer", f"unknown vehicle {spec.relayer}")
        if not spec.fake_witnesses:
            fail("fake_witnesses", "at least one required")
        for v in spec.fake_witnesses:
            if v not in ids:
                fail("fake_witnesses", f"unknown vehicle {v}")
        if spec.relay_delay < 0:
            fail("relay_delay_ms", "must be non-negative")
    elif isinstance(spec, ColludingVerifiers):
        if not spec.members:
            fail("members", "at least one required")
        for v in spec.members:
            if v not in ids:
                fail("members", f"unknown vehicle {v}")
        if spec.behavior != "approve_tampered":
            fail("behavior", "only 'approve_tampered' is supported")
    else:
        fail("kind", f"unknown attack type {type(spec).__name__}")


def _as_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidConfig(path, "must be an integer")
    return value


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidConfig(path, "must be a number")
    return float(value)


def _as_list(value, path: str) -> list:
    if not isinstance(value, list):
        raise InvalidConfig(path, "must be a list")
    return value


def _as_dict(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise InvalidConfig(path, "must be an object")
    return value


def parse_attack(data: dict, path: str = "attack") -> AttackSpec:
    data = _as_dict(data, path)
    kind = data.get("kind")
    if kind == "tamper_event":
        return TamperEvent(
            attacker=_as_int(data.get("attacker"), f"{path}.attacker"),
            field=str(data.get("field", "")),
            delta=_as_number(data.get("delta"), f"{path}.delta"),
        )
    if kind == "impersonate":
        return Impersonate(
            attacker=_as_int(data.get("attacker"), f"{path}.attacker"),
            claimed_id=_as_int(data.get("claimed_id"), f"{path}.claimed_id"),
        )
    if kind == "fake_witness_relay":
        return FakeWitnessRelay(
            relayer=_as_int(data.get("relayer"), f"{path}.relayer"),
            fake_witnesses=tuple(
                _as_int(v, f"{path}.fake_witnesses[{i}]")
                for i, v in enumerate(_as_list(data.get("fake_witnesses"),
                                               f"{path}.fake_witnesses"))),
            relay_delay=_as_int(data.get("relay_delay_ms"),
                                f"{path}.relay_delay_ms"),
        )
    if kind == "colluding_verifiers":
        return ColludingVerifiers(
            members=tuple(
                _as_int(v, f"{path}.members[{i}]")
                for i, v in enumerate(_as_list(data.get("members"),
                                               f"{path}.members"))),
            behavior=str(data.get("behavior", "approve_tampered")),
        )
    raise InvalidConfig(f"{path}.kind", f"unknown attack kind {kind!r}")


def parse_scenario(data: dict) -> ScenarioConfig:
    data = _as_dict(data, "scenario")
    seed = _as_int(data.get("seed", 0), "seed")

    wd = _as_dict(data.get("world"), "world")
    stations = []
    for i, s in enumerate(_as_list(wd.get("base_stations"),
                                   "world.base_stations")):
        s = _as_dict(s, f"world.base_stations[{i}]")
        stations.append(BaseStation(
            cell_id=_as_int(s.get("cell_id"),
                            f"world.base_stations[{i}].cell_id"),
            position=Position(
                x=_as_number(s.get("x"), f"world.base_stations[{i}].x"),
                y=_as_number(s.get("y"), f"world.base_stations[{i}].y"),
            ),
        ))
    vehicles = []
    for i, v in enumerate(_as_list(wd.get("vehicles"), "world.vehicles")):
        v = _as_dict(v, f"world.vehicles[{i}]")
        path = f"world.vehicles[{i}]"
        observed = v.get("observed_speeds", {})
        observed = _as_dict(observed, f"{path}.observed_speeds")
        observed_speeds = tuple(sorted(
            (_as_int(int(k) if isinstance(k, str) and k.isdigit() else k,
                     f"{path}.observed_speeds key"),
             _as_number(val, f"{path}.observed_speeds.{k}"))
            for k, val in observed.items()))
        key_seed = v.get("key_seed")
        if key_seed is not None:
            try:
                key_seed = bytes.fromhex(key_seed)
            except (TypeError, ValueError):
                raise InvalidConfig(f"{path}.key_seed",
                                    "must be a hex string") from None
        vehicles.append(VehicleSpec(
            vehicle_id=_as_int(v.get("id"), f"{path}.id"),
            x=_as_number(v.get("x"), f"{path}.x"),
            y=_as_number(v.get("y"), f"{path}.y"),
            vx=_as_number(v.get("vx", 0.0), f"{path}.vx"),
            vy=_as_number(v.get("vy", 0.0), f"{path}.vy"),
            reputation=_as_number(v.get("reputation", 50.0),
                                  f"{path}.reputation"),
            self_speed=(None if v.get("self_speed") is None
                        else _as_number(v.get("self_speed"),
                                        f"{path}.self_speed")),
            observed_speeds=observed_speeds,
            key_seed=key_seed,
        ))
    world = WorldSpec(
        dsrc_range=_as_number(wd.get("dsrc_range", 300.0),
                              "world.dsrc_range"),
        stations=tuple(stations),
        vehicles=tuple(vehicles),
        edr_capacity=_as_int(wd.get("edr_capacity", 600),
                             "world.edr_capacity"),
        edr_sample_interval=_as_int(wd.get("edr_sample_interval", 100),
                                    "world.edr_sample_interval"),
    )

    ad = _as_dict(data.get("accident"), "accident")
    accident = AccidentSpec(
        colliding=tuple(_as_int(v, f"accident.colliding[{i}]")
                        for i, v in enumerate(
                            _as_list(ad.get("colliding"),
                                     "accident.colliding"))),
        time=_as_int(ad.get("time"), "accident.time"),
    )

    pd = _as_dict(data.get("protocol", {}), "protocol")
    threshold = pd.get("threshold_n")
    params = ProtocolParams(
        m=_as_int(pd.get("m", 5), "protocol.m"),
        threshold_n=(None if threshold is None
                     else _as_int(threshold, "protocol.threshold_n")),
        min_reputation=_as_number(pd.get("min_reputation", 30.0),
                                  "protocol.min_reputation"),
        reply_window=_as_int(pd.get("reply_window_ms", 500),
                             "protocol.reply_window_ms"),
        validation_deadline=_as_int(pd.get("validation_deadline_ms", 2000),
                                    "protocol.validation_deadline_ms"),
        window_half_width=_as_int(pd.get("window_half_width_ms", 5000),
                                  "protocol.window_half_width_ms"),
    )

    ld = _as_dict(data.get("latency", {}), "latency")
    latency = LatencyModel(
        dsrc=_as_int(ld.get("dsrc_ms", 10), "latency.dsrc_ms"),
        cellular=_as_int(ld.get("cellular_ms", 50), "latency.cellular_ms"),
    )

    attacks = tuple(
        parse_attack(a, f"attacks[{i}]")
        for i, a in enumerate(_as_list(data.get("attacks", []), "attacks")))

    cfg = ScenarioConfig(seed=seed, world=world, accident=accident,
                         params=params, latency=latency, attacks=attacks)
    validate_config(cfg)
    return cfg


def load_scenario(path: str) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InvalidConfig(path, f"cannot read scenario: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(path, f"not valid JSON: {exc}") from None
    return parse_scenario(data)


def inject_attack(cfg: ScenarioConfig, spec: AttackSpec) -> ScenarioConfig:
    """Returns a config with the attack attached; base behavior unchanged."""
    ids = {v.vehicle_id for v in cfg.world.vehicles}
    _validate_attack(spec, ids, "attack", InvalidAttack)
    return dataclasses.replace(cfg, attacks=cfg.attacks + (spec,))


def load_attack(path: str) -> AttackSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InvalidAttack(f"cannot read attack spec: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InvalidAttack(f"not valid JSON: {exc}") from None
    try:
        return parse_attack(data)
    except InvalidConfig as exc:
        raise InvalidAttack(str(exc)) from None


# --- outcome types --------------------------------------------------------------

class Classification(enum.Enum):
    NORMAL = "Normal"
    NO_WITNESS = "NoWitness"
    NO_VERIFIER = "NoVerifier"
    NO_WITNESS_NO_VERIFIER = "NoWitnessNoVerifier"


@dataclass(frozen=True)
class TranscriptEntry:
    send_time: int
    deliver_time: int
    sender: VehicleId | str
    receiver: VehicleId | str
    message: Message


@dataclass(frozen=True)
class AttackOutcome:
    kind: str
    outcome: str


@dataclass
class Metrics:
    blocks_produced: int
    events_received: int
    events_accepted: int
    events_rejected: dict[str, int]
    unexpected_messages: int
    rejected_blocks: tuple[str, ...]
    attack_outcomes: tuple[AttackOutcome, ...]
    reputation_changes: dict[VehicleId, float]


@dataclass
class SimOutcome:
    seed: int
    accident_id: AccidentId
    classification: Classification
    ledger: Ledger
    transcript: tuple[TranscriptEntry, ...]
    federation: Federation | None
    metrics: Metrics
    final_registry: DmvRegistry


def classify_outcome(transcript: tuple[TranscriptEntry, ...] | list,
                     cfg: ScenarioConfig) -> Classification:
    """Re-derive the scenario class from the transcript alone: witnesses are
    the vehicles that received an event-generation request from a colliding
    vehicle; a federation existed iff any verifier spoke."""
    colliding = set(cfg.accident.colliding)
    witnesses = {
        e.receiver for e in transcript
        if isinstance(e.message, EventGenerationRequest)
        and e.sender in colliding and isinstance(e.receiver, int)
        and e.receiver not in colliding
    }
    federated = any(isinstance(e.message, VerifierValidation)
                    for e in transcript)
    if witnesses and federated:
        return Classification.NORMAL
    if witnesses:
        return Classification.NO_VERIFIER
    if federated:
        return Classification.NO_WITNESS
    return Classification.NO_WITNESS_NO_VERIFIER


# --- attack behaviors --------------------------------------------------------

@dataclass(frozen=True)
class _TargetedSend:
    """Fabric-level directive emitted only by attack wrappers: deliver this
    message to the listed recipients after `delay`, ignoring radio range."""
    message: Message
    recipients: tuple[VehicleId, ...]
    delay: int


def _tampered_copy(event: EventData, fld: str, delta: float) -> EventData:
    if fld == "speed":
        samples = tuple(
            dataclasses.replace(s, speed=max(0.0, s.speed + delta))
            for s in event.edr_window)
        return dataclasses.replace(event, edr_window=samples)
    if fld == "location_x":
        return dataclasses.replace(
            event, location=Position(event.location.x + delta,
                                     event.location.y))
    if fld == "location_y":
        return dataclasses.replace(
            event, location=Position(event.location.x,
                                     event.location.y + delta))
    if fld == "timestamp":
        return dataclasses.replace(event,
                                   timestamp=event.timestamp + int(delta))
    raise InvalidAttack(f"unknown tamper field {fld!r}")


class _TamperBehavior:
    """Mutates the attacker's outgoing event after signing, leaving the stale
    digest and signature in place."""

    def __init__(self, inner, spec: TamperEvent):
        self.inner = inner
        self.spec = spec

    def __call__(self, node, inp, now, ctx):
        out, timers = self.inner(node, inp, now, ctx)
        patched = []
        for msg in out:
            if (isinstance(msg, EventDataBroadcast)
                    and msg.event.reporter == self.spec.attacker):
                patched.append(EventDataBroadcast(event=_tampered_copy(
                    msg.event, self.spec.field, self.spec.delta)))
            else:
                patched.append(msg)
        return patched, timers


class _ImpersonateBehavior:
    """Rewrites the reporter to a claimed identity and recomputes the digest
    so only the signature check can catch the swap."""

    def __init__(self, inner, spec: Impersonate):
        self.inner = inner
        self.spec = spec

    def __call__(self, node, inp, now, ctx):
        out, timers = self.inner(node, inp, now, ctx)
        patched = []
        for msg in out:
            if (isinstance(msg, EventDataBroadcast)
                    and msg.event.reporter == self.spec.attacker):
                event = dataclasses.replace(msg.event,
                                            reporter=self.spec.claimed_id)
                event = dataclasses.replace(event,
                                            digest=event.content_digest())
                patched.append(EventDataBroadcast(event=event))
            else:
                patched.append(msg)
        return patched, timers


class _RelayBehavior:
    """Forwards the first event-generation request it sees to vehicles beyond
    radio range, after an extra relay delay plus one short-range hop."""

    def __init__(self, inner, spec: FakeWitnessRelay, dsrc_latency: int):
        self.inner = inner
        self.spec = spec
        self.dsrc_latency = dsrc_latency
        self.fired = False

    def __call__(self, node, inp, now, ctx):
        out, timers = self.inner(node, inp, now, ctx)
        if isinstance(inp, EventGenerationRequest) and not self.fired:
            self.fired = True
            out = list(out)
            out.append(_TargetedSend(
                message=inp,
                recipients=tuple(sorted(self.spec.fake_witnesses)),
                delay=self.spec.relay_delay + self.dsrc_latency,
            ))
        return out, timers


class _FakeWitnessBehavior:
    """Responds to any relayed request regardless of the reply window and
    spoofs its reported location to the accident scene."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, node, inp, now, ctx):
        if not isinstance(inp, EventGenerationRequest):
            return self.inner(node, inp, now, ctx)
        st = node.accident_state(inp.accident_id)
        if st.replied:
            return [], []
        st.replied = True
        st.role = Role.WITNESS
        info = ctx.accidents[inp.accident_id]
        samples = edr_window(node.edr_log, inp.sent_at,
                             ctx.params.window_half_width)
        preimage = event_preimage(inp.accident_id, node.vehicle_id,
                                  ReporterRole.WITNESS, info.scene, now,
                                  samples)
        d = digest(preimage)
        event = EventData(
            accident_id=inp.accident_id, reporter=node.vehicle_id,
            role=ReporterRole.WITNESS, location=info.scene, timestamp=now,
            edr_window=samples, digest=d,
            signature=sign(node.keypair.secret, d),
        )
        st.own_event = event
        st.cached_events[node.vehicle_id] = event
        return [WitnessConfirm(accident_id=inp.accident_id,
                               witness=node.vehicle_id),
                EventDataBroadcast(event=event)], []


class _ColludingBehavior:
    """Approves every cached event and signs the resulting candidate set."""

    def __init__(self, inner):
        self.inner = inner

    def __call__(self, node, inp, now, ctx):
        if (isinstance(inp, TimerExpiry)
                and inp.kind == TimerKind.EMIT_VALIDATION):
            st = node.accident_state(inp.accident_id)
            if st.role in (Role.VERIFIER, Role.LEAD_VERIFIER):
                return [build_validation(node, inp.accident_id, ctx,
                                         force_all_ok=True)], []
        return self.inner(node, inp, now, ctx)


def _build_behaviors(cfg: ScenarioConfig) -> dict[VehicleId, object]:
    behaviors: dict[VehicleId, object] = {}

    def wrap(vehicle: VehicleId, factory):
        behaviors[vehicle] = factory(behaviors.get(vehicle, protocol_step))

    for spec in cfg.attacks:
        if isinstance(spec, TamperEvent):
            wrap(spec.attacker,
                 lambda inner, s=spec: _TamperBehavior(inner, s))
        elif isinstance(spec, Impersonate):
            wrap(spec.attacker,
                 lambda inner, s=spec: _ImpersonateBehavior(inner, s))
        elif isinstance(spec, FakeWitnessRelay):
            wrap(spec.relayer,
                 lambda inner, s=spec: _RelayBehavior(
                     inner, s, cfg.latency.dsrc))
            for fake in spec.fake_witnesses:
                wrap(fake, _FakeWitnessBehavior)
        elif isinstance(spec, ColludingVerifiers):
            for member in spec.members:
                wrap(member, _ColludingBehavior)
    return behaviors


# --- simulation -----------------------------------------------------------------

def derive_federation_seed(seed: int, accident_id: AccidentId) -> int:
    return int.from_bytes(digest(enc.u64(seed) + accident_id)[:8], "big")


def build_world(spec: WorldSpec) -> WorldState:
    vehicles = {
        v.vehicle_id: VehicleSite(position=Position(v.x, v.y),
                                  velocity=(v.vx, v.vy))
        for v in spec.vehicles
    }
    return WorldState(vehicles=vehicles, base_stations=spec.stations,
                      dsrc_range=spec.dsrc_range)


def default_key_seed(vehicle_id: VehicleId) -> bytes:
    # independent of the scenario seed so reseeding only moves the federation
    return digest(b"poefed-vehicle-key" + enc.u64(vehicle_id))


def build_registry(spec: WorldSpec) -> tuple[DmvRegistry,
                                             dict[VehicleId, KeyPair]]:
    registry = DmvRegistry()
    keypairs: dict[VehicleId, KeyPair] = {}
    for v in sorted(spec.vehicles, key=lambda v: v.vehicle_id):
        seed = v.key_seed or default_key_seed(v.vehicle_id)
        kp = keygen(seed)
        keypairs[v.vehicle_id] = kp
        registry.register(RegistryEntry(
            vehicle_id=v.vehicle_id,
            plate=f"P{v.vehicle_id:06d}",
            vin=f"VIN{v.vehicle_id:010d}",
            public_key=kp.public,
            reputation=v.reputation,
        ))
    return registry, keypairs


@dataclass
class _Delivery:
    send_time: int
    sender: VehicleId | str
    receiver: VehicleId | str
    message: Message


@dataclass
class _TimerFire:
    vehicle: VehicleId
    expiry: TimerExpiry


class _Simulation:
    def __init__(self, cfg: ScenarioConfig, ledger: Ledger):
        self.cfg = cfg
        self.ledger = ledger
        self.world = build_world(cfg.world)
        self.registry, self.keypairs = build_registry(cfg.world)
        self.behaviors = _build_behaviors(cfg)
        t_acc = cfg.accident.time
        self.nodes: dict[VehicleId, NodeState] = {}
        for v in sorted(cfg.world.vehicles, key=lambda v: v.vehicle_id):
            log = synthesize_edr_log(
                vehicle_id=v.vehicle_id,
                position=Position(v.x, v.y),
                velocity=(v.vx, v.vy),
                now=t_acc,
                capacity=cfg.world.edr_capacity,
                sample_interval=cfg.world.edr_sample_interval,
                self_speed=v.self_speed,
                observed_speeds=dict(v.observed_speeds),
            )
            self.nodes[v.vehicle_id] = NodeState(
                vehicle_id=v.vehicle_id,
                position=Position(v.x, v.y),
                keypair=self.keypairs[v.vehicle_id],
                edr_log=log,
            )
        self.colliding = set(cfg.accident.colliding)
        self.network = vehicular_network(self.colliding, self.world)
        self.network_order = tuple(sorted(self.network))
        self.witness_pool = set()
        for c in sorted(self.colliding):
            self.witness_pool |= dsrc_reachable(
                self.world.position_of(c), self.world)
        self.witness_pool -= self.colliding
        self.heap: list = []
        self.seq = 0
        self.transcript: list[TranscriptEntry] = []
        self.dmv_events: dict[VehicleId, EventData] = {}
        self.dmv_verdicts: dict[VehicleId, Verdict] = {}
        self.rejected_blocks: list[str] = []

    # -- scheduling

    def _push(self, time: int, sender_rank: int, item) -> None:
        heapq.heappush(self.heap, (time, sender_rank, self.seq, item))
        self.seq += 1

    def _rank(self, sender: VehicleId | str) -> int:
        return sender if isinstance(sender, int) else -1

    def _deliver(self, send_time: int, deliver_time: int,
                 sender: VehicleId | str, receiver: VehicleId | str,
                 message: Message) -> None:
        self._push(deliver_time, self._rank(sender),
                   _Delivery(send_time=send_time, sender=sender,
                             receiver=receiver, message=message))

    def _route(self, sender: VehicleId, message, now: int) -> None:
        lat = self.cfg.latency
        if isinstance(message, _TargetedSend):
            for r in message.recipients:
                self._deliver(now, now + message.delay, sender, r,
                              message.message)
            return
        if isinstance(message, EventGenerationRequest):
            reachable = dsrc_reachable(
                self.world.position_of(message.origin), self.world)
            for r in sorted(reachable - self.colliding):
                self._deliver(now, now + lat.dsrc, sender, r, message)
        elif isinstance(message, WitnessConfirm):
            reachable = dsrc_reachable(
                self.world.position_of(sender), self.world)
            for r in sorted(reachable & self.colliding):
                self._deliver(now, now + lat.dsrc, sender, r, message)
        elif isinstance(message, (EventDataBroadcast,
                                  FederationFormationRequest,
                                  NewBlockAnnouncement)):
            for r in self.network_order:
                if r != sender:
                    self._deliver(now, now + lat.cellular, sender, r, message)
            self._deliver(now, now + lat.cellular, sender, DMV, message)
        elif isinstance(message, VerifierValidation):
            federation = self.ctx.federations.get(message.accident_id)
            if federation is None:
                return
            delay = 0 if sender == federation.leader else lat.cellular
            self._deliver(now, now + delay, sender, federation.leader,
                          message)
        elif isinstance(message, UnconfirmedSubmission):
            self._deliver(now, now + lat.cellular, sender, DMV, message)
        else:
            raise PoefedError(f"unroutable message {type(message).__name__}")

    # -- DMV endpoint

    def _dmv_handle(self, message: Message, now: int) -> None:
        if isinstance(message, EventDataBroadcast):
            event = message.event
            if event.reporter not in self.dmv_events:
                self.dmv_events[event.reporter] = event
                self.dmv_verdicts[event.reporter] = validate_event(
                    event, self.registry,
                    self.ctx.validation_context(event.accident_id))
        elif isinstance(message, NewBlockAnnouncement):
            try:
                append_block(self.ledger, message.block, self.registry)
            except LedgerAppendError as exc:
                self.rejected_blocks.append(type(exc).__name__)
        elif isinstance(message, UnconfirmedSubmission):
            self.ledger.unconfirmed.append(message.record)

    # -- main loop

    def run(self) -> SimOutcome:
        cfg = self.cfg
        t_acc = cfg.accident.time
        accident_id, opening = detect_accident(self.world, self.colliding,
                                               t_acc)
        scene = scene_position(self.colliding, self.world)
        info = AccidentInfo(accident_id=accident_id, t_acc=t_acc, scene=scene,
                            colliding=tuple(sorted(self.colliding)))
        community = self.network - self.colliding - self.witness_pool
        try:
            federation = select_verifiers(
                accident_id, community, self.registry, cfg.params,
                derive_federation_seed(cfg.seed, accident_id))
        except EmptyFederation:
            federation = None
        self.ctx = ProtocolContext(
            registry=self.registry,
            params=cfg.params,
            dsrc_range=cfg.world.dsrc_range,
            cellular_latency=cfg.latency.cellular,
            tip_height=self.ledger.next_height(),
            tip_hash=self.ledger.tip_hash(),
            accidents={accident_id: info},
            federations={accident_id: federation},
        )
        for message in opening:
            sender = (message.origin
                      if isinstance(message, EventGenerationRequest)
                      else min(self.colliding))
            self._route(sender, message, t_acc)
        for v in sorted(self.colliding):
            self._push(t_acc, v, _TimerFire(
                vehicle=v, expiry=TimerExpiry(accident_id, TimerKind.DETECT)))

        while self.heap:
            now, _, _, item = heapq.heappop(self.heap)
            if isinstance(item, _Delivery):
                self.transcript.append(TranscriptEntry(
                    send_time=item.send_time, deliver_time=now,
                    sender=item.sender, receiver=item.receiver,
                    message=item.message))
                if item.receiver == DMV:
                    self._dmv_handle(item.message, now)
                else:
                    self._step(item.receiver, item.message, now)
            else:
                self._step(item.vehicle, item.expiry, now)

        self._finalize(accident_id, info)
        return self._outcome(accident_id)

    def _step(self, vehicle: VehicleId, inp, now: int) -> None:
        node = self.nodes[vehicle]
        behavior = self.behaviors.get(vehicle, protocol_step)
        out, timers = behavior(node, inp, now, self.ctx)
        for message in out:
            self._route(vehicle, message, now)
        for req in timers:
            self._push(req.at, vehicle, _TimerFire(vehicle=vehicle,
                                                   expiry=req.expiry))

    def _finalize(self, accident_id: AccidentId, info: AccidentInfo) -> None:
        """The authority stores whatever evidence it holds when an accident
        ends with neither a block nor a leader submission."""
        has_block = any(b.accident_id == accident_id
                        for b in self.ledger.blocks)
        has_record = any(r.accident_id == accident_id
                         for r in self.ledger.unconfirmed)
        if has_block or has_record:
            return
        events = tuple(self.dmv_events[r] for r in sorted(self.dmv_events))
        federation = self.ctx.federations.get(accident_id)
        reason = (UnconfirmedReason.NO_FEDERATION if federation is None
                  else UnconfirmedReason.NO_VALID_EVENTS)
        self.ledger.unconfirmed.append(UnconfirmedEventRecord(
            accident_id=accident_id, events=events, reason=reason,
            recorded_at=info.t_acc + self.cfg.params.validation_deadline))

    # -- outcome assembly

    def _attack_outcomes(self) -> tuple[AttackOutcome, ...]:
        block_events = [e for b in self.ledger.blocks for e in b.events]
        outcomes = []
        for spec in self.cfg.attacks:
            if isinstance(spec, TamperEvent):
                forged = any(e.reporter == spec.attacker
                             and e.content_digest() != e.digest
                             for e in block_events)
                outcomes.append(AttackOutcome(
                    "tamper_event",
                    "succeeded" if forged else "mitigated: digest mismatch"))
            elif isinstance(spec, Impersonate):
                forged = any(
                    e.reporter == spec.claimed_id
                    and (spec.claimed_id not in self.registry
                         or not _signature_ok(e, self.registry))
                    for e in block_events)
                outcomes.append(AttackOutcome(
                    "impersonate",
                    "succeeded" if forged else "mitigated: signature check"))
            elif isinstance(spec, FakeWitnessRelay):
                fakes = set(spec.fake_witnesses)
                forged = any(e.reporter in fakes for e in block_events)
                outcomes.append(AttackOutcome(
                    "fake_witness_relay",
                    "succeeded" if forged else "mitigated: reply window"))
            elif isinstance(spec, ColludingVerifiers):
                forged = any(e.content_digest() != e.digest
                             for e in block_events)
                outcomes.append(AttackOutcome(
                    "colluding_verifiers",
                    "succeeded" if forged else "mitigated: threshold"))
        return tuple(outcomes)

    def _outcome(self, accident_id: AccidentId) -> SimOutcome:
        cfg = self.cfg
        classification = classify_outcome(self.transcript, cfg)
        rejected: dict[str, int] = {}
        accepted = 0
        for reporter in sorted(self.dmv_verdicts):
            verdict = self.dmv_verdicts[reporter]
            if verdict.ok:
                accepted += 1
            for reason in verdict.reasons:
                rejected[reason.value] = rejected.get(reason.value, 0) + 1

        honest_witnesses = tuple(
            r for r in sorted(self.dmv_events)
            if self.dmv_events[r].role == ReporterRole.WITNESS
            and self.dmv_verdicts[r].ok)
        signing_verifiers = tuple(sorted(
            {v for b in self.ledger.blocks for v in b.multisig.signatures}))
        dishonest = tuple(
            r for r in sorted(self.dmv_verdicts)
            if ValidationFailure.BAD_DIGEST in self.dmv_verdicts[r].reasons
            and ValidationFailure.BAD_SIGNATURE
            not in self.dmv_verdicts[r].reasons
            and ValidationFailure.UNREGISTERED_REPORTER
            not in self.dmv_verdicts[r].reasons)
        final_registry = apply_incentives(self.registry, IncentiveOutcome(
            honest_witnesses=honest_witnesses,
            signing_verifiers=signing_verifiers,
            dishonest_reporters=dishonest))
        changes = {}
        for v in sorted(self.nodes):
            delta = (final_registry.reputation(v)
                     - self.registry.reputation(v))
            if delta != 0.0:
                changes[v] = delta

        metrics = Metrics(
            blocks_produced=sum(
                1 for b in self.ledger.blocks
                if b.accident_id == accident_id),
            events_received=len(self.dmv_events),
            events_accepted=accepted,
            events_rejected=rejected,
            unexpected_messages=sum(n.unexpected
                                    for n in self.nodes.values()),
            rejected_blocks=tuple(self.rejected_blocks),
            attack_outcomes=self._attack_outcomes(),
            reputation_changes=changes,
        )
        return SimOutcome(
            seed=cfg.seed,
            accident_id=accident_id,
            classification=classification,
            ledger=self.ledger,
            transcript=tuple(self.transcript),
            federation=self.ctx.federations.get(accident_id),
            metrics=metrics,
            final_registry=final_registry,
        )


def _signature_ok(event: EventData, registry: DmvRegistry) -> bool:
    if event.reporter not in registry:
        return False
    return verify(registry.public_key(event.reporter), event.digest,
                  event.signature)


def run_scenario(cfg: ScenarioConfig, ledger: Ledger | None = None) -> SimOutcome:
    """Execute one accident end to end. Passing an existing ledger appends
    the new block to it, which is how multi-accident chains are built."""
    validate_config(cfg)
    return _Simulation(cfg, ledger if ledger is not None else Ledger()).run()


# --- artifact writers -----------------------------------------------------------

def _message_detail(msg: Message) -> str:
    aid = msg.accident_id.hex()[:8]
    if isinstance(msg, EventGenerationRequest):
        return f"aid={aid} origin={msg.origin} sent_at={msg.sent_at}"
    if isinstance(msg, WitnessConfirm):
        return f"aid={aid} witness={msg.witness}"
    if isinstance(msg, EventDataBroadcast):
        e = msg.event
        return (f"aid={aid} reporter={e.reporter} role={e.role.name.lower()} "
                f"digest={e.digest.hex()[:8]}")
    if isinstance(msg, FederationFormationRequest):
        return f"aid={aid}"
    if isinstance(msg, VerifierValidation):
        ok = sum(1 for v in msg.verdicts.values() if v)
        return f"aid={aid} verifier={msg.verifier} ok={ok}/{len(msg.verdicts)}"
    if isinstance(msg, NewBlockAnnouncement):
        b = msg.block
        return (f"aid={aid} height={b.height} hash={b.block_hash.hex()[:8]} "
                f"events={len(b.events)} signers={len(b.multisig.signatures)}")
    if isinstance(msg, UnconfirmedSubmission):
        r = msg.record
        return (f"aid={aid} reason={r.reason.name.lower()} "
                f"events={len(r.events)}")
    return ""


def transcript_lines(transcript, mode: str = "summary") -> list[str]:
    lines = []
    for e in transcript:
        lines.append(
            f"{e.send_time} {e.deliver_time} {e.sender} {e.receiver} "
            f"{type(e.message).__name__} {_message_detail(e.message)}")
        if mode == "full":
            lines.append("  " + encode_message(e.message).hex())
    return lines


def log_mode() -> str:
    return os.environ.get("POE_LOG", "summary")


def metrics_lines(outcome: SimOutcome) -> list[str]:
    m = outcome.metrics
    rows: dict[str, str] = {
        "accident_id": outcome.accident_id.hex(),
        "classification": outcome.classification.value,
        "seed": str(outcome.seed),
        "blocks_produced": str(m.blocks_produced),
        "events_received": str(m.events_received),
        "events_accepted": str(m.events_accepted),
        "unexpected_messages": str(m.unexpected_messages),
    }
    for reason, count in m.events_rejected.items():
        rows[f"rejected.{reason}"] = str(count)
    if outcome.federation is not None:
        rows["federation.members"] = ",".join(
            str(v) for v in outcome.federation.members)
        rows["federation.leader"] = str(outcome.federation.leader)
        rows["federation.threshold_n"] = str(outcome.federation.threshold_n)
    for i, a in enumerate(m.attack_outcomes):
        rows[f"attack.{i}.{a.kind}"] = a.outcome
    for i, name in enumerate(m.rejected_blocks):
        rows[f"rejected_block.{i}"] = name
    for v, delta in m.reputation_changes.items():
        rows[f"reputation_delta.{v}"] = f"{delta:+g}"
    return [f"{k}\t{rows[k]}" for k in sorted(rows)]


def outcome_to_dict(outcome: SimOutcome) -> dict:
    m = outcome.metrics
    return {
        "seed": outcome.seed,
        "accident_id": outcome.accident_id.hex(),
        "classification": outcome.classification.value,
        "federation": (None if outcome.federation is None else {
            "members": list(outcome.federation.members),
            "leader": outcome.federation.leader,
            "threshold_n": outcome.federation.threshold_n,
        }),
        "metrics": {
            "blocks_produced": m.blocks_produced,
            "events_received": m.events_received,
            "events_accepted": m.events_accepted,
            "events_rejected": dict(sorted(m.events_rejected.items())),
            "unexpected_messages": m.unexpected_messages,
            "rejected_blocks": list(m.rejected_blocks),
            "attack_outcomes": [
                {"kind": a.kind, "outcome": a.outcome}
                for a in m.attack_outcomes
            ],
            "reputation_changes": {
                str(v): d for v, d in sorted(m.reputation_changes.items())
            },
        },
        "ledger": ledger_to_dict(outcome.ledger),
    }


def write_outcome(outcome: SimOutcome, out_dir: str,
                  mode: str | None = None) -> dict[str, str]:
    """Write the run artifacts under out_dir; returns {artifact: path}."""
    mode = log_mode() if mode is None else mode
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    ledger_path = os.path.join(out_dir, "ledger.bin")
    write_ledger_file(ledger_path, outcome.ledger)
    paths["ledger"] = ledger_path

    unconfirmed_path = os.path.join(out_dir, "unconfirmed.bin")
    write_unconfirmed_file(unconfirmed_path, outcome.ledger)
    paths["unconfirmed"] = unconfirmed_path

    if mode != "off":
        transcript_path = os.path.join(out_dir, "transcript.log")
        with open(transcript_path, "w", encoding="utf-8") as fh:
            for line in transcript_lines(outcome.transcript, mode):
                fh.write(line + "\n")
        paths["transcript"] = transcript_path

    metrics_path = os.path.join(out_dir, "metrics.tsv")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        for line in metrics_lines(outcome):
            fh.write(line + "\n")
    paths["metrics"] = metrics_path

    outcome_path = os.path.join(out_dir, "outcome.json")
    with open(outcome_path, "w", encoding="utf-8") as fh:
        json.dump(outcome_to_dict(outcome), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["outcome"] = outcome_path

    return paths
