"""Per-vehicle protocol state machine for accident event recording.

Flow: colliding vehicles detect the accident, short-range-broadcast event
generation requests to nearby witnesses, and broadcast their own signed event
records over cellular. Witnesses that reply inside the reply window broadcast
theirs. A reputation-weighted federation of community vehicles validates every
record it heard, each member signs the digest of the candidate set it accepted,
and the lead verifier assembles an n-of-m multi-signed block for the ledger.

All transitions are driven through protocol_step, which makes the node state
explicit and gives attack harnesses a single seam to wrap.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from . import encoding as enc
from .crypto import DmvRegistry, KeyPair, MultiSigSet, VehicleId, sign, verify
from .encoding import Cursor, DecodeError
from .errors import (
    EmptyEventSet,
    EmptyFederation,
    ThresholdNotMet,
    UnknownVehicle,
)
from .events import (
    AccidentId,
    EdrLog,
    EventData,
    ReporterRole,
    WindowParams,
    decode_event,
    derive_accident_id,
    encode_event,
    make_event_data,
)
from .ledger import (
    Block,
    UnconfirmedEventRecord,
    UnconfirmedReason,
    block_signing_digest,
    decode_block,
    decode_unconfirmed,
    encode_block,
    encode_unconfirmed,
    seal_block,
)
from .world import Position, WorldState, assign_cell


class Role(enum.Enum):
    ACCIDENT = "accident"
    WITNESS = "witness"
    COMMUNITY = "community"
    VERIFIER = "verifier"
    LEAD_VERIFIER = "lead_verifier"


@dataclass(frozen=True)
class ProtocolParams:
    m: int = 5
    threshold_n: int | None = None  # None = floor(2m/3) + 1 of actual size
    min_reputation: float = 30.0
    reply_window: int = 500  # ms, from request send time
    validation_deadline: int = 2000  # ms, from accident time
    window_half_width: int = 5000  # ms, EDR window around the accident


def default_threshold(m: int) -> int:
    return (2 * m) // 3 + 1


@dataclass(frozen=True)
class AccidentInfo:
    accident_id: AccidentId
    t_acc: int
    scene: Position
    colliding: tuple[VehicleId, ...]


@dataclass(frozen=True)
class Federation:
    accident_id: AccidentId
    members: tuple[VehicleId, ...]  # selection order
    leader: VehicleId
    threshold_n: int


# --- messages ----------------------------------------------------------------

@dataclass(frozen=True)
class EventGenerationRequest:
    accident_id: AccidentId
    origin: VehicleId
    sent_at: int


@dataclass(frozen=True)
class WitnessConfirm:
    accident_id: AccidentId
    witness: VehicleId


@dataclass(frozen=True)
class EventDataBroadcast:
    event: EventData

    @property
    def accident_id(self) -> AccidentId:
        return self.event.accident_id


@dataclass(frozen=True)
class FederationFormationRequest:
    accident_id: AccidentId


@dataclass
class VerifierValidation:
    accident_id: AccidentId
    verifier: VehicleId
    verdicts: dict[VehicleId, bool]  # reporter -> accepted
    signature: bytes  # over the verifier's candidate-set signing digest


@dataclass(frozen=True)
class NewBlockAnnouncement:
    block: Block

    @property
    def accident_id(self) -> AccidentId:
        return self.block.accident_id


@dataclass(frozen=True)
class UnconfirmedSubmission:
    record: UnconfirmedEventRecord

    @property
    def accident_id(self) -> AccidentId:
        return self.record.accident_id


Message = (
    EventGenerationRequest
    | WitnessConfirm
    | EventDataBroadcast
    | FederationFormationRequest
    | VerifierValidation
    | NewBlockAnnouncement
    | UnconfirmedSubmission
)

_TAG_EVENT_REQUEST = 1
_TAG_WITNESS_CONFIRM = 2
_TAG_EVENT_BROADCAST = 3
_TAG_FEDERATION_REQUEST = 4
_TAG_VALIDATION = 5
_TAG_BLOCK_ANNOUNCEMENT = 6
_TAG_UNCONFIRMED = 7


def encode_message(msg: Message) -> bytes:
    if isinstance(msg, EventGenerationRequest):
        return (enc.u8(_TAG_EVENT_REQUEST) + enc.bytes_(msg.accident_id)
                + enc.u64(msg.origin) + enc.u64(msg.sent_at))
    if isinstance(msg, WitnessConfirm):
        return (enc.u8(_TAG_WITNESS_CONFIRM) + enc.bytes_(msg.accident_id)
                + enc.u64(msg.witness))
    if isinstance(msg, EventDataBroadcast):
        return enc.u8(_TAG_EVENT_BROADCAST) + encode_event(msg.event)
    if isinstance(msg, FederationFormationRequest):
        return enc.u8(_TAG_FEDERATION_REQUEST) + enc.bytes_(msg.accident_id)
    if isinstance(msg, VerifierValidation):
        verdicts = enc.list_([
            enc.u64(reporter) + enc.u8(1 if ok else 0)
            for reporter, ok in sorted(msg.verdicts.items())
        ])
        return (enc.u8(_TAG_VALIDATION) + enc.bytes_(msg.accident_id)
                + enc.u64(msg.verifier) + verdicts + enc.bytes_(msg.signature))
    if isinstance(msg, NewBlockAnnouncement):
        return enc.u8(_TAG_BLOCK_ANNOUNCEMENT) + encode_block(msg.block)
    if isinstance(msg, UnconfirmedSubmission):
        return enc.u8(_TAG_UNCONFIRMED) + encode_unconfirmed(msg.record)
    raise TypeError(f"not a protocol message: {type(msg).__name__}")


def decode_message(cur: Cursor) -> Message:
    tag = cur.u8()
    if tag == _TAG_EVENT_REQUEST:
        return EventGenerationRequest(accident_id=cur.bytes_(),
                                      origin=cur.u64(), sent_at=cur.u64())
    if tag == _TAG_WITNESS_CONFIRM:
        return WitnessConfirm(accident_id=cur.bytes_(), witness=cur.u64())
    if tag == _TAG_EVENT_BROADCAST:
        return EventDataBroadcast(event=decode_event(cur))
    if tag == _TAG_FEDERATION_REQUEST:
        return FederationFormationRequest(accident_id=cur.bytes_())
    if tag == _TAG_VALIDATION:
        accident_id = cur.bytes_()
        verifier = cur.u64()
        verdicts = {}
        for _ in range(cur.count()):
            reporter = cur.u64()
            verdicts[reporter] = cur.u8() != 0
        return VerifierValidation(accident_id=accident_id, verifier=verifier,
                                  verdicts=verdicts, signature=cur.bytes_())
    if tag == _TAG_BLOCK_ANNOUNCEMENT:
        return NewBlockAnnouncement(block=decode_block(cur))
    if tag == _TAG_UNCONFIRMED:
        return UnconfirmedSubmission(record=decode_unconfirmed(cur))
    raise DecodeError(f"unknown message tag {tag}")


# --- timers ------------------------------------------------------------------

class TimerKind(enum.Enum):
    DETECT = "detect"
    EMIT_VALIDATION = "emit_validation"
    LEADER_DEADLINE = "leader_deadline"


@dataclass(frozen=True)
class TimerExpiry:
    accident_id: AccidentId
    kind: TimerKind


@dataclass(frozen=True)
class TimerRequest:
    at: int
    expiry: TimerExpiry


# --- accident detection ------------------------------------------------------

def detect_accident(
    world: WorldState, colliding: set[VehicleId], now: int
) -> tuple[AccidentId, list[Message]]:
    """Derive the accident's identity and the opening messages: one
    event-generation request per colliding vehicle (short-range) plus a single
    federation formation request (cellular)."""
    ids = sorted(colliding)
    if not ids:
        raise ValueError("at least one colliding vehicle required")
    positions = {v: world.position_of(v) for v in ids}
    first_cell = assign_cell(positions[ids[0]], world.base_stations)
    accident_id = derive_accident_id(first_cell, now, ids)
    messages: list[Message] = [
        EventGenerationRequest(accident_id=accident_id, origin=v, sent_at=now)
        for v in ids
    ]
    messages.append(FederationFormationRequest(accident_id=accident_id))
    return accident_id, messages


# --- federation formation ----------------------------------------------------

def select_verifiers(
    accident_id: AccidentId,
    community: set[VehicleId],
    registry: DmvRegistry,
    params: ProtocolParams,
    rng_seed: int,
) -> Federation:
    """Reputation-weighted random sample without replacement from the
    community vehicles at or above min_reputation. Every node derives the
    same federation from the shared seed."""
    eligible = sorted(v for v in community
                      if registry.reputation(v) >= params.min_reputation)
    if not eligible:
        raise EmptyFederation("no eligible community vehicles")
    size = min(params.m, len(eligible))
    rng = random.Random(rng_seed)
    pool = list(eligible)
    weights = [registry.reputation(v) for v in pool]
    members: list[VehicleId] = []
    for _ in range(size):
        total = sum(weights)
        if total <= 0:
            idx = rng.randrange(len(pool))
        else:
            x = rng.random() * total
            idx = 0
            acc = weights[0]
            while acc < x and idx < len(pool) - 1:
                idx += 1
                acc += weights[idx]
        members.append(pool.pop(idx))
        weights.pop(idx)
    if params.threshold_n is None:
        threshold_n = default_threshold(len(members))
    else:
        # explicit thresholds are clamped to the achievable range
        threshold_n = max(1, min(params.threshold_n, len(members)))
    return Federation(
        accident_id=accident_id,
        members=tuple(members),
        leader=elect_leader(members, registry),
        threshold_n=threshold_n,
    )


def elect_leader(members: list[VehicleId] | tuple[VehicleId, ...],
                 registry: DmvRegistry) -> VehicleId:
    """Highest reputation wins; ties go to the smallest id."""
    if not members:
        raise EmptyFederation("cannot elect a leader from no members")
    return min(members, key=lambda v: (-registry.reputation(v), v))


# --- event validation ----------------------------------------------------------

class ValidationFailure(enum.Enum):
    BAD_DIGEST = "bad_digest"
    BAD_SIGNATURE = "bad_signature"
    UNREGISTERED_REPORTER = "unregistered_reporter"
    OUTSIDE_REPLY_WINDOW = "outside_reply_window"
    OUTSIDE_SCENE_RANGE = "outside_scene_range"


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reasons: tuple[ValidationFailure, ...]


@dataclass(frozen=True)
class ValidationContext:
    t_acc: int
    scene_position: Position
    dsrc_range: float
    reply_window: int


def validate_event(e: EventData, registry: DmvRegistry,
                   ctx: ValidationContext) -> Verdict:
    """Checks a record the way a verifier does. Failures are findings, not
    errors; reasons list every check that failed."""
    reasons = []
    registered = e.reporter in registry
    if not registered:
        reasons.append(ValidationFailure.UNREGISTERED_REPORTER)
    if e.content_digest() != e.digest:
        reasons.append(ValidationFailure.BAD_DIGEST)
    if registered and not verify(registry.public_key(e.reporter), e.digest,
                                 e.signature):
        reasons.append(ValidationFailure.BAD_SIGNATURE)
    if not ctx.t_acc <= e.timestamp <= ctx.t_acc + ctx.reply_window:
        reasons.append(ValidationFailure.OUTSIDE_REPLY_WINDOW)
    if (e.role == ReporterRole.WITNESS
            and e.location.distance_to(ctx.scene_position) > ctx.dsrc_range):
        reasons.append(ValidationFailure.OUTSIDE_SCENE_RANGE)
    return Verdict(ok=not reasons, reasons=tuple(reasons))


# --- block assembly ------------------------------------------------------------

def assemble_block(
    accident_id: AccidentId,
    events: list[EventData] | tuple[EventData, ...],
    validations: list[VerifierValidation],
    federation: Federation,
    prev_hash: bytes,
    height: int,
    now: int,
    registry: DmvRegistry,
) -> Block:
    """Lead-verifier assembly: keep the events a majority of the federation
    accepted, then attach every member signature that verifies over the
    resulting signing digest. Raises if no event survives or fewer than
    threshold_n signatures match."""
    members = set(federation.members)
    member_validations = [v for v in validations
                          if v.verifier in members
                          and v.accident_id == accident_id]
    majority = len(federation.members) / 2
    accepted = []
    for e in sorted(events, key=lambda e: e.reporter):
        votes = sum(1 for v in member_validations
                    if v.verdicts.get(e.reporter, False))
        if votes > majority:
            accepted.append(e)
    if not accepted:
        raise EmptyEventSet(f"no event accepted for {accident_id.hex()}")
    signing = block_signing_digest(
        height, prev_hash, accident_id, accepted,
        federation.members, federation.threshold_n, federation.leader,
    )
    signatures = {}
    for v in member_validations:
        if v.verifier not in registry:
            continue
        if verify(registry.public_key(v.verifier), signing, v.signature):
            signatures[v.verifier] = v.signature
    if len(signatures) < federation.threshold_n:
        raise ThresholdNotMet(
            f"{len(signatures)} of {federation.threshold_n} signatures"
        )
    multisig = MultiSigSet(federation=federation.members,
                           threshold_n=federation.threshold_n,
                           signatures=signatures)
    return seal_block(height, prev_hash, accident_id, tuple(accepted),
                      multisig, federation.leader, now)


# --- node state ----------------------------------------------------------------

@dataclass
class AccidentState:
    role: Role = Role.COMMUNITY
    replied: bool = False
    cached_events: dict[VehicleId, EventData] = field(default_factory=dict)
    own_event: EventData | None = None
    confirms: set[VehicleId] = field(default_factory=set)
    validations: dict[VehicleId, VerifierValidation] = field(
        default_factory=dict)
    announced: bool = False
    block: Block | None = None


@dataclass
class NodeState:
    vehicle_id: VehicleId
    position: Position
    keypair: KeyPair
    edr_log: EdrLog
    accidents: dict[AccidentId, AccidentState] = field(default_factory=dict)
    unexpected: int = 0

    def accident_state(self, accident_id: AccidentId) -> AccidentState:
        return self.accidents.setdefault(accident_id, AccidentState())


@dataclass
class ProtocolContext:
    """Shared, read-only environment for one scenario run: the registry,
    the chain tip published by the authority at accident time, and the
    per-accident facts every participant knows."""

    registry: DmvRegistry
    params: ProtocolParams
    dsrc_range: float
    cellular_latency: int
    tip_height: int
    tip_hash: bytes
    accidents: dict[AccidentId, AccidentInfo] = field(default_factory=dict)
    federations: dict[AccidentId, Federation | None] = field(
        default_factory=dict)

    def validation_context(self, accident_id: AccidentId) -> ValidationContext:
        info = self.accidents[accident_id]
        return ValidationContext(
            t_acc=info.t_acc,
            scene_position=info.scene,
            dsrc_range=self.dsrc_range,
            reply_window=self.params.reply_window,
        )


def build_validation(node: NodeState, accident_id: AccidentId,
                     ctx: ProtocolContext,
                     force_all_ok: bool = False) -> VerifierValidation:
    """One verifier's verdicts plus its signature over the signing digest of
    the candidate set it accepted. force_all_ok models a colluding verifier
    that vouches for everything it heard."""
    st = node.accident_state(accident_id)
    federation = ctx.federations[accident_id]
    events = [st.cached_events[r] for r in sorted(st.cached_events)]
    if force_all_ok:
        verdicts = {e.reporter: True for e in events}
    else:
        vctx = ctx.validation_context(accident_id)
        verdicts = {e.reporter: validate_event(e, ctx.registry, vctx).ok
                    for e in events}
    candidates = [e for e in events if verdicts[e.reporter]]
    signing = block_signing_digest(
        ctx.tip_height, ctx.tip_hash, accident_id, candidates,
        federation.members, federation.threshold_n, federation.leader,
    )
    return VerifierValidation(
        accident_id=accident_id,
        verifier=node.vehicle_id,
        verdicts=verdicts,
        signature=sign(node.keypair.secret, signing),
    )


def _try_assemble(node: NodeState, accident_id: AccidentId,
                  ctx: ProtocolContext, now: int) -> Block:
    st = node.accident_state(accident_id)
    federation = ctx.federations[accident_id]
    events = [st.cached_events[r] for r in sorted(st.cached_events)]
    validations = [st.validations[v] for v in sorted(st.validations)]
    return assemble_block(accident_id, events, validations, federation,
                          ctx.tip_hash, ctx.tip_height, now, ctx.registry)


def protocol_step(
    node: NodeState,
    inp: Message | TimerExpiry,
    now: int,
    ctx: ProtocolContext,
) -> tuple[list[Message], list[TimerRequest]]:
    """Single deterministic transition. The node is the state and is updated
    in place; the return value is what it emits. Out-of-role inputs are
    counted on the node and otherwise ignored."""
    if isinstance(inp, TimerExpiry):
        return _step_timer(node, inp, now, ctx)
    st = node.accident_state(inp.accident_id)
    out: list[Message] = []
    timers: list[TimerRequest] = []

    if isinstance(inp, EventGenerationRequest):
        if st.role in (Role.ACCIDENT, Role.VERIFIER, Role.LEAD_VERIFIER):
            node.unexpected += 1
            return out, timers
        st.role = Role.WITNESS
        if not st.replied and now <= inp.sent_at + ctx.params.reply_window:
            st.replied = True
            event = make_event_data(
                node, ReporterRole.WITNESS, inp.accident_id, now,
                WindowParams(t_center=inp.sent_at,
                             half_width=ctx.params.window_half_width),
                ctx.registry,
            )
            st.own_event = event
            st.cached_events[node.vehicle_id] = event
            out.append(WitnessConfirm(accident_id=inp.accident_id,
                                      witness=node.vehicle_id))
            out.append(EventDataBroadcast(event=event))

    elif isinstance(inp, WitnessConfirm):
        if st.role == Role.ACCIDENT:
            st.confirms.add(inp.witness)
        else:
            node.unexpected += 1

    elif isinstance(inp, EventDataBroadcast):
        # cached by every role so late federation assignment loses nothing
        st.cached_events.setdefault(inp.event.reporter, inp.event)

    elif isinstance(inp, FederationFormationRequest):
        federation = ctx.federations.get(inp.accident_id)
        info = ctx.accidents[inp.accident_id]
        if (federation is not None and node.vehicle_id in federation.members
                and st.role == Role.COMMUNITY):
            is_leader = federation.leader == node.vehicle_id
            st.role = Role.LEAD_VERIFIER if is_leader else Role.VERIFIER
            emit_at = (info.t_acc + ctx.params.reply_window
                       + ctx.cellular_latency)
            timers.append(TimerRequest(
                at=max(emit_at, now),
                expiry=TimerExpiry(inp.accident_id,
                                   TimerKind.EMIT_VALIDATION)))
            if is_leader:
                timers.append(TimerRequest(
                    at=max(info.t_acc + ctx.params.validation_deadline, now),
                    expiry=TimerExpiry(inp.accident_id,
                                       TimerKind.LEADER_DEADLINE)))

    elif isinstance(inp, VerifierValidation):
        if st.role != Role.LEAD_VERIFIER:
            node.unexpected += 1
        elif not st.announced:
            st.validations.setdefault(inp.verifier, inp)
            try:
                block = _try_assemble(node, inp.accident_id, ctx, now)
            except (ThresholdNotMet, EmptyEventSet):
                pass
            else:
                st.announced = True
                st.block = block
                out.append(NewBlockAnnouncement(block=block))

    elif isinstance(inp, NewBlockAnnouncement):
        st.block = inp.block

    elif isinstance(inp, UnconfirmedSubmission):
        node.unexpected += 1

    return out, timers


def _step_timer(
    node: NodeState,
    expiry: TimerExpiry,
    now: int,
    ctx: ProtocolContext,
) -> tuple[list[Message], list[TimerRequest]]:
    st = node.accident_state(expiry.accident_id)
    out: list[Message] = []
    timers: list[TimerRequest] = []

    if expiry.kind == TimerKind.DETECT:
        info = ctx.accidents[expiry.accident_id]
        st.role = Role.ACCIDENT
        event = make_event_data(
            node, ReporterRole.ACCIDENT, expiry.accident_id, now,
            WindowParams(t_center=info.t_acc,
                         half_width=ctx.params.window_half_width),
            ctx.registry,
        )
        st.own_event = event
        st.cached_events[node.vehicle_id] = event
        out.append(EventDataBroadcast(event=event))

    elif expiry.kind == TimerKind.EMIT_VALIDATION:
        if st.role in (Role.VERIFIER, Role.LEAD_VERIFIER):
            out.append(build_validation(node, expiry.accident_id, ctx))
        else:
            node.unexpected += 1

    elif expiry.kind == TimerKind.LEADER_DEADLINE:
        if st.role != Role.LEAD_VERIFIER:
            node.unexpected += 1
        elif not st.announced:
            st.announced = True
            try:
                block = _try_assemble(node, expiry.accident_id, ctx, now)
            except EmptyEventSet:
                out.append(_give_up(node, st, expiry.accident_id,
                                    UnconfirmedReason.NO_VALID_EVENTS, now))
            except ThresholdNotMet:
                out.append(_give_up(node, st, expiry.accident_id,
                                    UnconfirmedReason.THRESHOLD_NOT_MET, now))
            else:
                st.block = block
                out.append(NewBlockAnnouncement(block=block))

    return out, timers


def _give_up(node: NodeState, st: AccidentState, accident_id: AccidentId,
             reason: UnconfirmedReason, now: int) -> UnconfirmedSubmission:
    events = tuple(st.cached_events[r] for r in sorted(st.cached_events))
    return UnconfirmedSubmission(record=UnconfirmedEventRecord(
        accident_id=accident_id, events=events, reason=reason,
        recorded_at=now))


# --- incentives ----------------------------------------------------------------

@dataclass(frozen=True)
class IncentiveRates:
    reward_witness: float = 1.0
    reward_verifier: float = 1.0
    penalty: float = 5.0


@dataclass(frozen=True)
class IncentiveOutcome:
    honest_witnesses: tuple[VehicleId, ...]
    signing_verifiers: tuple[VehicleId, ...]
    dishonest_reporters: tuple[VehicleId, ...]


def apply_incentives(registry: DmvRegistry, outcome: IncentiveOutcome,
                     rates: IncentiveRates = IncentiveRates()) -> DmvRegistry:
    """Returns an updated registry copy; reputations clamp to [0, 100]."""
    updated = registry
    deltas: dict[VehicleId, float] = {}
    for v in outcome.honest_witnesses:
        deltas[v] = deltas.get(v, 0.0) + rates.reward_witness
    for v in outcome.signing_verifiers:
        deltas[v] = deltas.get(v, 0.0) + rates.reward_verifier
    for v in outcome.dishonest_reporters:
        deltas[v] = deltas.get(v, 0.0) - rates.penalty
    for v in sorted(deltas):
        if v not in updated:
            raise UnknownVehicle(f"vehicle {v} not registered")
        current = updated.reputation(v)
        updated = updated.with_reputation(
            v, min(100.0, max(0.0, current + deltas[v])))
    return updated
