"""Authority-side append-only block chain and forensic review.

Blocks chain by hash: each block's prev_hash is the previous block's
block_hash, with a fixed all-zero genesis predecessor. Federation signatures
cover a signing digest computed over the block's protocol content (height,
prev_hash, accident_id, events, federation members, threshold, leader); the
block_hash additionally covers the assembled multisig and creation time.
Splitting the two digests lets verifiers sign before the block object exists.

Files: "POEL" magic + version byte + repeated [u32 length][block record];
unconfirmed records use the same framing under "POEU". The binary form is
normative; a JSON export exists for humans.
"""

from __future__ import annotations

import enum
import json
import statistics
from dataclasses import dataclass, field

from . import encoding as enc
from .crypto import (
    DIGEST_SIZE,
    GENESIS_HASH,
    DmvRegistry,
    MultiSigSet,
    VehicleId,
    check_multisig,
    digest,
)
from .encoding import Cursor, DecodeError
from .errors import (
    BadBlockHash,
    BadHeight,
    BadPrevHash,
    LedgerFormatError,
    MultisigFailed,
    NotFound,
    UnknownVehicle,
)
from .events import (
    AccidentId,
    EventData,
    ReporterRole,
    decode_event,
    encode_event,
)

LEDGER_MAGIC = b"POEL"
UNCONFIRMED_MAGIC = b"POEU"
FORMAT_VERSION = 1


# --- blocks -----------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    accident_id: AccidentId
    events: tuple[EventData, ...]
    multisig: MultiSigSet
    leader: VehicleId
    created_at: int
    block_hash: bytes


class UnconfirmedReason(enum.IntEnum):
    """Why an accident's evidence never made it into a block."""

    NO_FEDERATION = 1
    THRESHOLD_NOT_MET = 2
    NO_VALID_EVENTS = 3


@dataclass(frozen=True)
class UnconfirmedEventRecord:
    accident_id: AccidentId
    events: tuple[EventData, ...]
    reason: UnconfirmedReason
    recorded_at: int


@dataclass
class Ledger:
    blocks: list[Block] = field(default_factory=list)
    unconfirmed: list[UnconfirmedEventRecord] = field(default_factory=list)

    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_HASH

    def next_height(self) -> int:
        return len(self.blocks)


def block_signing_digest(
    height: int,
    prev_hash: bytes,
    accident_id: AccidentId,
    events: tuple[EventData, ...] | list[EventData],
    members: tuple[VehicleId, ...],
    threshold_n: int,
    leader: VehicleId,
) -> bytes:
    """The digest federation members sign: protocol content only, no
    signatures or timestamps, so every verifier can compute it independently
    before the block is assembled."""
    payload = (
        enc.u64(height)
        + enc.bytes_(prev_hash)
        + enc.bytes_(accident_id)
        + enc.list_([encode_event(e) for e in events])
        + enc.list_([enc.u64(m) for m in members])
        + enc.u32(threshold_n)
        + enc.u64(leader)
    )
    return digest(payload)


def signing_digest_of(block: Block) -> bytes:
    return block_signing_digest(
        block.height, block.prev_hash, block.accident_id, block.events,
        block.multisig.federation, block.multisig.threshold_n, block.leader,
    )


def encode_multisig(ms: MultiSigSet) -> bytes:
    return (
        enc.list_([enc.u64(m) for m in ms.federation])
        + enc.u32(ms.threshold_n)
        + enc.list_([
            enc.u64(vid) + enc.bytes_(sig)
            for vid, sig in sorted(ms.signatures.items())
        ])
    )


def decode_multisig(cur: Cursor) -> MultiSigSet:
    members = tuple(cur.u64() for _ in range(cur.count()))
    threshold_n = cur.u32()
    signatures = {}
    for _ in range(cur.count()):
        vid = cur.u64()
        signatures[vid] = cur.bytes_()
    try:
        return MultiSigSet(federation=members, threshold_n=threshold_n,
                           signatures=signatures)
    except ValueError as exc:
        raise DecodeError(str(exc)) from None


def encode_block_body(b: Block) -> bytes:
    """Everything block_hash covers, in declared field order."""
    return (
        enc.u64(b.height)
        + enc.bytes_(b.prev_hash)
        + enc.bytes_(b.accident_id)
        + enc.list_([encode_event(e) for e in b.events])
        + encode_multisig(b.multisig)
        + enc.u64(b.leader)
        + enc.u64(b.created_at)
    )


def encode_block(b: Block) -> bytes:
    return encode_block_body(b) + enc.bytes_(b.block_hash)


def decode_block(cur: Cursor) -> Block:
    height = cur.u64()
    prev_hash = cur.bytes_()
    accident_id = cur.bytes_()
    events = tuple(decode_event(cur) for _ in range(cur.count()))
    multisig = decode_multisig(cur)
    leader = cur.u64()
    created_at = cur.u64()
    block_hash = cur.bytes_()
    return Block(height=height, prev_hash=prev_hash, accident_id=accident_id,
                 events=events, multisig=multisig, leader=leader,
                 created_at=created_at, block_hash=block_hash)


def seal_block(
    height: int,
    prev_hash: bytes,
    accident_id: AccidentId,
    events: tuple[EventData, ...],
    multisig: MultiSigSet,
    leader: VehicleId,
    created_at: int,
) -> Block:
    """Build a block and stamp its hash over the finished body."""
    draft = Block(height=height, prev_hash=prev_hash, accident_id=accident_id,
                  events=events, multisig=multisig, leader=leader,
                  created_at=created_at, block_hash=b"\x00" * DIGEST_SIZE)
    return Block(height=height, prev_hash=prev_hash, accident_id=accident_id,
                 events=events, multisig=multisig, leader=leader,
                 created_at=created_at,
                 block_hash=digest(encode_block_body(draft)))


def encode_unconfirmed(rec: UnconfirmedEventRecord) -> bytes:
    return (
        enc.bytes_(rec.accident_id)
        + enc.list_([encode_event(e) for e in rec.events])
        + enc.u8(rec.reason)
        + enc.u64(rec.recorded_at)
    )


def decode_unconfirmed(cur: Cursor) -> UnconfirmedEventRecord:
    accident_id = cur.bytes_()
    events = tuple(decode_event(cur) for _ in range(cur.count()))
    raw_reason = cur.u8()
    try:
        reason = UnconfirmedReason(raw_reason)
    except ValueError:
        raise DecodeError(f"unknown unconfirmed reason {raw_reason}") from None
    recorded_at = cur.u64()
    return UnconfirmedEventRecord(accident_id=accident_id, events=events,
                                  reason=reason, recorded_at=recorded_at)


# --- chain maintenance and verification -------------------------------------

def _check_block(block: Block, expected_height: int, expected_prev: bytes,
                 registry: DmvRegistry | None) -> None:
    if block.height != expected_height:
        raise BadHeight(f"height {block.height}, expected {expected_height}")
    if block.prev_hash != expected_prev:
        raise BadPrevHash(
            f"prev_hash {block.prev_hash.hex()[:8]} does not match tip"
        )
    recomputed = digest(encode_block_body(block))
    if recomputed != block.block_hash:
        raise BadBlockHash("stored block_hash does not match content")
    if registry is None:  # structural check only; no keys to verify against
        return
    try:
        ok = check_multisig(signing_digest_of(block), block.multisig, registry)
    except UnknownVehicle as exc:
        raise MultisigFailed(str(exc)) from None
    if not ok:
        raise MultisigFailed(
            f"fewer than {block.multisig.threshold_n} valid signatures"
        )


def append_block(ledger: Ledger, block: Block, registry: DmvRegistry) -> None:
    """Append iff every block invariant holds against the current tip;
    raises the invariant-named error and leaves the ledger unchanged."""
    _check_block(block, ledger.next_height(), ledger.tip_hash(), registry)
    ledger.blocks.append(block)


@dataclass(frozen=True)
class ChainReport:
    valid: bool
    first_bad_height: int | None
    checked: int  # blocks examined (parsed, for file verification)


def verify_chain(ledger: Ledger,
                 registry: DmvRegistry | None) -> ChainReport:
    prev = GENESIS_HASH
    for i, block in enumerate(ledger.blocks):
        try:
            _check_block(block, i, prev, registry)
        except (BadHeight, BadPrevHash, BadBlockHash, MultisigFailed):
            return ChainReport(valid=False, first_bad_height=i,
                               checked=len(ledger.blocks))
        prev = block.block_hash
    return ChainReport(valid=True, first_bad_height=None,
                       checked=len(ledger.blocks))


# --- files ------------------------------------------------------------------

def _write_frames(path: str, magic: bytes, records: list[bytes]) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(enc.u8(FORMAT_VERSION))
        for record in records:
            fh.write(enc.u32(len(record)))
            fh.write(record)


def write_ledger_file(path: str, ledger: Ledger) -> None:
    _write_frames(path, LEDGER_MAGIC,
                  [encode_block(b) for b in ledger.blocks])


def write_unconfirmed_file(path: str, ledger: Ledger) -> None:
    _write_frames(path, UNCONFIRMED_MAGIC,
                  [encode_unconfirmed(r) for r in ledger.unconfirmed])


def _read_header(data: bytes, magic: bytes) -> int:
    if len(data) < len(magic) + 1:
        raise LedgerFormatError("file shorter than header")
    if data[:len(magic)] != magic:
        raise LedgerFormatError(f"bad magic {data[:len(magic)]!r}")
    version = data[len(magic)]
    if version != FORMAT_VERSION:
        raise LedgerFormatError(f"unsupported format version {version}")
    return len(magic) + 1


def _read_frames(data: bytes, offset: int) -> tuple[list[bytes], int | None]:
    """Split framed records; returns (complete records, index of the first
    damaged frame or None). Damage means a truncated length or payload."""
    records: list[bytes] = []
    pos = offset
    while pos < len(data):
        if pos + 4 > len(data):
            return records, len(records)
        length = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        if pos + length > len(data):
            return records, len(records)
        records.append(data[pos:pos + length])
        pos += length
    return records, None


def read_ledger_file(path: str) -> tuple[list[Block], int | None]:
    """Parse a ledger file leniently: returns the blocks that decoded
    cleanly plus the frame index of the first damaged record, if any.
    Header damage raises LedgerFormatError."""
    with open(path, "rb") as fh:
        data = fh.read()
    offset = _read_header(data, LEDGER_MAGIC)
    frames, bad_frame = _read_frames(data, offset)
    blocks: list[Block] = []
    for i, frame in enumerate(frames):
        try:
            cur = Cursor(frame)
            block = decode_block(cur)
            cur.expect_done()
        except (DecodeError, ValueError):
            return blocks, i
        blocks.append(block)
    return blocks, bad_frame


def load_ledger_file(path: str) -> Ledger:
    """Strict load: any damaged record raises."""
    blocks, bad_frame = read_ledger_file(path)
    if bad_frame is not None:
        raise LedgerFormatError(f"damaged block record at index {bad_frame}")
    return Ledger(blocks=blocks)


def load_unconfirmed_file(path: str) -> list[UnconfirmedEventRecord]:
    with open(path, "rb") as fh:
        data = fh.read()
    offset = _read_header(data, UNCONFIRMED_MAGIC)
    frames, bad_frame = _read_frames(data, offset)
    if bad_frame is not None:
        raise LedgerFormatError(f"damaged record at index {bad_frame}")
    records = []
    for i, frame in enumerate(frames):
        try:
            cur = Cursor(frame)
            rec = decode_unconfirmed(cur)
            cur.expect_done()
        except (DecodeError, ValueError):
            raise LedgerFormatError(f"damaged record at index {i}") from None
        records.append(rec)
    return records


def verify_ledger_file(path: str,
                       registry: DmvRegistry | None) -> ChainReport:
    """Chain verification straight off disk. A record that no longer decodes
    counts as invalid at its own height; header damage still raises
    LedgerFormatError (there is no height to blame)."""
    blocks, bad_frame = read_ledger_file(path)
    report = verify_chain(Ledger(blocks=blocks), registry)
    if bad_frame is not None:
        first = bad_frame if report.valid else min(bad_frame,
                                                   report.first_bad_height)
        return ChainReport(valid=False, first_bad_height=first,
                           checked=len(blocks))
    return report


# --- forensic review ---------------------------------------------------------

@dataclass(frozen=True)
class VehicleComparison:
    subject: VehicleId
    self_reported: float | None
    witness_estimates: tuple[float, ...]
    spread: float | None  # |self_reported - median(witness_estimates)|
    flagged: bool


@dataclass(frozen=True)
class DiscrepancyReport:
    accident_id: AccidentId
    tolerance: float
    comparisons: tuple[VehicleComparison, ...]


def block_for_accident(ledger: Ledger, accident_id: AccidentId) -> Block:
    for block in ledger.blocks:
        if block.accident_id == accident_id:
            return block
    raise NotFound(f"accident {accident_id.hex()} not in any block")


def _nearest_sample(samples, t_ref: int):
    if not samples:
        return None
    return min(samples, key=lambda s: (abs(s.t - t_ref), s.t))


def _witness_estimate(event: EventData, subject: VehicleId,
                      t_ref: int) -> float | None:
    """The witness's speed estimate for `subject` taken from the sample
    nearest t_ref that carries an observation of that subject."""
    carrying = [s for s in event.edr_window
                if any(o.subject == subject for o in s.observations)]
    sample = _nearest_sample(carrying, t_ref)
    if sample is None:
        return None
    for o in sample.observations:
        if o.subject == subject:
            return o.estimated_speed
    return None


def forensic_review(ledger: Ledger, accident_id: AccidentId,
                    tolerance: float) -> DiscrepancyReport:
    """Cross-examine each accident vehicle's self-reported speed against the
    witnesses' estimates of it. A vehicle is flagged when its self-report
    differs from the median witness estimate by more than `tolerance` m/s."""
    block = block_for_accident(ledger, accident_id)
    subjects = sorted(e.reporter for e in block.events
                      if e.role == ReporterRole.ACCIDENT)
    witness_events = [e for e in block.events
                      if e.role == ReporterRole.WITNESS]
    by_reporter = {e.reporter: e for e in block.events}
    comparisons = []
    for subject in subjects:
        own = by_reporter[subject]
        own_sample = _nearest_sample(own.edr_window, own.timestamp)
        self_reported = own_sample.speed if own_sample else None
        estimates = []
        for w in sorted(witness_events, key=lambda e: e.reporter):
            est = _witness_estimate(w, subject, own.timestamp)
            if est is not None:
                estimates.append(est)
        if self_reported is not None and estimates:
            spread = abs(self_reported - statistics.median(estimates))
            flagged = spread > tolerance
        else:
            spread = None
            flagged = False
        comparisons.append(VehicleComparison(
            subject=subject, self_reported=self_reported,
            witness_estimates=tuple(estimates), spread=spread,
            flagged=flagged,
        ))
    return DiscrepancyReport(accident_id=accident_id, tolerance=tolerance,
                             comparisons=tuple(comparisons))


# --- JSON export -------------------------------------------------------------

def event_to_dict(e: EventData) -> dict:
    return {
        "accident_id": e.accident_id.hex(),
        "reporter": e.reporter,
        "role": e.role.name.lower(),
        "location": {"x": e.location.x, "y": e.location.y},
        "timestamp": e.timestamp,
        "samples": len(e.edr_window),
        "digest": e.digest.hex(),
        "signature": e.signature.hex(),
    }


def block_to_dict(b: Block) -> dict:
    return {
        "height": b.height,
        "prev_hash": b.prev_hash.hex(),
        "accident_id": b.accident_id.hex(),
        "events": [event_to_dict(e) for e in b.events],
        "federation": list(b.multisig.federation),
        "threshold_n": b.multisig.threshold_n,
        "signers": sorted(b.multisig.signatures),
        "leader": b.leader,
        "created_at": b.created_at,
        "block_hash": b.block_hash.hex(),
    }


def unconfirmed_to_dict(r: UnconfirmedEventRecord) -> dict:
    return {
        "accident_id": r.accident_id.hex(),
        "events": [event_to_dict(e) for e in r.events],
        "reason": r.reason.name.lower(),
        "recorded_at": r.recorded_at,
    }


def ledger_to_dict(ledger: Ledger) -> dict:
    return {
        "blocks": [block_to_dict(b) for b in ledger.blocks],
        "unconfirmed": [unconfirmed_to_dict(r) for r in ledger.unconfirmed],
    }


def report_to_dict(report: DiscrepancyReport) -> dict:
    return {
        "accident_id": report.accident_id.hex(),
        "tolerance": report.tolerance,
        "comparisons": [
            {
                "subject": c.subject,
                "self_reported": c.self_reported,
                "witness_estimates": list(c.witness_estimates),
                "spread": c.spread,
                "flagged": c.flagged,
            }
            for c in report.comparisons
        ],
    }


def ledger_to_json(ledger: Ledger) -> str:
    return json.dumps(ledger_to_dict(ledger), indent=2, sort_keys=True)
