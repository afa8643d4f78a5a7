"""Ledger: block sealing, chain invariants, the on-disk format, and the
forensic cross-examination of recorded speeds."""

import dataclasses
import hashlib
import json
import struct

import pytest

from poefed.crypto import (
    GENESIS_HASH,
    DmvRegistry,
    MultiSigSet,
    RegistryEntry,
    digest,
    keygen,
    sign,
)
from poefed.encoding import Cursor, DecodeError
from poefed.errors import (
    BadBlockHash,
    BadHeight,
    BadPrevHash,
    LedgerFormatError,
    MultisigFailed,
    NotFound,
)
from poefed.events import (
    EventData,
    ReporterRole,
    WindowParams,
    derive_accident_id,
    encode_event,
    make_event_data,
    synthesize_edr_log,
)
from poefed.ledger import (
    FORMAT_VERSION,
    LEDGER_MAGIC,
    UNCONFIRMED_MAGIC,
    Block,
    Ledger,
    UnconfirmedEventRecord,
    UnconfirmedReason,
    append_block,
    block_for_accident,
    block_signing_digest,
    decode_block,
    decode_unconfirmed,
    encode_block,
    encode_block_body,
    encode_unconfirmed,
    forensic_review,
    ledger_to_json,
    load_ledger_file,
    load_unconfirmed_file,
    read_ledger_file,
    report_to_dict,
    seal_block,
    signing_digest_of,
    verify_chain,
    verify_ledger_file,
    write_ledger_file,
    write_unconfirmed_file,
)
from poefed.world import Position


def _registry(reputations: dict[int, float]) -> tuple[DmvRegistry, dict]:
    registry = DmvRegistry()
    keys = {}
    for vid, rep in sorted(reputations.items()):
        kp = keygen(digest(b"ledger" + vid.to_bytes(8, "big")))
        keys[vid] = kp
        registry.register(RegistryEntry(
            vehicle_id=vid, plate=f"P{vid}", vin=f"V{vid}",
            public_key=kp.public, reputation=rep))
    return registry, keys


class _Vehicle:
    def __init__(self, vid, position, keys, **log_kwargs):
        self.vehicle_id = vid
        self.position = position
        self.keypair = keys[vid]
        self.edr_log = synthesize_edr_log(
            vehicle_id=vid, position=position, now=1000, capacity=10,
            sample_interval=100, **log_kwargs)


MEMBERS = (10, 11, 12)
REPS = {1: 50.0, 2: 50.0, 10: 60.0, 11: 61.0, 12: 62.0}


def _event(keys, registry, vid, role, aid, **log_kwargs):
    log_kwargs.setdefault("velocity", (10.0, 0.0))
    vehicle = _Vehicle(vid, Position(float(vid), 0.0), keys, **log_kwargs)
    return make_event_data(vehicle, role, aid, 1000,
                           WindowParams(1000, 500), registry)


def _make_block(keys, registry, aid, events, height=0, prev=GENESIS_HASH,
                threshold=2, created_at=2000, signers=MEMBERS):
    leader = MEMBERS[-1]
    signing = block_signing_digest(height, prev, aid, events, MEMBERS,
                                   threshold, leader)
    multisig = MultiSigSet(
        federation=MEMBERS, threshold_n=threshold,
        signatures={v: sign(keys[v].secret, signing) for v in signers})
    return seal_block(height, prev, aid, tuple(events), multisig, leader,
                      created_at)


@pytest.fixture
def chain():
    registry, keys = _registry(REPS)
    ledger = Ledger()
    aids = []
    for i in range(3):
        aid = derive_accident_id(0, 1000 + i, (1, 2))
        aids.append(aid)
        events = (_event(keys, registry, 1, ReporterRole.ACCIDENT, aid),
                  _event(keys, registry, 2, ReporterRole.ACCIDENT, aid))
        block = _make_block(keys, registry, aid, events, height=i,
                            prev=ledger.tip_hash())
        append_block(ledger, block, registry)
    return ledger, registry, keys, aids


# --- codec ---------------------------------------------------------------------

def test_block_round_trip(chain):
    ledger, _, _, _ = chain
    for block in ledger.blocks:
        cur = Cursor(encode_block(block))
        decoded = decode_block(cur)
        cur.expect_done()
        assert decoded == block


def test_block_body_layout_by_hand(chain):
    """Rebuild the hashed body with struct alone; the stored hash must be
    SHA-256 of exactly these bytes."""
    ledger, _, _, _ = chain
    b = ledger.blocks[1]

    def u32(v):
        return struct.pack(">I", v)

    def u64(v):
        return struct.pack(">Q", v)

    def blob(v):
        return u32(len(v)) + v

    expected = u64(b.height) + blob(b.prev_hash) + blob(b.accident_id)
    expected += u32(len(b.events))
    for e in b.events:
        expected += encode_event(e)  # event layout verified independently
    expected += u32(len(b.multisig.federation))
    for m in b.multisig.federation:
        expected += u64(m)
    expected += u32(b.multisig.threshold_n)
    expected += u32(len(b.multisig.signatures))
    for vid, sig in sorted(b.multisig.signatures.items()):
        expected += u64(vid) + blob(sig)
    expected += u64(b.leader) + u64(b.created_at)

    assert encode_block_body(b) == expected
    assert b.block_hash == hashlib.sha256(expected).digest()
    assert encode_block(b) == expected + blob(b.block_hash)


def test_seal_block_hash_covers_body(chain):
    ledger, _, _, _ = chain
    b = ledger.blocks[0]
    assert b.block_hash == digest(encode_block_body(b))
    changed = dataclasses.replace(b, created_at=b.created_at + 1)
    assert digest(encode_block_body(changed)) != b.block_hash


def test_signing_digest_ignores_timestamp_and_signatures(chain):
    ledger, _, _, _ = chain
    b = ledger.blocks[0]
    later = dataclasses.replace(b, created_at=b.created_at + 999)
    stripped = dataclasses.replace(b, multisig=MultiSigSet(
        federation=b.multisig.federation,
        threshold_n=b.multisig.threshold_n, signatures={}))
    assert signing_digest_of(later) == signing_digest_of(b)
    assert signing_digest_of(stripped) == signing_digest_of(b)
    fewer = dataclasses.replace(b, events=b.events[:1])
    assert signing_digest_of(fewer) != signing_digest_of(b)


# --- append and verify -----------------------------------------------------------

def test_append_rejects_wrong_height(chain):
    ledger, registry, keys, aids = chain
    block = _make_block(keys, registry, aids[0], ledger.blocks[0].events,
                        height=5, prev=ledger.tip_hash())
    with pytest.raises(BadHeight):
        append_block(ledger, block, registry)
    assert len(ledger.blocks) == 3  # ledger untouched


def test_append_rejects_wrong_prev_hash(chain):
    ledger, registry, keys, aids = chain
    block = _make_block(keys, registry, aids[0], ledger.blocks[0].events,
                        height=3, prev=b"\x11" * 32)
    with pytest.raises(BadPrevHash):
        append_block(ledger, block, registry)


def test_append_rejects_stale_block_hash(chain):
    ledger, registry, keys, aids = chain
    good = _make_block(keys, registry, aids[0], ledger.blocks[0].events,
                       height=3, prev=ledger.tip_hash())
    tampered = dataclasses.replace(good, created_at=good.created_at + 1)
    with pytest.raises(BadBlockHash):
        append_block(ledger, tampered, registry)


def test_append_rejects_insufficient_signatures(chain):
    ledger, registry, keys, aids = chain
    short = _make_block(keys, registry, aids[0], ledger.blocks[0].events,
                        height=3, prev=ledger.tip_hash(), signers=(10,))
    with pytest.raises(MultisigFailed):
        append_block(ledger, short, registry)


def test_append_rejects_unregistered_federation_member(chain):
    ledger, registry, keys, aids = chain
    _, stranger_keys = _registry({99: 50.0})
    keys = {**keys, 99: stranger_keys[99]}
    aid = aids[0]
    events = ledger.blocks[0].events
    signing = block_signing_digest(3, ledger.tip_hash(), aid, events,
                                   (10, 11, 99), 2, 10)
    multisig = MultiSigSet(
        federation=(10, 11, 99), threshold_n=2,
        signatures={v: sign(keys[v].secret, signing) for v in (10, 11, 99)})
    block = seal_block(3, ledger.tip_hash(), aid, events, multisig, 10, 2000)
    with pytest.raises(MultisigFailed):
        append_block(ledger, block, registry)


def test_height_checked_before_content(chain):
    ledger, registry, keys, aids = chain
    good = _make_block(keys, registry, aids[0], ledger.blocks[0].events,
                       height=7, prev=b"\x22" * 32)
    broken = dataclasses.replace(good, created_at=good.created_at + 1)
    with pytest.raises(BadHeight):  # not BadPrevHash or BadBlockHash
        append_block(ledger, broken, registry)


def test_verify_chain_accepts_intact_chain(chain):
    ledger, registry, _, _ = chain
    report = verify_chain(ledger, registry)
    assert report.valid and report.first_bad_height is None
    assert report.checked == 3


def test_verify_chain_pinpoints_tampered_block(chain):
    ledger, registry, _, _ = chain
    b = ledger.blocks[1]
    ledger.blocks[1] = dataclasses.replace(b, created_at=b.created_at + 1)
    report = verify_chain(ledger, registry)
    assert not report.valid
    assert report.first_bad_height == 1


def test_verify_chain_catches_resealed_tamper_via_signatures(chain):
    # an attacker who edits an event and recomputes the block hash still
    # cannot fake the federation signatures over the new content
    ledger, registry, keys, aids = chain
    b = ledger.blocks[1]
    resealed = seal_block(b.height, b.prev_hash, b.accident_id, b.events[:1],
                          b.multisig, b.leader, b.created_at)
    ledger.blocks[1] = resealed
    report = verify_chain(ledger, registry)
    assert not report.valid
    assert report.first_bad_height == 1


def test_verify_chain_without_registry_is_structural(chain):
    ledger, _, _, _ = chain
    assert verify_chain(ledger, None).valid
    b = ledger.blocks[2]
    ledger.blocks[2] = dataclasses.replace(b, created_at=b.created_at + 1)
    report = verify_chain(ledger, None)
    assert not report.valid and report.first_bad_height == 2


# --- files ---------------------------------------------------------------------

def test_ledger_file_round_trip(tmp_path, chain):
    ledger, registry, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    loaded = load_ledger_file(path)
    assert loaded.blocks == ledger.blocks
    assert verify_ledger_file(path, registry).valid


def test_ledger_file_header_layout(tmp_path, chain):
    ledger, _, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    raw = open(path, "rb").read()
    assert raw[:4] == LEDGER_MAGIC == b"POEL"
    assert raw[4] == FORMAT_VERSION == 1
    first_len = struct.unpack(">I", raw[5:9])[0]
    assert raw[9:9 + first_len] == encode_block(ledger.blocks[0])


def test_ledger_file_bad_magic(tmp_path, chain):
    ledger, _, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    raw = bytearray(open(path, "rb").read())
    raw[0] ^= 0xFF
    open(path, "wb").write(bytes(raw))
    with pytest.raises(LedgerFormatError):
        read_ledger_file(path)


def test_ledger_file_bad_version(tmp_path, chain):
    ledger, _, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    raw = bytearray(open(path, "rb").read())
    raw[4] = 2
    open(path, "wb").write(bytes(raw))
    with pytest.raises(LedgerFormatError):
        read_ledger_file(path)


def test_ledger_file_shorter_than_header(tmp_path):
    path = str(tmp_path / "ledger.bin")
    open(path, "wb").write(b"POE")
    with pytest.raises(LedgerFormatError):
        read_ledger_file(path)


def test_truncated_frame_reads_leniently(tmp_path, chain):
    ledger, _, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    raw = open(path, "rb").read()
    open(path, "wb").write(raw[:-10])
    blocks, bad_frame = read_ledger_file(path)
    assert blocks == ledger.blocks[:2]
    assert bad_frame == 2
    with pytest.raises(LedgerFormatError):
        load_ledger_file(path)


def test_corrupt_frame_payload_reads_leniently(tmp_path, chain):
    ledger, _, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    raw = bytearray(open(path, "rb").read())
    frame0_len = struct.unpack(">I", raw[5:9])[0]
    raw[9 + frame0_len + 4 + 3] ^= 0x01  # 4th byte inside frame 1's payload
    open(path, "wb").write(bytes(raw))
    blocks, bad_frame = read_ledger_file(path)
    report = verify_ledger_file(path, None)
    assert not report.valid
    assert report.first_bad_height == 1
    assert bad_frame == 1 or (blocks[1:2] and blocks[1] != ledger.blocks[1])


def test_verify_ledger_file_flags_bit_flip_in_stored_hash(tmp_path, chain):
    ledger, _, _, _ = chain
    path = str(tmp_path / "ledger.bin")
    write_ledger_file(path, ledger)
    raw = bytearray(open(path, "rb").read())
    frame0_len = struct.unpack(">I", raw[5:9])[0]
    raw[9 + frame0_len - 1] ^= 0x80  # last byte of block 0: its stored hash
    open(path, "wb").write(bytes(raw))
    report = verify_ledger_file(path, None)
    assert not report.valid
    assert report.first_bad_height == 0


def test_unconfirmed_file_round_trip(tmp_path, chain):
    ledger, registry, keys, aids = chain
    rec = UnconfirmedEventRecord(
        accident_id=aids[0], events=ledger.blocks[0].events,
        reason=UnconfirmedReason.THRESHOLD_NOT_MET, recorded_at=3000)
    empty = UnconfirmedEventRecord(
        accident_id=aids[1], events=(),
        reason=UnconfirmedReason.NO_FEDERATION, recorded_at=3000)
    holder = Ledger(unconfirmed=[rec, empty])
    path = str(tmp_path / "unconfirmed.bin")
    write_unconfirmed_file(path, holder)
    raw = open(path, "rb").read()
    assert raw[:4] == UNCONFIRMED_MAGIC == b"POEU"
    assert load_unconfirmed_file(path) == [rec, empty]


def test_unconfirmed_unknown_reason_rejected():
    rec = UnconfirmedEventRecord(
        accident_id=b"\x01" * 16, events=(),
        reason=UnconfirmedReason.NO_VALID_EVENTS, recorded_at=3000)
    raw = bytearray(encode_unconfirmed(rec))
    reason_at = 4 + 16 + 4  # accident id blob, then the empty event list
    assert raw[reason_at] == UnconfirmedReason.NO_VALID_EVENTS
    raw[reason_at] = 99
    with pytest.raises(DecodeError):
        decode_unconfirmed(Cursor(bytes(raw)))


# --- forensic review -------------------------------------------------------------

def _forensic_ledger():
    registry, keys = _registry(REPS | {3: 50.0, 4: 50.0, 5: 50.0})
    aid = derive_accident_id(0, 1000, (1, 2))
    events = [
        _event(keys, registry, 1, ReporterRole.ACCIDENT, aid,
               velocity=(13.4, 0.0)),
        _event(keys, registry, 2, ReporterRole.ACCIDENT, aid,
               velocity=(13.4, 0.0), self_speed=8.9),
        _event(keys, registry, 3, ReporterRole.WITNESS, aid,
               observed_speeds={1: 13.4, 2: 13.4}),
        _event(keys, registry, 4, ReporterRole.WITNESS, aid,
               observed_speeds={1: 13.4, 2: 13.0}),
        _event(keys, registry, 5, ReporterRole.WITNESS, aid,
               observed_speeds={1: 13.4, 2: 13.9}),
    ]
    block = _make_block(keys, registry, aid, events)
    return Ledger(blocks=[block]), aid


def test_forensic_review_flags_underreported_speed():
    ledger, aid = _forensic_ledger()
    report = forensic_review(ledger, aid, tolerance=2.0)
    assert [c.subject for c in report.comparisons] == [1, 2]
    honest, lying = report.comparisons
    assert honest.self_reported == pytest.approx(13.4)
    assert honest.spread == pytest.approx(0.0)
    assert not honest.flagged
    assert lying.self_reported == pytest.approx(8.9)
    assert lying.witness_estimates == (13.4, 13.0, 13.9)
    assert lying.spread == pytest.approx(abs(8.9 - 13.4))  # vs the median
    assert lying.flagged


def test_forensic_review_respects_tolerance():
    ledger, aid = _forensic_ledger()
    report = forensic_review(ledger, aid, tolerance=5.0)
    assert not any(c.flagged for c in report.comparisons)


def test_forensic_review_without_witness_estimates():
    registry, keys = _registry(REPS)
    aid = derive_accident_id(0, 1000, (1, 2))
    events = [
        _event(keys, registry, 1, ReporterRole.ACCIDENT, aid),
        _event(keys, registry, 2, ReporterRole.ACCIDENT, aid),
    ]
    ledger = Ledger(blocks=[_make_block(keys, registry, aid, events)])
    report = forensic_review(ledger, aid, tolerance=2.0)
    for c in report.comparisons:
        assert c.witness_estimates == ()
        assert c.spread is None
        assert not c.flagged


def test_block_for_accident_not_found(chain):
    ledger, _, _, _ = chain
    with pytest.raises(NotFound):
        block_for_accident(ledger, b"\xab" * 16)
    with pytest.raises(NotFound):
        forensic_review(ledger, b"\xab" * 16, tolerance=2.0)


# --- JSON export -------------------------------------------------------------

def test_ledger_json_is_deterministic_and_parseable(chain):
    ledger, _, _, aids = chain
    text = ledger_to_json(ledger)
    assert text == ledger_to_json(ledger)
    doc = json.loads(text)
    assert [b["height"] for b in doc["blocks"]] == [0, 1, 2]
    assert doc["blocks"][0]["accident_id"] == aids[0].hex()


def test_report_to_dict_round_trips_through_json():
    ledger, aid = _forensic_ledger()
    report = forensic_review(ledger, aid, tolerance=2.0)
    doc = json.loads(json.dumps(report_to_dict(report)))
    assert doc["accident_id"] == aid.hex()
    flagged = [c for c in doc["comparisons"] if c["flagged"]]
    assert [c["subject"] for c in flagged] == [2]
