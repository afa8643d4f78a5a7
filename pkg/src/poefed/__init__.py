"""Accident event recording with witness consensus: a deterministic
simulator and protocol library.

Vehicles that detect a collision gather signed event data from nearby
witnesses, a reputation-weighted federation of bystanders validates it, and
an n-of-m multi-signature block is appended to an authority-held hash chain.
The harness replays the whole exchange deterministically and ships an attack
suite plus a forensic reviewer for the recorded data.
"""

from .crypto import (
    DmvRegistry,
    KeyPair,
    MultiSigSet,
    RegistryEntry,
    check_multisig,
    digest,
    keygen,
    sign,
    verify,
)
from .errors import (
    BadBlockHash,
    BadHeight,
    BadPrevHash,
    DecodeError,
    EmptyEventSet,
    EmptyFederation,
    InvalidAttack,
    InvalidConfig,
    LedgerAppendError,
    LedgerFormatError,
    MultisigFailed,
    NotFound,
    PoefedError,
    ThresholdNotMet,
    UnknownVehicle,
    UnregisteredVehicle,
)
from .events import EdrLog, EdrSample, EventData, SpeedObservation
from .harness import (
    AttackSpec,
    Classification,
    ColludingVerifiers,
    FakeWitnessRelay,
    Impersonate,
    ScenarioConfig,
    SimOutcome,
    TamperEvent,
    classify_outcome,
    inject_attack,
    load_attack,
    load_scenario,
    parse_scenario,
    run_scenario,
    write_outcome,
)
from .ledger import (
    Block,
    ChainReport,
    DiscrepancyReport,
    Ledger,
    UnconfirmedEventRecord,
    UnconfirmedReason,
    append_block,
    forensic_review,
    load_ledger_file,
    load_unconfirmed_file,
    read_ledger_file,
    verify_chain,
    verify_ledger_file,
    write_ledger_file,
    write_unconfirmed_file,
)
from .protocol import (
    Federation,
    ProtocolParams,
    apply_incentives,
    assemble_block,
    detect_accident,
    elect_leader,
    select_verifiers,
    validate_event,
)
from .world import BaseStation, Position, WorldState

__all__ = [
    "AttackSpec",
    "BadBlockHash",
    "BadHeight",
    "BadPrevHash",
    "BaseStation",
    "Block",
    "ChainReport",
    "Classification",
    "ColludingVerifiers",
    "DecodeError",
    "DiscrepancyReport",
    "DmvRegistry",
    "EdrLog",
    "EdrSample",
    "EmptyEventSet",
    "EmptyFederation",
    "EventData",
    "FakeWitnessRelay",
    "Federation",
    "Impersonate",
    "InvalidAttack",
    "InvalidConfig",
    "KeyPair",
    "Ledger",
    "LedgerAppendError",
    "LedgerFormatError",
    "MultiSigSet",
    "MultisigFailed",
    "NotFound",
    "PoefedError",
    "Position",
    "ProtocolParams",
    "RegistryEntry",
    "ScenarioConfig",
    "SimOutcome",
    "SpeedObservation",
    "TamperEvent",
    "ThresholdNotMet",
    "UnconfirmedEventRecord",
    "UnconfirmedReason",
    "UnknownVehicle",
    "UnregisteredVehicle",
    "WorldState",
    "append_block",
    "apply_incentives",
    "assemble_block",
    "check_multisig",
    "classify_outcome",
    "detect_accident",
    "digest",
    "elect_leader",
    "forensic_review",
    "inject_attack",
    "keygen",
    "load_attack",
    "load_ledger_file",
    "load_scenario",
    "load_unconfirmed_file",
    "parse_scenario",
    "read_ledger_file",
    "run_scenario",
    "select_verifiers",
    "sign",
    "validate_event",
    "verify",
    "verify_chain",
    "verify_ledger_file",
    "write_ledger_file",
    "write_outcome",
    "write_unconfirmed_file",
]

__version__ = "0.1.0"
