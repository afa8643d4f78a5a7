"""Digests, key pairs, signatures, threshold multi-signature checks, and the
DMV registry of legitimate vehicles.

Digests are SHA-256 over canonical byte sequences. Signatures are Ed25519
over 32-byte digests (never raw payloads), which keeps canonical
serialization concerns in one place. Both are deterministic: equal inputs
give equal outputs across runs and platforms.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Mapping

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import UnknownVehicle

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
GENESIS_HASH = b"\x00" * DIGEST_SIZE

VehicleId = int


def digest(payload: bytes) -> bytes:
    """32-byte SHA-256 digest of a canonical byte sequence."""
    return hashlib.sha256(payload).digest()


@dataclass(frozen=True)
class KeyPair:
    public: bytes  # 32-byte raw Ed25519 public key
    secret: bytes  # 32-byte seed / raw private key


def keygen(seed: bytes) -> KeyPair:
    """Derive a key pair from a 32-byte seed. Same seed, same pair."""
    if len(seed) != 32:
        raise ValueError(f"key seed must be 32 bytes, got {len(seed)}")
    priv = Ed25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes_raw()
    return KeyPair(public=pub, secret=seed)


def sign(secret: bytes, message: bytes) -> bytes:
    """Ed25519 signature over a 32-byte digest."""
    if len(message) != DIGEST_SIZE:
        raise ValueError("sign expects a 32-byte digest")
    return Ed25519PrivateKey.from_private_bytes(secret).sign(message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is a valid Ed25519 signature of message under public.

    Returns False (never raises) on any malformed key, message, or signature.
    """
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        return True
    except (InvalidSignature, ValueError, TypeError):
        return False


def clamp_reputation(value: float) -> float:
    """Reputation scores are bounded to [0, 100]."""
    return min(100.0, max(0.0, value))


@dataclass(frozen=True)
class RegistryEntry:
    vehicle_id: VehicleId
    plate: str
    vin: str
    public_key: bytes
    reputation: float

    def __post_init__(self):
        if not 0.0 <= self.reputation <= 100.0:
            raise ValueError(f"reputation {self.reputation} outside [0, 100]")


class DmvRegistry:
    """Vehicle id to registration record. Read-only during a simulation step;
    reputation updates produce a new registry between steps."""

    def __init__(self, entries: Mapping[VehicleId, RegistryEntry] | None = None):
        self._entries: dict[VehicleId, RegistryEntry] = dict(entries or {})

    def register(self, entry: RegistryEntry) -> None:
        if entry.vehicle_id in self._entries:
            raise ValueError(f"vehicle {entry.vehicle_id} already registered")
        self._entries[entry.vehicle_id] = entry

    def __contains__(self, vehicle_id: VehicleId) -> bool:
        return vehicle_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, vehicle_id: VehicleId) -> RegistryEntry:
        try:
            return self._entries[vehicle_id]
        except KeyError:
            raise UnknownVehicle(f"vehicle {vehicle_id} not in DMV registry") from None

    def public_key(self, vehicle_id: VehicleId) -> bytes:
        return self.get(vehicle_id).public_key

    def reputation(self, vehicle_id: VehicleId) -> float:
        return self.get(vehicle_id).reputation

    def vehicle_ids(self) -> list[VehicleId]:
        return sorted(self._entries)

    def with_reputation(self, vehicle_id: VehicleId, value: float) -> "DmvRegistry":
        """Copy of this registry with one reputation replaced (clamped)."""
        entry = self.get(vehicle_id)
        entries = dict(self._entries)
        entries[vehicle_id] = replace(entry, reputation=clamp_reputation(value))
        return DmvRegistry(entries)


@dataclass(frozen=True)
class MultiSigSet:
    """n-of-m multi-signature: a plain list of independent signatures checked
    against a threshold, no aggregation."""

    federation: tuple[VehicleId, ...]
    threshold_n: int
    signatures: Mapping[VehicleId, bytes]

    def __post_init__(self):
        if not 1 <= self.threshold_n <= len(self.federation):
            raise ValueError(
                f"threshold {self.threshold_n} outside [1, {len(self.federation)}]"
            )
        object.__setattr__(self, "signatures", dict(self.signatures))


def check_multisig(block_digest: bytes, ms: MultiSigSet, registry: DmvRegistry) -> bool:
    """True iff at least threshold_n federation members contributed a valid
    signature over block_digest.

    Signatures keyed by non-members are ignored, not errors. A federation
    member missing from the registry raises UnknownVehicle.
    """
    members = set(ms.federation)
    keys = {m: registry.public_key(m) for m in sorted(members)}
    valid = 0
    for signer in sorted(ms.signatures):
        if signer not in members:
            continue
        if verify(keys[signer], block_digest, ms.signatures[signer]):
            valid += 1
    return valid >= ms.threshold_n
