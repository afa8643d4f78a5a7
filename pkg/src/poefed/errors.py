"""Exception types shared across the package."""


class PoefedError(Exception):
    """Base class for all protocol and harness errors."""


class UnknownVehicle(PoefedError):
    """A referenced vehicle id does not resolve (world or registry)."""


class NoBaseStations(PoefedError):
    """Cell assignment requested against an empty station list."""


class UnregisteredVehicle(PoefedError):
    """Event creation attempted by a vehicle absent from the DMV registry."""


class EmptyFederation(PoefedError):
    """No eligible community vehicles to form a verifier federation."""


class ThresholdNotMet(PoefedError):
    """Fewer matching federation signatures than the required threshold."""


class EmptyEventSet(PoefedError):
    """No event data survived validation; a block cannot be assembled."""


class NotFound(PoefedError):
    """Requested accident id is not present in any ledger block."""


class LedgerAppendError(PoefedError):
    """Base class for block append rejections; subclass names the invariant."""


class BadPrevHash(LedgerAppendError):
    pass


class BadHeight(LedgerAppendError):
    pass


class MultisigFailed(LedgerAppendError):
    pass


class BadBlockHash(LedgerAppendError):
    pass


class LedgerFormatError(PoefedError):
    """Ledger file magic, version, or framing is unreadable."""


class DecodeError(PoefedError):
    """Canonical byte sequence does not decode to the expected structure."""


class InvalidConfig(PoefedError):
    """Scenario configuration rejected; message carries the field path."""

    def __init__(self, field_path: str, detail: str):
        self.field_path = field_path
        self.detail = detail
        super().__init__(f"{field_path}: {detail}")


class InvalidAttack(PoefedError):
    """Attack specification rejected against the scenario it targets."""
