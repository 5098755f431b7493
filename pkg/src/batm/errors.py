"""Exception hierarchy shared by every BATM module."""

from __future__ import annotations


class BatmError(Exception):
    """Base class for all domain errors raised by this package."""


class EmptyLeaves(BatmError):
    pass


class MasterExpired(BatmError):
    pass


class MissingKey(BatmError):
    pass


class KeyExpired(BatmError):
    pass


class InvalidParams(BatmError):
    pass


class MalformedPayload(BatmError):
    pass


class MalformedBlock(BatmError):
    pass


class InvalidBlock(BatmError):
    def __init__(self, reasons):
        self.reasons = tuple(reasons)
        super().__init__("; ".join(self.reasons) or "invalid block")


class MinerNotAuthenticated(BatmError):
    pass


class MinerBanned(BatmError):
    pass


class SelfPayloadIncluded(BatmError):
    pass


class BlockTooLarge(BatmError):
    pass


class GenesisMismatch(BatmError):
    pass


class OutOfRange(BatmError):
    pass


class CorruptFile(BatmError):
    """Chain file framing or block encoding is unreadable.

    ``height`` is the index of the block being decoded, or ``None`` when the
    file-level framing itself is broken.
    """

    def __init__(self, message, height=None):
        self.height = height
        super().__init__(message)


class ValidationFailed(BatmError):
    def __init__(self, height, reasons):
        self.height = height
        self.reasons = tuple(reasons)
        super().__init__(f"block {height} invalid: " + "; ".join(self.reasons))


class NoSuchNode(BatmError):
    pass


class NoValidKey(BatmError):
    pass


class DuplicateService(BatmError):
    pass


class NotAService(BatmError):
    pass


class NotAuthenticated(BatmError):
    pass


class ZeroCoefficient(BatmError):
    pass


class ScenarioInvalid(BatmError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class NoEligibleMiner(BatmError):
    pass
