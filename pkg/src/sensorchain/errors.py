"""Exception types shared across the package."""


class SensorChainError(Exception):
    """Base class for all package errors."""


class InvalidParameter(SensorChainError):
    """An argument violates a documented precondition."""


class ChainExhausted(SensorChainError):
    """All one-time keys of a signer chain have been consumed."""


class DecodeError(SensorChainError):
    """Malformed wire bytes or state file."""


class ConfigError(SensorChainError):
    """Invalid system configuration or scenario file."""


class AuthError(SensorChainError):
    """Caller lacks the authority required for the operation."""


class DuplicateError(SensorChainError):
    """Key already present on the relevant whitelist."""


class MspUnavailable(SensorChainError):
    """Membership operation attempted while the MSP is offline."""


class NotLeader(SensorChainError):
    """Block proposal attempted by an orderer that is not the leader."""


class TransferFailed(SensorChainError):
    """Sensor hand-over could not be completed by the receiving side."""
