"""Exception types shared across the toolkit."""


class EntropruneError(Exception):
    """Base class for all toolkit errors."""


class ContractError(EntropruneError, ValueError):
    """A precondition or type invariant was violated by the caller."""


class CapacityError(EntropruneError):
    """Requested more pruned blocks than are eligible."""

    def __init__(self, message: str, eligible: int):
        super().__init__(message)
        self.eligible = eligible


class StructureError(EntropruneError):
    """A trace or plan is structurally incompatible with the operation."""


class InputError(EntropruneError):
    """Model input outside the valid domain (e.g. token id >= vocab)."""


class TrainingDivergedError(EntropruneError):
    """Loss became non-finite during training."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class TraceError(EntropruneError):
    """Base class for activation-trace I/O errors."""


class TraceFormatError(TraceError):
    """Byte stream is not an ETRC file (bad magic or malformed header)."""


class TraceVersionError(TraceFormatError):
    """ETRC version not supported by this reader."""


class TraceCorruptionError(TraceError):
    """Truncated stream or checksum mismatch; `offset` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class TraceDataError(TraceError):
    """Payload values violate trace invariants (non-finite entries)."""


class TraceIOError(TraceError):
    """Underlying sink or source failed mid-operation."""
