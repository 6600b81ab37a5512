"""Exception types shared across the package.

Invalid arguments raise plain ``ValueError``; the classes below mark the
failure families the command line maps onto distinct exit codes.
"""


class DataError(ValueError):
    """Dataset could not be read, parsed or partitioned."""


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ProtocolError(RuntimeError):
    """Federation protocol violated (bad message, mismatch, straggler)."""

    def __init__(self, message: str, code: str = "protocol"):
        super().__init__(message)
        self.code = code


class RoundTimeoutError(ProtocolError):
    def __init__(self, participant_id, message: str | None = None):
        super().__init__(
            message or f"participant {participant_id} did not report before the round deadline",
            code="straggler",
        )
        self.participant_id = participant_id
