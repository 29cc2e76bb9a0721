class FedShapError(Exception):
    """Base class for errors raised by this package."""


class DataError(FedShapError, ValueError):
    """Input data could not be read or does not match its schema."""


class EnumerationCapError(FedShapError, ValueError):
    """A game has more players than exact enumeration allows."""


class ProtocolError(FedShapError):
    """A frame could not be decoded or a peer answered with ERROR."""

    def __init__(self, message: str, code: int | None = None):
        super().__init__(message)
        self.code = code


class ChannelError(ProtocolError):
    """The transport to the other party failed."""
