from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from feddkd.federated.state import ServerState


class FedDKDError(Exception):
    def __init__(self, msg: Optional[str] = None):
        super().__init__(msg)


class ShapeMismatchError(FedDKDError):
    pass


class NumericalError(FedDKDError):
    pass


class ModelSpecError(FedDKDError):
    pass


class PartitionError(FedDKDError):
    pass


class DatasetFormatError(FedDKDError):
    pass


class ConfigError(FedDKDError):
    pass


class RunAbortedError(FedDKDError):
    """Raised when a federated run stops mid-way. Carries the server state reached so far."""

    def __init__(self, msg: str, server: "ServerState"):
        super().__init__(msg)
        self.server = server
