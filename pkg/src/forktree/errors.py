"""Exception hierarchy shared by every forktree module."""

from __future__ import annotations


class ForkTreeError(Exception):
    """Base class for all forktree failures."""


class MiningError(ForkTreeError):
    """The nonce space was exhausted without meeting the target."""


class ForkRangeError(ForkTreeError, ValueError):
    """A fork point lies outside the parent chain."""


class RegistrationError(ForkTreeError):
    """A network id or port is already in use."""


class DuplicateRegistrationError(RegistrationError):
    pass


class UnknownParentError(ForkTreeError):
    pass


class ForkNotFoundError(ForkTreeError, LookupError):
    pass


class MalformedRepositoryError(ForkTreeError):
    pass


class UnknownNetworkError(ForkTreeError, LookupError):
    pass


class NetworkUnreachableError(ForkTreeError):
    def __init__(self, network_id: int | None, detail: str = "") -> None:
        self.network_id = network_id
        msg = f"network {network_id} unreachable"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class RemoteError(ForkTreeError):
    """The peer answered with an ERR message."""

    def __init__(self, code: str, message: str) -> None:
        self.code = code
        super().__init__(f"{code}: {message}")


class PersistError(ForkTreeError):
    pass


class ChainParseError(PersistError):
    pass


class HashMismatchError(PersistError):
    def __init__(self, index: int, reason: str, path: object = None) -> None:
        self.index = index
        self.reason = reason
        where = f" in {path}" if path is not None else ""
        super().__init__(f"block {index} failed verification ({reason}){where}")


class ConsistencyError(PersistError):
    pass
