"""The repository chain: one mined block per fork event, plus contract-style queries.

Block 0 is a fixed genesis; block ``i + 1`` carries the record with
``fork_id == i`` encoded as canonical JSON. Queries are answered from an
in-memory index that is rebuilt from the blocks whenever a repository is
loaded, so the chain stays the single source of truth.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

from . import canonical
from .chain import MAX_PORT, ChainInstance, append_payload, create_chain, validate_chain
from .errors import (
    DuplicateRegistrationError,
    ForkNotFoundError,
    MalformedRepositoryError,
    UnknownParentError,
)
from .traverse import AdjacencyList, ChainHandle

ROOT = None
NOT_FOUND = 2**256 - 1
DEFAULT_REPOSITORY_DIFFICULTY = 8
GENESIS_PAYLOAD = b"forktree repository"

_FIELDS = ("fork_block_no", "fork_id", "network_id", "parent_network_id", "port_number")


@dataclass(frozen=True)
class ForkRecord:
    fork_id: int
    network_id: int
    port_number: int
    parent_network_id: Optional[int]
    fork_block_no: int

    @property
    def is_root(self) -> bool:
        return self.parent_network_id is ROOT

    def to_payload(self) -> bytes:
        return canonical.dump_bytes(asdict(self))

    @classmethod
    def from_payload(cls, payload: bytes) -> "ForkRecord":
        try:
            doc = canonical.loads(payload)
        except (ValueError, UnicodeDecodeError) as exc:
            raise MalformedRepositoryError(f"undecodable fork record: {exc}") from exc
        if not isinstance(doc, dict) or tuple(sorted(doc)) != _FIELDS:
            raise MalformedRepositoryError(f"fork record has fields {sorted(doc) if isinstance(doc, dict) else doc!r}")
        for key in _FIELDS:
            value = doc[key]
            if value is None and key == "parent_network_id":
                continue
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise MalformedRepositoryError(f"fork record field {key} = {value!r}")
        if doc["port_number"] > MAX_PORT:
            raise MalformedRepositoryError(f"port {doc['port_number']} out of range")
        return cls(**doc)


def check_records(records: Sequence[ForkRecord]) -> None:
    """Raise MalformedRepositoryError unless ``records`` form a valid registration log."""
    known: set[int] = set()
    roots = 0
    for position, rec in enumerate(records):
        if rec.fork_id != position:
            raise MalformedRepositoryError(f"record at position {position} has fork_id {rec.fork_id}")
        if rec.network_id in known:
            raise MalformedRepositoryError(f"network {rec.network_id} registered twice")
        if rec.is_root:
            roots += 1
            if roots > 1:
                raise MalformedRepositoryError("more than one root record")
        elif rec.parent_network_id not in known:
            raise MalformedRepositoryError(
                f"network {rec.network_id} names parent {rec.parent_network_id} before it is registered"
            )
        known.add(rec.network_id)
    if records and roots == 0:
        raise MalformedRepositoryError("no root record")


def build_adjacency(records: Sequence[ForkRecord]) -> AdjacencyList:
    if not records:
        raise MalformedRepositoryError("empty repository has no root")
    check_records(records)
    children: dict[int, list[int]] = {}
    root = None
    for rec in records:
        children[rec.network_id] = []
        if rec.is_root:
            root = rec.network_id
        else:
            children[rec.parent_network_id].append(rec.network_id)
    return AdjacencyList(root, {k: tuple(v) for k, v in children.items()})


def decode_chain(chain: ChainInstance) -> list[ForkRecord]:
    """Decode fork records straight from a repository chain's blocks."""
    return [ForkRecord.from_payload(block.payload) for block in chain.blocks[1:]]


def read_records(handle: ChainHandle) -> list[ForkRecord]:
    """Decode fork records through a chain handle (local or remote)."""
    return [ForkRecord.from_payload(handle.get_block(i).payload) for i in range(1, handle.height())]


class Repository:
    """Registry of fork events backed by its own proof-of-work chain.

    One writer at a time: :meth:`add_fork_detail` takes a lock, queries read a
    consistent snapshot without it.
    """

    def __init__(self, chain: ChainInstance) -> None:
        check = validate_chain(chain)
        if not check:
            raise MalformedRepositoryError(f"repository chain invalid at block {check.index}: {check.reason}")
        if not chain.is_root:
            raise MalformedRepositoryError("repository chain cannot be a fork")
        records = decode_chain(chain)
        check_records(records)
        if any(r.network_id == chain.network_id for r in records):
            raise MalformedRepositoryError("repository registers its own network id")
        self._lock = threading.Lock()
        by_network: dict[int, int] = {}
        children: dict[int, tuple[int, ...]] = {}
        for r in records:
            by_network[r.network_id] = r.fork_id
            children[r.fork_id] = ()
            if not r.is_root:
                parent = by_network[r.parent_network_id]
                children[parent] += (r.fork_id,)
        self._state = (chain, tuple(records), by_network, children)

    @classmethod
    def create(
        cls,
        network_id: int,
        port: int,
        difficulty: int = DEFAULT_REPOSITORY_DIFFICULTY,
        genesis_payload: bytes = GENESIS_PAYLOAD,
    ) -> "Repository":
        return cls(create_chain(network_id, port, difficulty, genesis_payload))

    @property
    def chain(self) -> ChainInstance:
        return self._state[0]

    @property
    def network_id(self) -> int:
        return self.chain.network_id

    @property
    def port(self) -> int:
        return self.chain.port

    def __len__(self) -> int:
        return len(self._state[1])

    def add_fork_detail(
        self,
        network_id: int,
        port_number: int,
        parent_network_id: Optional[int],
        fork_block_no: int,
    ) -> int:
        with self._lock:
            chain, records, index, children = self._state
            if network_id in index or network_id == chain.network_id:
                raise DuplicateRegistrationError(f"network {network_id} already registered")
            if parent_network_id is not ROOT and parent_network_id not in index:
                raise UnknownParentError(f"parent network {parent_network_id} is not registered")
            if parent_network_id is ROOT and records:
                raise MalformedRepositoryError("repository already has a root network")
            rec = ForkRecord(len(records), network_id, port_number, parent_network_id, fork_block_no)
            # round-trip through the decoder so nothing unreadable reaches the chain
            ForkRecord.from_payload(rec.to_payload())
            chain = append_payload(chain, rec.to_payload())
            children = {**children, rec.fork_id: ()}
            if not rec.is_root:
                parent = index[parent_network_id]
                children[parent] += (rec.fork_id,)
            self._state = (chain, records + (rec,), {**index, network_id: rec.fork_id}, children)
            return rec.fork_id

    def find_fork_id(self, network_id: int) -> int:
        return self._state[2].get(network_id, NOT_FOUND)

    def get_fork_data(self, fork_id: int) -> ForkRecord:
        records = self._state[1]
        if not 0 <= fork_id < len(records):
            raise ForkNotFoundError(f"no fork with id {fork_id}")
        return records[fork_id]

    def get_children(self, fork_id: int) -> list[int]:
        self.get_fork_data(fork_id)
        return list(self._state[3][fork_id])

    def get_all_fork_details(self) -> list[ForkRecord]:
        return list(self._state[1])

    def adjacency(self) -> AdjacencyList:
        return build_adjacency(self._state[1])
