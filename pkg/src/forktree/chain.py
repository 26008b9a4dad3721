"""A single proof-of-work chain: creation, mined append, validation, lookup."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

from .hashcore import ZERO_HASH, Block, check_difficulty, hash_block, meets_target, mine

MAX_PORT = 65535

BAD_GENESIS = "bad-genesis"
BROKEN_LINK = "broken-link"
WRONG_INDEX = "wrong-index"
BELOW_DIFFICULTY = "below-difficulty"
STALE_HASH = "stale-hash"


@dataclass(frozen=True)
class ChainInstance:
    """One network. Immutable; appends return a new instance."""

    network_id: int
    port: int
    difficulty: int
    blocks: tuple[Block, ...]
    parent_network_id: Optional[int] = None
    fork_block_no: int = 0

    def __post_init__(self) -> None:
        if self.network_id < 0:
            raise ValueError("network_id must be non-negative")
        if not 0 <= self.port <= MAX_PORT:
            raise ValueError(f"port must be in [0, {MAX_PORT}]")
        if self.fork_block_no < 0:
            raise ValueError("fork_block_no must be non-negative")
        check_difficulty(self.difficulty)
        if not isinstance(self.blocks, tuple):
            object.__setattr__(self, "blocks", tuple(self.blocks))
        if self.parent_network_id is None and self.fork_block_no != 0:
            raise ValueError("a root chain has fork_block_no 0")
        if self.parent_network_id is not None and not 1 <= self.fork_block_no <= len(self.blocks):
            raise ValueError("a forked chain shares between 1 and height blocks with its parent")

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def is_root(self) -> bool:
        return self.parent_network_id is None


@dataclass(frozen=True)
class Validation:
    """Outcome of :func:`validate_chain`. Truthy when the chain is valid."""

    index: Optional[int] = None
    reason: Optional[str] = None
    valid: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "valid", self.reason is None)

    def __bool__(self) -> bool:
        return self.valid


VALID = Validation()


def create_chain(network_id: int, port: int, difficulty: int, genesis_payload: bytes) -> ChainInstance:
    genesis = mine(0, ZERO_HASH, genesis_payload, difficulty)
    return ChainInstance(network_id, port, difficulty, (genesis,))


def append_payload(chain: ChainInstance, payload: bytes) -> ChainInstance:
    block = mine(chain.height, chain.tip.hash, payload, chain.difficulty)
    return replace(chain, blocks=chain.blocks + (block,))


def validate_chain(chain: ChainInstance) -> Validation:
    """Report the lowest block index at which any chain invariant fails.

    Blocks inside a fork's shared prefix were mined under the parent's rules,
    so the difficulty test only applies from ``fork_block_no`` onwards.
    """
    if not chain.blocks:
        return Validation(0, BAD_GENESIS)
    prev_hash = ZERO_HASH
    for i, block in enumerate(chain.blocks):
        header = block.header
        if i == 0 and (header.index != 0 or header.previous_hash != ZERO_HASH):
            return Validation(0, BAD_GENESIS)
        if header.index != i:
            return Validation(i, WRONG_INDEX)
        if hash_block(header) != block.hash:
            return Validation(i, STALE_HASH)
        if header.previous_hash != prev_hash:
            return Validation(i, BROKEN_LINK)
        if i >= chain.fork_block_no and not meets_target(block.hash, chain.difficulty):
            return Validation(i, BELOW_DIFFICULTY)
        prev_hash = block.hash
    return VALID


def find_in_chain(chain: ChainInstance, target: bytes) -> Optional[tuple[int, Block]]:
    for i, block in enumerate(chain.blocks):
        if block.payload == target:
            return i, block
    return None
