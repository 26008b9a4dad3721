"""Hard forks: a new network that starts from a copy of its parent's prefix."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

from .chain import ChainInstance
from .errors import DuplicateRegistrationError, ForkRangeError


def hard_fork(
    parent: ChainInstance,
    fork_block_no: int,
    new_network_id: int,
    new_port: int,
    new_difficulty: Optional[int] = None,
) -> ChainInstance:
    """Clone ``parent.blocks[:fork_block_no]`` into a new chain.

    The child keeps the parent's hashes for the shared prefix; ``new_difficulty``
    (default: the parent's) only governs blocks appended afterwards. Recording
    the event in a repository is a separate step.
    """
    if not 1 <= fork_block_no <= parent.height:
        raise ForkRangeError(
            f"fork_block_no must be in [1, {parent.height}] for network {parent.network_id}, "
            f"got {fork_block_no}"
        )
    if new_network_id == parent.network_id:
        raise DuplicateRegistrationError(f"fork reuses parent network id {new_network_id}")
    return replace(
        parent,
        network_id=new_network_id,
        port=new_port,
        difficulty=parent.difficulty if new_difficulty is None else new_difficulty,
        blocks=parent.blocks[:fork_block_no],
        parent_network_id=parent.network_id,
        fork_block_no=fork_block_no,
    )
