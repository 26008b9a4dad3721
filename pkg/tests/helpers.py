"""Fixture builders shared by the test modules."""

from __future__ import annotations

import random
import socket
from contextlib import ExitStack

from forktree.chain import create_chain
from forktree.netharness import Ecosystem
from forktree.repository import Repository

# network ids for the nine chains of the reference fork tree
NAMES = "ABCDEFGHI"
ID = {name: i + 1 for i, name in enumerate(NAMES)}
NAME = {v: k for k, v in ID.items()}
REPO_ID = 0

# (child, parent, fork_block_no), in registration order
NINE_FORKS = [
    ("B", "A", 2),
    ("C", "B", 3),
    ("D", "C", 4),
    ("E", "D", 5),
    ("F", "B", 3),
    ("G", "A", 3),
    ("H", "G", 4),
    ("I", "H", 5),
]
NINE_DFS = list("ABCDEFGHI")
# level order computed by hand from A->[B,G], B->[C,F], C->[D], D->[E], G->[H], H->[I]
NINE_BFS = list("ABGCFHDIE")


def ids(names) -> list[int]:
    return [ID[n] for n in names]


def free_ports(n: int) -> list[int]:
    with ExitStack() as stack:
        socks = [stack.enter_context(socket.socket()) for _ in range(n)]
        for s in socks:
            s.bind(("127.0.0.1", 0))
        return [s.getsockname()[1] for s in socks]


def build_nine(difficulty: int = 0, repo_difficulty: int | None = None, ports: list[int] | None = None) -> Ecosystem:
    """The nine-network fork tree, each network carrying ``tx-<X>1`` after its fork point."""
    ports = ports or [30300 + i for i in range(10)]
    repo = Repository.create(REPO_ID, ports[0], difficulty if repo_difficulty is None else repo_difficulty)
    eco = Ecosystem(repo)
    eco.add_root(create_chain(ID["A"], ports[ID["A"]], difficulty, b"A-genesis"))
    eco.mine(ID["A"], b"tx-A1")
    eco.mine(ID["A"], b"tx-A2")
    for child, parent, at in NINE_FORKS:
        eco.fork(ID[parent], at, ID[child], ports[ID[child]])
        eco.mine(ID[child], f"tx-{child}1".encode())
    return eco


def random_ecosystem(rng: random.Random, max_networks: int = 12, max_blocks: int = 10) -> Ecosystem:
    """Random fork tree at difficulty 0 with payloads drawn from a small pool.

    The small pool guarantees repeated payloads both inside one chain and
    across unrelated branches, on top of those inherited through fork prefixes.
    """
    n = rng.randint(1, max_networks)
    pool = [f"p{i}".encode() for i in range(rng.randint(3, 12))]
    eco = Ecosystem(Repository.create(1000, 1000, 0))
    root = create_chain(0, 0, 0, rng.choice(pool))
    eco.add_root(root)
    for _ in range(rng.randint(0, max_blocks - 1)):
        eco.mine(0, rng.choice(pool))
    for nid in range(1, n):
        parent = rng.choice(eco.member_ids())
        at = rng.randint(1, eco.chain(parent).height)
        eco.fork(parent, at, nid, nid)
        for _ in range(rng.randint(0, max_blocks - at)):
            eco.mine(nid, rng.choice(pool))
    return eco


def payload_pool(eco: Ecosystem) -> set[bytes]:
    return {b.payload for nid in eco.member_ids() for b in eco.chain(nid).blocks}
