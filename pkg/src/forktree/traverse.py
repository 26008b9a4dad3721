"""Depth-first and breadth-first search over the fork tree.

Each visited network is asked for the target payload before its forks are
explored; the first hit ends the search.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping, Optional, Protocol, Union

from .errors import MalformedRepositoryError, NetworkUnreachableError, UnknownNetworkError
from .hashcore import Block


class Strategy(str, Enum):
    DFS = "dfs"
    BFS = "bfs"


class ChainHandle(Protocol):
    """Read access to one network, in-process or over a socket."""

    def height(self) -> int: ...

    def get_block(self, index: int) -> Block: ...

    def find(self, target: bytes) -> Optional[tuple[int, bytes, bytes]]: ...


class Resolver(Protocol):
    def resolve(self, network_id: int) -> ChainHandle: ...


@dataclass(frozen=True)
class AdjacencyList:
    """Fork tree: every network mapped to its direct forks in registration order."""

    root: int
    children: Mapping[int, tuple[int, ...]]

    def __post_init__(self) -> None:
        children = {k: tuple(v) for k, v in self.children.items()}
        object.__setattr__(self, "children", children)
        if self.root not in children:
            raise MalformedRepositoryError(f"root {self.root} missing from adjacency list")
        seen_as_child: set[int] = set()
        for parent, kids in children.items():
            for kid in kids:
                if kid not in children:
                    raise MalformedRepositoryError(f"child {kid} of {parent} has no entry")
                if kid == self.root or kid in seen_as_child:
                    raise MalformedRepositoryError(f"network {kid} has more than one parent")
                seen_as_child.add(kid)
        if len(seen_as_child) + 1 != len(children):
            raise MalformedRepositoryError("adjacency list is not a single rooted tree")
        # a graph with n-1 single-parent edges can still hide a cycle detached from the root
        reached = _preorder(children, self.root)
        if len(reached) != len(children):
            raise MalformedRepositoryError("cycle detected in fork graph")

    def __contains__(self, network_id: object) -> bool:
        return network_id in self.children

    def __len__(self) -> int:
        return len(self.children)


def _preorder(children: Mapping[int, tuple[int, ...]], start: int) -> list[int]:
    order = []
    stack = [start]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(reversed(children[node]))
    return order


def iter_order(adj: AdjacencyList, start: int, strategy: Strategy = Strategy.DFS) -> Iterator[int]:
    if start not in adj:
        raise UnknownNetworkError(f"network {start} is not in the fork tree")
    strategy = Strategy(strategy)
    if strategy is Strategy.DFS:
        stack = [start]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(adj.children[node]))
    else:
        queue = deque([start])
        while queue:
            node = queue.popleft()
            yield node
            queue.extend(adj.children[node])


def traversal_order(adj: AdjacencyList, start: int, strategy: Strategy = Strategy.DFS) -> list[int]:
    return list(iter_order(adj, start, strategy))


@dataclass(frozen=True)
class Found:
    network_id: int
    block_index: int
    payload: bytes
    hash: bytes
    visited: tuple[int, ...]

    found = True


@dataclass(frozen=True)
class NotFound:
    visited: tuple[int, ...]

    found = False


SearchResult = Union[Found, NotFound]


def _resolve(ecosystem: Resolver, network_id: int) -> ChainHandle:
    try:
        return ecosystem.resolve(network_id)
    except UnknownNetworkError as exc:
        raise NetworkUnreachableError(network_id, str(exc)) from exc


def search(
    ecosystem: Resolver,
    adj: AdjacencyList,
    start: int,
    target: bytes,
    strategy: Strategy = Strategy.DFS,
) -> SearchResult:
    visited: list[int] = []
    for network_id in iter_order(adj, start, strategy):
        visited.append(network_id)
        handle = _resolve(ecosystem, network_id)
        hit = handle.find(target)
        if hit is not None:
            index, payload, digest = hit
            return Found(network_id, index, payload, digest, tuple(visited))
    return NotFound(tuple(visited))


def exhaustive_scan(ecosystem: Resolver, adj: AdjacencyList, target: bytes) -> list[tuple[int, int]]:
    """Every (network_id, block_index) holding ``target``, in DFS-then-index order.

    Reads blocks one at a time and walks the tree recursively, so it shares
    neither the lookup nor the ordering code with :func:`search`.
    """
    hits: list[tuple[int, int]] = []

    def visit(network_id: int) -> None:
        handle = _resolve(ecosystem, network_id)
        for index in range(handle.height()):
            if handle.get_block(index).payload == target:
                hits.append((network_id, index))
        for child in adj.children[network_id]:
            visit(child)

    visit(adj.root)
    return hits
