"""Proof-of-work chains, hard forks, and a repository chain that indexes the fork tree."""

from .chain import ChainInstance, Validation, append_payload, create_chain, find_in_chain, validate_chain
from .fork import hard_fork
from .hashcore import Block, BlockHeader, canonical_serialize, hash_block, meets_target, mine
from .netharness import Ecosystem, NetworkServer, query, serve
from .persist import load_chain, load_ecosystem, save_chain, save_ecosystem
from .repository import NOT_FOUND, ROOT, ForkRecord, Repository, build_adjacency
from .traverse import AdjacencyList, Found, NotFound, Strategy, exhaustive_scan, search, traversal_order

__all__ = [
    "AdjacencyList",
    "Block",
    "BlockHeader",
    "ChainInstance",
    "Ecosystem",
    "ForkRecord",
    "Found",
    "NOT_FOUND",
    "NetworkServer",
    "NotFound",
    "ROOT",
    "Repository",
    "Strategy",
    "Validation",
    "append_payload",
    "build_adjacency",
    "canonical_serialize",
    "create_chain",
    "exhaustive_scan",
    "find_in_chain",
    "hard_fork",
    "hash_block",
    "load_chain",
    "load_ecosystem",
    "meets_target",
    "mine",
    "query",
    "save_chain",
    "save_ecosystem",
    "search",
    "serve",
    "traversal_order",
    "validate_chain",
]
