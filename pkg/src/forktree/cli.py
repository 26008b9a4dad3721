"""Command-line driver for a forktree ecosystem directory."""

from __future__ import annotations

import argparse
import fcntl
import os
import sys
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Sequence

from . import persist
from .chain import create_chain, validate_chain
from .errors import ForkTreeError, NetworkUnreachableError, PersistError, RemoteError
from .netharness import DEFAULT_HOST, Ecosystem, query, stop_servers
from .repository import DEFAULT_REPOSITORY_DIFFICULTY, NOT_FOUND, ForkRecord, Repository, build_adjacency
from .traverse import Found, Strategy, traversal_order

LOCK_NAME = ".lock"

EXIT_OK = 0
EXIT_NOT_FOUND = 1
EXIT_ERROR = 2


class CLIError(Exception):
    pass


@contextmanager
def _locked(directory: Path) -> Iterator[None]:
    fd = os.open(directory / LOCK_NAME, os.O_RDWR | os.O_CREAT, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise CLIError(f"{directory} is in use by another forktree command") from None
        yield
    finally:
        os.close(fd)


def _existing_dir(path: str) -> Path:
    directory = Path(path)
    if not (directory / persist.MANIFEST_NAME).is_file():
        raise CLIError(f"{directory} is not a forktree directory (no {persist.MANIFEST_NAME})")
    return directory


def _out(line: str) -> None:
    print(line, flush=True)


def _save(eco: Ecosystem, directory: Path) -> None:
    files = persist.ecosystem_files(eco)
    changed = {
        name: data
        for name, data in files.items()
        if not (directory / name).is_file() or (directory / name).read_bytes() != data
    }
    persist.write_files(directory, changed)


def cmd_init(args: argparse.Namespace) -> int:
    directory = Path(args.dir)
    if (directory / persist.MANIFEST_NAME).exists():
        raise CLIError(f"{directory} already holds an ecosystem")
    if args.repo_network_id == args.network_id:
        raise CLIError("root and repository need different network ids (see --repo-network-id)")
    if args.repo_port == args.port:
        raise CLIError("root and repository need different ports (see --repo-port)")
    directory.mkdir(parents=True, exist_ok=True)
    with _locked(directory):
        if (directory / persist.MANIFEST_NAME).exists():
            raise CLIError(f"{directory} already holds an ecosystem")
        repo = Repository.create(args.repo_network_id, args.repo_port, args.repo_difficulty)
        eco = Ecosystem(repo)
        root = create_chain(args.network_id, args.port, args.difficulty, args.genesis.encode())
        fork_id = eco.add_root(root)
        _save(eco, directory)
    _out(f"fork_id={fork_id} network={root.network_id} hash={root.tip.hash_hex}")
    return EXIT_OK


def cmd_mine(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        eco = persist.load_ecosystem(directory)
        block = eco.mine(args.network, args.payload.encode())
        _save(eco, directory)
    _out(f"height={block.index + 1} hash={block.hash_hex}")
    return EXIT_OK


def cmd_fork(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        eco = persist.load_ecosystem(directory)
        _, fork_id = eco.fork(args.parent, args.at, args.network_id, args.port, args.difficulty)
        _save(eco, directory)
    _out(f"fork_id={fork_id}")
    return EXIT_OK


def _route_over_sockets(eco: Ecosystem, host: str) -> list:
    """Use networks already listening on their ports; serve the rest in-process."""
    addresses = {}
    missing = []
    for nid in eco.network_ids():
        port = eco.port_of(nid)
        try:
            query(port, {"type": "HEIGHT"}, host, timeout=0.5)
        except (NetworkUnreachableError, RemoteError):
            missing.append(nid)
        else:
            addresses[nid] = (host, port)
    servers = eco.start_servers(missing, host=host)
    addresses.update({nid: (host, srv.port) for nid, srv in servers.items()})
    eco.use_sockets(addresses)
    return list(servers.values())


def cmd_search(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        eco = persist.load_ecosystem(directory)
    servers = _route_over_sockets(eco, args.host) if args.net else []
    try:
        result = eco.search(args.value.encode(), Strategy(args.strategy), include_repository=args.include_repository)
    finally:
        stop_servers(servers)
    if isinstance(result, Found):
        _out(f"FOUND network={result.network_id} block={result.block_index} hash={result.hash.hex()}")
        return EXIT_OK
    _out("NOT FOUND after visiting: " + ", ".join(str(n) for n in result.visited))
    return EXIT_NOT_FOUND


def render_ascii(eco: Ecosystem) -> list[str]:
    records = eco.repository.get_all_fork_details()
    adj = build_adjacency(records)
    by_network = {r.network_id: r for r in records}
    depth = {adj.root: 0}
    lines = []
    for nid in traversal_order(adj, adj.root, Strategy.DFS):
        for child in adj.children[nid]:
            depth[child] = depth[nid] + 1
        rec = by_network[nid]
        lines.append(f"{'  ' * depth[nid]}net {nid} fork@{rec.fork_block_no} height={eco.chain(nid).height}")
    return lines


def render_dot(records: Sequence[ForkRecord]) -> list[str]:
    lines = ["digraph forktree {"]
    for rec in records:
        lines.append(f'  n{rec.network_id} [label="net {rec.network_id} (fork@{rec.fork_block_no})"];')
    for rec in records:
        if not rec.is_root:
            lines.append(f"  n{rec.parent_network_id} -> n{rec.network_id};")
    lines.append("}")
    return lines


def cmd_tree(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        eco = persist.load_ecosystem(directory)
    if args.format == "dot":
        lines = render_dot(eco.repository.get_all_fork_details())
    else:
        lines = render_ascii(eco)
    for line in lines:
        _out(line)
    return EXIT_OK


def _record_line(rec: ForkRecord) -> str:
    return rec.to_payload().decode("ascii")


def cmd_repo(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        eco = persist.load_ecosystem(directory)
    repo = eco.repository
    if args.network is not None:
        fork_id = repo.find_fork_id(args.network)
        if fork_id == NOT_FOUND:
            _out(str(NOT_FOUND))
            return EXIT_NOT_FOUND
        records = [repo.get_fork_data(fork_id)]
    elif args.fork_id is not None:
        records = [repo.get_fork_data(args.fork_id)]
    elif args.children is not None:
        records = [repo.get_fork_data(k) for k in repo.get_children(args.children)]
    else:
        records = repo.get_all_fork_details()
    for rec in records:
        _out(_record_line(rec))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        try:
            _, chains, _ = persist.read_ecosystem_chains(directory)
        except PersistError as exc:
            _out(f"INVALID {exc}")
            return EXIT_NOT_FOUND
        ok = True
        for nid, chain in chains.items():
            check = validate_chain(chain)
            if check:
                _out(f"OK network={nid} height={chain.height}")
            else:
                ok = False
                _out(f"INVALID network={nid} block={check.index} reason={check.reason}")
        if ok:
            try:
                persist.load_ecosystem(directory)
            except ForkTreeError as exc:
                ok = False
                _out(f"INCONSISTENT {exc}")
    return EXIT_OK if ok else EXIT_NOT_FOUND


def cmd_serve(args: argparse.Namespace) -> int:
    directory = _existing_dir(args.dir)
    with _locked(directory):
        eco = persist.load_ecosystem(directory)
    ids = eco.network_ids() if args.network is None else [eco.chain(args.network).network_id]
    servers = eco.start_servers(ids, host=args.host)
    for nid, srv in servers.items():
        _out(f"serving network={nid} port={srv.port}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        stop_servers(servers.values())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forktree", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a root chain and its repository")
    p.add_argument("--dir", required=True)
    p.add_argument("--network-id", type=int, required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--difficulty", type=int, default=8)
    p.add_argument("--genesis", required=True, help="genesis payload (UTF-8)")
    p.add_argument("--repo-network-id", type=int, default=0)
    p.add_argument("--repo-port", type=int, default=30300)
    p.add_argument("--repo-difficulty", type=int, default=DEFAULT_REPOSITORY_DIFFICULTY)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("mine", help="append one mined block to a network")
    p.add_argument("--dir", required=True)
    p.add_argument("--network", type=int, required=True)
    p.add_argument("--payload", required=True)
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("fork", help="hard-fork a network and record the event")
    p.add_argument("--dir", required=True)
    p.add_argument("--parent", type=int, required=True)
    p.add_argument("--at", type=int, required=True, help="number of shared blocks")
    p.add_argument("--network-id", type=int, required=True)
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--difficulty", type=int, default=None)
    p.set_defaults(func=cmd_fork)

    p = sub.add_parser("search", help="find a payload anywhere in the ecosystem")
    p.add_argument("--dir", required=True)
    p.add_argument("--value", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="dfs")
    p.add_argument("--net", action="store_true", help="route every query through the socket protocol")
    p.add_argument("--include-repository", action="store_true", help="also search the repository chain first")
    p.add_argument("--host", default=DEFAULT_HOST)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("tree", help="print the fork tree")
    p.add_argument("--dir", required=True)
    p.add_argument("--format", choices=["ascii", "dot"], default="ascii")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("repo", help="query fork records")
    p.add_argument("--dir", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--fork-id", type=int)
    group.add_argument("--network", type=int)
    group.add_argument("--children", type=int, metavar="FORK_ID")
    p.set_defaults(func=cmd_repo)

    p = sub.add_parser("verify", help="validate every chain and the repository")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="serve networks over the socket protocol until interrupted")
    p.add_argument("--dir", required=True)
    p.add_argument("--network", type=int, default=None)
    p.add_argument("--host", default=DEFAULT_HOST)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, ForkTreeError, ValueError, OSError) as exc:
        print(f"forktree: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
