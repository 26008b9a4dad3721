"""The simulated multi-network ecosystem.

Networks are kept in a registry keyed by network id. Each one can also be
served over a local TCP socket with a line-delimited JSON protocol, one
request line answered by one response line:

    {"type":"HEIGHT"}                  -> {"height":6,"type":"HEIGHT"}
    {"index":0,"type":"GET_BLOCK"}     -> {"block":{...},"type":"BLOCK"}
    {"target":"74782d4231","type":"FIND"} -> {"hash":..,"index":2,"payload":..,"type":"FOUND"}
                                       or {"type":"ABSENT"}
    anything malformed                 -> {"code":"bad-request","message":..,"type":"ERR"}

Servers are read-only; nothing on the wire can change a chain.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Optional, Union

from . import canonical
from .chain import ChainInstance, append_payload, find_in_chain
from .errors import (
    DuplicateRegistrationError,
    ForkTreeError,
    NetworkUnreachableError,
    RegistrationError,
    RemoteError,
    UnknownNetworkError,
)
from .fork import hard_fork
from .hashcore import Block, block_from_doc, block_to_doc, hash_block
from .repository import ROOT, Repository, read_records, build_adjacency
from .traverse import AdjacencyList, ChainHandle, Found, NotFound, SearchResult, Strategy, search

log = logging.getLogger(__name__)

DEFAULT_HOST = "127.0.0.1"
MAX_LINE = 1 << 20

ERR_BAD_REQUEST = "bad-request"
ERR_UNKNOWN_BLOCK = "unknown-block"
ERR_INTERNAL = "internal"


def _err(code: str, message: str) -> dict:
    return {"type": "ERR", "code": code, "message": message}


def _index_arg(request: dict) -> int:
    index = request.get("index")
    if isinstance(index, bool) or not isinstance(index, int):
        raise ValueError("GET_BLOCK needs an integer index")
    return index


def respond(chain: ChainInstance, line: bytes) -> dict:
    """Answer one request line against ``chain``."""
    try:
        request = json.loads(line)
    except (ValueError, UnicodeDecodeError):
        return _err(ERR_BAD_REQUEST, "request is not JSON")
    if not isinstance(request, dict):
        return _err(ERR_BAD_REQUEST, "request must be a JSON object")
    kind = request.get("type")
    try:
        if kind == "HEIGHT":
            return {"type": "HEIGHT", "height": chain.height}
        if kind == "GET_BLOCK":
            index = _index_arg(request)
            if not 0 <= index < chain.height:
                return _err(ERR_UNKNOWN_BLOCK, f"no block {index} (height {chain.height})")
            return {"type": "BLOCK", "block": block_to_doc(chain.blocks[index])}
        if kind == "FIND":
            target = request.get("target")
            if not isinstance(target, str):
                raise ValueError("FIND needs a hex target")
            hit = find_in_chain(chain, bytes.fromhex(target))
            if hit is None:
                return {"type": "ABSENT"}
            index, block = hit
            return {"type": "FOUND", "index": index, "payload": block.payload.hex(), "hash": block.hash.hex()}
    except ValueError as exc:
        return _err(ERR_BAD_REQUEST, str(exc))
    return _err(ERR_BAD_REQUEST, f"unknown request type {kind!r}")


class _Handler(socketserver.StreamRequestHandler):
    def setup(self) -> None:
        super().setup()
        with self.server.conn_lock:
            self.server.connections.add(self.connection)

    def finish(self) -> None:
        with self.server.conn_lock:
            self.server.connections.discard(self.connection)
        super().finish()

    def handle(self) -> None:
        while True:
            line = self.rfile.readline(MAX_LINE + 1)
            if not line:
                return
            if len(line) > MAX_LINE:
                response = _err(ERR_BAD_REQUEST, "request line too long")
            else:
                try:
                    response = respond(self.server.chain_source(), line)
                except Exception as exc:  # keep the server alive for the next client
                    log.exception("request failed")
                    response = _err(ERR_INTERNAL, str(exc))
            try:
                self.wfile.write(canonical.dump_bytes(response) + b"\n")
                self.wfile.flush()
            except OSError:
                return


class _TCPServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    allow_reuse_address = True
    daemon_threads = True
    block_on_close = False

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.conn_lock = threading.Lock()
        self.connections: set[socket.socket] = set()

    def drop_connections(self) -> None:
        with self.conn_lock:
            conns = list(self.connections)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class NetworkServer:
    """Serve one chain on ``host:port`` from a background thread.

    Each connection gets its own handler thread. ``chain`` may be a callable so
    the server always answers from the current version of a network.
    """

    def __init__(
        self,
        chain: Union[ChainInstance, Callable[[], ChainInstance]],
        port: int,
        host: str = DEFAULT_HOST,
    ) -> None:
        source = chain if callable(chain) else (lambda: chain)
        self._server = _TCPServer((host, port), _Handler, bind_and_activate=False)
        self._server.chain_source = source
        self._thread: Optional[threading.Thread] = None
        self.host = host
        self._requested_port = port

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    def start(self) -> "NetworkServer":
        try:
            self._server.server_bind()
            self._server.server_activate()
        except OSError:
            self._server.server_close()
            raise
        self._thread = threading.Thread(target=self._server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self._server.server_close()
        self._server.drop_connections()

    def serve_forever(self) -> None:
        self._server.server_bind()
        self._server.server_activate()
        try:
            self._server.serve_forever()
        finally:
            self._server.server_close()

    def __enter__(self) -> "NetworkServer":
        return self.start()

    def __exit__(self, *exc: object) -> None:
        self.stop()


def serve(chain: ChainInstance, port: int, host: str = DEFAULT_HOST) -> NetworkServer:
    return NetworkServer(chain, port, host).start()


def stop_servers(servers: Iterable[NetworkServer]) -> None:
    """Stop several servers concurrently; each stop waits out one poll interval."""
    threads = [threading.Thread(target=srv.stop) for srv in servers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


def _decode_response(line: bytes, host: str, port: int) -> dict:
    if not line.endswith(b"\n"):
        raise NetworkUnreachableError(None, f"{host}:{port}: connection closed mid-response")
    try:
        response = json.loads(line)
    except ValueError as exc:
        raise RemoteError(ERR_INTERNAL, f"unparseable response from {host}:{port}") from exc
    if not isinstance(response, dict) or "type" not in response:
        raise RemoteError(ERR_INTERNAL, f"response from {host}:{port} lacks a type")
    if response["type"] == "ERR":
        raise RemoteError(str(response.get("code")), str(response.get("message")))
    return response


def query(port: int, request: dict, host: str = DEFAULT_HOST, timeout: float = 5.0) -> dict:
    """One request/response round trip on a fresh connection."""
    try:
        with socket.create_connection((host, port), timeout=timeout) as sock:
            sock.sendall(canonical.dump_bytes(request) + b"\n")
            with sock.makefile("rb") as stream:
                line = stream.readline(MAX_LINE + 1)
    except OSError as exc:
        raise NetworkUnreachableError(None, f"{host}:{port}: {exc}") from exc
    return _decode_response(line, host, port)


class Connection:
    """A reusable client connection; reconnects once if the peer dropped it."""

    def __init__(self, port: int, host: str = DEFAULT_HOST, timeout: float = 5.0) -> None:
        self.port = port
        self.host = host
        self.timeout = timeout
        self._sock: Optional[socket.socket] = None
        self._stream = None

    def _open(self) -> None:
        self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        self._stream = self._sock.makefile("rb")

    def close(self) -> None:
        if self._stream is not None:
            self._stream.close()
        if self._sock is not None:
            self._sock.close()
        self._sock = self._stream = None

    def request(self, request: dict) -> dict:
        data = canonical.dump_bytes(request) + b"\n"
        for attempt in (0, 1):
            fresh = self._sock is None
            try:
                if fresh:
                    self._open()
                self._sock.sendall(data)
                line = self._stream.readline(MAX_LINE + 1)
            except OSError as exc:
                self.close()
                if fresh or attempt:
                    raise NetworkUnreachableError(None, f"{self.host}:{self.port}: {exc}") from exc
                continue
            if not line and not fresh and not attempt:
                self.close()
                continue
            return _decode_response(line, self.host, self.port)
        raise NetworkUnreachableError(None, f"{self.host}:{self.port}: connection lost")

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


class LocalHandle:
    def __init__(self, chain: ChainInstance) -> None:
        self.chain = chain

    @property
    def network_id(self) -> int:
        return self.chain.network_id

    def height(self) -> int:
        return self.chain.height

    def get_block(self, index: int) -> Block:
        if not 0 <= index < self.chain.height:
            raise IndexError(index)
        return self.chain.blocks[index]

    def find(self, target: bytes) -> Optional[tuple[int, bytes, bytes]]:
        hit = find_in_chain(self.chain, target)
        if hit is None:
            return None
        index, block = hit
        return index, block.payload, block.hash


class RemoteHandle:
    """A network reached over the wire protocol."""

    def __init__(self, network_id: int, port: int, host: str = DEFAULT_HOST, timeout: float = 5.0) -> None:
        self.network_id = network_id
        self.port = port
        self.host = host
        self._conn = Connection(port, host, timeout)

    def close(self) -> None:
        self._conn.close()

    def _ask(self, request: dict, expect: tuple[str, ...]) -> dict:
        try:
            response = self._conn.request(request)
        except NetworkUnreachableError as exc:
            raise NetworkUnreachableError(self.network_id, str(exc)) from exc
        if response["type"] not in expect:
            raise RemoteError(ERR_INTERNAL, f"expected {expect}, got {response['type']}")
        return response

    def height(self) -> int:
        return int(self._ask({"type": "HEIGHT"}, ("HEIGHT",))["height"])

    def get_block(self, index: int) -> Block:
        try:
            response = self._ask({"type": "GET_BLOCK", "index": index}, ("BLOCK",))
        except RemoteError as exc:
            if exc.code == ERR_UNKNOWN_BLOCK:
                raise IndexError(index) from exc
            raise
        try:
            block = block_from_doc(response["block"])
        except (KeyError, ValueError) as exc:
            raise RemoteError(ERR_INTERNAL, f"bad block document: {exc}") from exc
        if hash_block(block.header) != block.hash or block.index != index:
            raise RemoteError(ERR_INTERNAL, f"network {self.network_id} sent an inconsistent block {index}")
        return block

    def find(self, target: bytes) -> Optional[tuple[int, bytes, bytes]]:
        response = self._ask({"type": "FIND", "target": target.hex()}, ("FOUND", "ABSENT"))
        if response["type"] == "ABSENT":
            return None
        payload = bytes.fromhex(response["payload"])
        if payload != target:
            raise RemoteError(ERR_INTERNAL, f"network {self.network_id} reported a non-matching block")
        return int(response["index"]), payload, bytes.fromhex(response["hash"])


class Ecosystem:
    """All networks descended from one root, plus the repository that indexes them.

    The repository chain counts as a network: it has its own id and port and can
    be resolved and served like the others. By default handles are in-process;
    :meth:`use_sockets` (or :meth:`served`) routes every lookup over the wire.
    """

    def __init__(self, repository: Repository) -> None:
        self.repository = repository
        self._lock = threading.RLock()
        self._chains: dict[int, ChainInstance] = {}
        self._addresses: Optional[dict[int, tuple[str, int]]] = None

    # registry

    @property
    def repository_id(self) -> int:
        return self.repository.network_id

    def network_ids(self) -> list[int]:
        with self._lock:
            return [self.repository_id, *self._chains]

    def member_ids(self) -> list[int]:
        with self._lock:
            return list(self._chains)

    def __len__(self) -> int:
        with self._lock:
            return 1 + len(self._chains)

    def __contains__(self, network_id: object) -> bool:
        with self._lock:
            return network_id == self.repository_id or network_id in self._chains

    def port_of(self, network_id: int) -> int:
        return self.chain(network_id).port

    def register_network(self, chain: ChainInstance, port: Optional[int] = None) -> "Ecosystem":
        if port is not None and port != chain.port:
            raise RegistrationError(f"port {port} does not match chain port {chain.port}")
        with self._lock:
            if chain.network_id in self:
                raise DuplicateRegistrationError(f"network id {chain.network_id} already registered")
            used = {self.repository.port, *(c.port for c in self._chains.values())}
            if chain.port in used:
                raise RegistrationError(f"port {chain.port} already in use")
            self._chains[chain.network_id] = chain
        return self

    def chain(self, network_id: int) -> ChainInstance:
        """The in-process chain, regardless of routing mode."""
        with self._lock:
            if network_id == self.repository_id:
                return self.repository.chain
            try:
                return self._chains[network_id]
            except KeyError:
                raise UnknownNetworkError(f"network {network_id} is not registered") from None

    def resolve(self, network_id: int) -> ChainHandle:
        with self._lock:
            chain = self.chain(network_id)
            if self._addresses is None:
                return LocalHandle(chain)
            try:
                host, port = self._addresses[network_id]
            except KeyError:
                raise UnknownNetworkError(f"no address for network {network_id}") from None
        return RemoteHandle(network_id, port, host)

    # mutation, replace-under-lock

    def add_root(self, chain: ChainInstance) -> int:
        with self._lock:
            self.register_network(chain)
            try:
                return self.repository.add_fork_detail(chain.network_id, chain.port, ROOT, 0)
            except ForkTreeError:
                del self._chains[chain.network_id]
                raise

    def fork(
        self,
        parent_id: int,
        fork_block_no: int,
        network_id: int,
        port: int,
        difficulty: Optional[int] = None,
    ) -> tuple[ChainInstance, int]:
        """Hard-fork ``parent_id``, register the child and record the event."""
        with self._lock:
            if parent_id == self.repository_id:
                raise UnknownNetworkError("the repository chain cannot be forked")
            child = hard_fork(self.chain(parent_id), fork_block_no, network_id, port, difficulty)
            self.register_network(child)
            try:
                fork_id = self.repository.add_fork_detail(network_id, port, parent_id, fork_block_no)
            except ForkTreeError:
                del self._chains[network_id]
                raise
            return child, fork_id

    def mine(self, network_id: int, payload: bytes) -> Block:
        with self._lock:
            if network_id == self.repository_id:
                raise UnknownNetworkError("repository blocks are written by add_fork_detail only")
            chain = append_payload(self.chain(network_id), payload)
            self._chains[network_id] = chain
            return chain.tip

    def replace_chain(self, chain: ChainInstance) -> None:
        with self._lock:
            old = self.chain(chain.network_id)
            if (old.port, old.parent_network_id, old.fork_block_no) != (
                chain.port,
                chain.parent_network_id,
                chain.fork_block_no,
            ):
                raise RegistrationError(f"replacement for network {chain.network_id} changes its identity")
            self._chains[chain.network_id] = chain

    # queries

    def records(self):
        return read_records(self.resolve(self.repository_id))

    def adjacency(self) -> AdjacencyList:
        """Build the fork tree by reading the repository chain through its handle."""
        return build_adjacency(self.records())

    def search(
        self,
        target: bytes,
        strategy: Strategy = Strategy.DFS,
        start: Optional[int] = None,
        include_repository: bool = False,
    ) -> SearchResult:
        adj = self.adjacency()
        prefix: tuple[int, ...] = ()
        if include_repository:
            prefix = (self.repository_id,)
            hit = self.resolve(self.repository_id).find(target)
            if hit is not None:
                return Found(self.repository_id, hit[0], hit[1], hit[2], prefix)
        result = search(self, adj, adj.root if start is None else start, target, strategy)
        if isinstance(result, NotFound):
            return NotFound(prefix + result.visited)
        return Found(result.network_id, result.block_index, result.payload, result.hash, prefix + result.visited)

    # socket routing

    def start_servers(
        self,
        network_ids: Optional[Iterable[int]] = None,
        host: str = DEFAULT_HOST,
        ephemeral: bool = False,
    ) -> dict[int, NetworkServer]:
        """Serve networks on their recorded ports (or OS-chosen ones if ``ephemeral``)."""
        ids = self.network_ids() if network_ids is None else list(network_ids)
        servers: dict[int, NetworkServer] = {}
        try:
            for nid in ids:
                port = 0 if ephemeral else self.port_of(nid)
                servers[nid] = NetworkServer(lambda nid=nid: self.chain(nid), port, host).start()
        except OSError:
            stop_servers(servers.values())
            raise
        return servers

    def use_sockets(self, addresses: dict[int, tuple[str, int]]) -> None:
        with self._lock:
            self._addresses = dict(addresses)

    def use_local(self) -> None:
        with self._lock:
            self._addresses = None

    @property
    def routed_over_sockets(self) -> bool:
        return self._addresses is not None

    @contextmanager
    def served(self, host: str = DEFAULT_HOST, ephemeral: bool = False) -> Iterator["Ecosystem"]:
        servers = self.start_servers(host=host, ephemeral=ephemeral)
        self.use_sockets({nid: (host, srv.port) for nid, srv in servers.items()})
        try:
            yield self
        finally:
            self.use_local()
            stop_servers(servers.values())
