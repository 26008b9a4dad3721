import json
import socket
import threading

import pytest

from forktree.chain import append_payload, create_chain, find_in_chain
from forktree.errors import (
    DuplicateRegistrationError,
    NetworkUnreachableError,
    RegistrationError,
    RemoteError,
    UnknownNetworkError,
)
from forktree.hashcore import block_from_doc, hash_block
from forktree.netharness import (
    Ecosystem,
    LocalHandle,
    NetworkServer,
    RemoteHandle,
    query,
    respond,
    serve,
)
from forktree.persist import dump_chain
from forktree.repository import Repository
from forktree.traverse import Strategy

from helpers import NINE_DFS, ID, build_nine, free_ports, ids


@pytest.fixture
def six():
    chain = create_chain(7, 0, 4, b"genesis")
    for p in (b"tx-1", b"tx-B1", b"tx-3", b"tx-4", b"tx-5"):
        chain = append_payload(chain, p)
    return chain


@pytest.fixture
def served_six(six):
    with NetworkServer(six, 0) as srv:
        yield srv


def raw_exchange(port, *lines):
    with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
        stream = sock.makefile("rb")
        out = []
        for line in lines:
            sock.sendall(line)
            out.append(stream.readline())
        return out


def test_height(served_six):
    assert query(served_six.port, {"type": "HEIGHT"}) == {"type": "HEIGHT", "height": 6}


def test_get_block_self_consistent(served_six, six):
    response = query(served_six.port, {"type": "GET_BLOCK", "index": 0})
    assert response["type"] == "BLOCK"
    block = block_from_doc(response["block"])
    assert hash_block(block.header) == block.hash == six.blocks[0].hash


def test_find_matches_in_process(served_six, six):
    response = query(served_six.port, {"type": "FIND", "target": b"tx-B1".hex()})
    index, block = find_in_chain(six, b"tx-B1")
    assert response == {"type": "FOUND", "index": index, "payload": b"tx-B1".hex(), "hash": block.hash.hex()}
    assert query(served_six.port, {"type": "FIND", "target": "00"}) == {"type": "ABSENT"}


@pytest.mark.parametrize(
    "line,code",
    [
        (b"not json\n", "bad-request"),
        (b"[1,2]\n", "bad-request"),
        (b'{"type":"NOPE"}\n', "bad-request"),
        (b'{"type":"GET_BLOCK"}\n', "bad-request"),
        (b'{"index":"0","type":"GET_BLOCK"}\n', "bad-request"),
        (b'{"target":"zz","type":"FIND"}\n', "bad-request"),
        (b'{"index":6,"type":"GET_BLOCK"}\n', "unknown-block"),
        (b'{"index":-1,"type":"GET_BLOCK"}\n', "unknown-block"),
    ],
)
def test_error_codes(served_six, line, code):
    (reply,) = raw_exchange(served_six.port, line)
    doc = json.loads(reply)
    assert doc["type"] == "ERR" and doc["code"] == code
    assert reply.endswith(b"\n")


def test_responses_are_canonical_lines(served_six):
    replies = raw_exchange(served_six.port, b'{"type": "HEIGHT"}\n', b'{"index":1,"type":"GET_BLOCK"}\n')
    for reply in replies:
        text = reply.decode().rstrip("\n")
        assert text == json.dumps(json.loads(text), sort_keys=True, separators=(",", ":"))


def test_query_raises_remote_error(served_six):
    with pytest.raises(RemoteError) as info:
        query(served_six.port, {"type": "GET_BLOCK", "index": 99})
    assert info.value.code == "unknown-block"


def test_connection_refused():
    (port,) = free_ports(1)
    with pytest.raises(NetworkUnreachableError):
        query(port, {"type": "HEIGHT"})
    with pytest.raises(NetworkUnreachableError) as info:
        RemoteHandle(42, port).height()
    assert info.value.network_id == 42


def test_read_only_protocol(served_six, six):
    before = dump_chain(six)
    raw_exchange(
        served_six.port,
        b'{"type":"HEIGHT"}\n',
        b'{"index":3,"type":"GET_BLOCK"}\n',
        b'{"target":"00","type":"FIND"}\n',
        b'{"type":"APPEND","payload":"00"}\n',
        b"garbage\n",
    )
    assert query(served_six.port, {"type": "HEIGHT"})["height"] == 6
    assert dump_chain(six) == before


def test_respond_directly(six):
    assert respond(six, b'{"type":"HEIGHT"}') == {"type": "HEIGHT", "height": 6}


def test_remote_handle_matches_local(served_six, six):
    remote = RemoteHandle(7, served_six.port)
    local = LocalHandle(six)
    assert remote.height() == local.height()
    for i in range(six.height):
        assert remote.get_block(i) == local.get_block(i)
    for target in (b"tx-B1", b"genesis", b"nope"):
        assert remote.find(target) == local.find(target)
    with pytest.raises(IndexError):
        remote.get_block(6)
    with pytest.raises(IndexError):
        local.get_block(6)
    remote.close()


def test_remote_handle_reconnects_after_restart(six):
    srv = serve(six, 0)
    port = srv.port
    handle = RemoteHandle(7, port)
    assert handle.height() == 6
    srv.stop()
    srv = NetworkServer(append_payload(six, b"x"), port).start()
    try:
        assert handle.height() == 7
    finally:
        srv.stop()


def test_concurrent_clients(served_six):
    errors = []

    def hammer():
        try:
            handle = RemoteHandle(7, served_six.port)
            for _ in range(30):
                assert handle.height() == 6
        except Exception as exc:  # pragma: no cover - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=hammer) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert errors == []


# registry


def make_eco():
    return Ecosystem(Repository.create(0, 30300, 0))


def test_register_seven_networks():
    eco = make_eco()
    eco.add_root(create_chain(1, 30301, 0, b"root"))
    for nid in range(2, 7):
        eco.fork(1, 1, nid, 30300 + nid)
    assert len(eco) == 7
    assert sorted(eco.network_ids()) == list(range(7))


def test_register_and_resolve():
    eco = make_eco()
    chain = create_chain(1, 30301, 0, b"root")
    eco.register_network(chain, 30301)
    handle = eco.resolve(1)
    assert isinstance(handle, LocalHandle) and handle.chain is chain
    assert eco.resolve(0).chain is eco.repository.chain


def test_duplicate_id_and_port():
    eco = make_eco()
    eco.register_network(create_chain(1, 30301, 0, b"root"))
    with pytest.raises(DuplicateRegistrationError):
        eco.register_network(create_chain(1, 30399, 0, b"other"))
    with pytest.raises(DuplicateRegistrationError):
        eco.register_network(create_chain(0, 30399, 0, b"clashes with repository"))
    with pytest.raises(RegistrationError):
        eco.register_network(create_chain(2, 30301, 0, b"same port"))
    with pytest.raises(RegistrationError):
        eco.register_network(create_chain(3, 30300, 0, b"repository port"))
    with pytest.raises(RegistrationError):
        eco.register_network(create_chain(4, 30304, 0, b"x"), port=1)


def test_resolve_unknown():
    with pytest.raises(UnknownNetworkError):
        make_eco().resolve(5)


def test_repository_not_minable_or_forkable():
    eco = build_nine()
    with pytest.raises(UnknownNetworkError):
        eco.mine(0, b"x")
    with pytest.raises(UnknownNetworkError):
        eco.fork(0, 1, 50, 50)


def test_failed_fork_rolls_back_registration():
    eco = build_nine()
    with pytest.raises(RegistrationError):
        eco.fork(ID["A"], 1, 50, 30301)  # port of A
    assert 50 not in eco
    assert eco.repository.find_fork_id(50) == 2**256 - 1


def test_mine_replaces_chain():
    eco = build_nine()
    before = eco.chain(ID["C"])
    block = eco.mine(ID["C"], b"new")
    assert eco.chain(ID["C"]).tip == block
    assert before.height + 1 == eco.chain(ID["C"]).height


# mode transparency


def test_socket_height_equals_local():
    eco = build_nine(difficulty=2)
    local = {nid: eco.resolve(nid).height() for nid in eco.network_ids()}
    with eco.served(ephemeral=True):
        assert eco.routed_over_sockets
        assert isinstance(eco.resolve(ID["A"]), RemoteHandle)
        remote = {nid: eco.resolve(nid).height() for nid in eco.network_ids()}
    assert remote == local
    assert not eco.routed_over_sockets


def test_served_on_recorded_ports():
    ports = free_ports(10)
    eco = build_nine(ports=ports)
    with eco.served():
        assert query(ports[ID["E"]], {"type": "HEIGHT"})["height"] == eco.chain(ID["E"]).height
        assert query(ports[0], {"type": "HEIGHT"})["height"] == 10
        result = eco.search(b"tx-I1")
    assert result.network_id == ID["I"]
    assert result.visited == tuple(ids(NINE_DFS))


def test_adjacency_read_over_wire():
    eco = build_nine()
    local = eco.adjacency()
    with eco.served(ephemeral=True):
        assert eco.records() == eco.repository.get_all_fork_details()
        assert eco.adjacency() == local


def test_search_sees_mining_while_served():
    eco = build_nine()
    with eco.served(ephemeral=True):
        assert not eco.search(b"late").found
        eco.mine(ID["F"], b"late")
        assert eco.search(b"late").network_id == ID["F"]


def test_include_repository():
    eco = build_nine()
    record = eco.repository.chain.blocks[1].payload
    assert not eco.search(record).found
    hit = eco.search(record, include_repository=True)
    assert (hit.network_id, hit.block_index, hit.visited) == (0, 1, (0,))
    miss = eco.search(b"missing", Strategy.BFS, include_repository=True)
    assert miss.visited[0] == 0 and len(miss.visited) == 10


def test_server_down_mid_search():
    eco = build_nine()
    servers = eco.start_servers(ephemeral=True)
    addresses = {nid: ("127.0.0.1", s.port) for nid, s in servers.items()}
    servers[ID["G"]].stop()
    eco.use_sockets(addresses)
    try:
        with pytest.raises(NetworkUnreachableError) as info:
            eco.search(b"missing")
        assert info.value.network_id == ID["G"]
    finally:
        eco.use_local()
        for nid, s in servers.items():
            if nid != ID["G"]:
                s.stop()
