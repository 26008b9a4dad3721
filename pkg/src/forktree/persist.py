"""On-disk format: one canonical JSON file per chain plus a manifest.

Chain file::

    {"blocks":[{"hash":..,"index":0,"nonce":..,"payload_hex":..,"previous_hash":..},...],
     "difficulty":8,"fork_block_no":0,"network_id":1,"parent_network_id":null,"port":8545}

Manifest (``manifest.json``)::

    {"networks":[{"difficulty":8,"network_id":0,"path":"repository.json","port":30300},...],
     "repository":"repository.json"}

Files are written in canonical form and must still be canonical when read
back; every hash and link is recomputed on load.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Union

from . import canonical
from .chain import ChainInstance, validate_chain
from .errors import (
    ChainParseError,
    ConsistencyError,
    ForkTreeError,
    HashMismatchError,
    PersistError,
)
from .hashcore import block_from_doc, block_to_doc
from .netharness import Ecosystem
from .repository import Repository

MANIFEST_NAME = "manifest.json"
REPOSITORY_NAME = "repository.json"
FILE_MODE = 0o644

PathLike = Union[str, "os.PathLike[str]"]

_CHAIN_KEYS = ("blocks", "difficulty", "fork_block_no", "network_id", "parent_network_id", "port")
_MANIFEST_KEYS = ("networks", "repository")
_ENTRY_KEYS = ("difficulty", "network_id", "path", "port")


def chain_file_name(network_id: int) -> str:
    return f"net-{network_id}.json"


def chain_to_doc(chain: ChainInstance) -> dict:
    return {
        "network_id": chain.network_id,
        "parent_network_id": chain.parent_network_id,
        "fork_block_no": chain.fork_block_no,
        "port": chain.port,
        "difficulty": chain.difficulty,
        "blocks": [block_to_doc(b) for b in chain.blocks],
    }


def dump_chain(chain: ChainInstance) -> bytes:
    return canonical.dump_bytes(chain_to_doc(chain))


def _int_field(doc: dict, key: str, nullable: bool = False) -> int:
    value = doc[key]
    if nullable and value is None:
        return value
    if isinstance(value, bool) or not isinstance(value, int):
        raise ChainParseError(f"{key} must be an integer")
    return value


def parse_chain(data: bytes, path: object = None) -> ChainInstance:
    """Decode a chain file without checking hashes."""
    where = f" ({path})" if path is not None else ""
    if not data.strip():
        raise ChainParseError(f"empty chain file{where}")
    try:
        doc = canonical.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ChainParseError(f"unparseable chain file{where}: {exc}") from exc
    if not isinstance(doc, dict) or tuple(sorted(doc)) != _CHAIN_KEYS:
        raise ChainParseError(f"chain file{where} must have exactly the keys {list(_CHAIN_KEYS)}")
    if not isinstance(doc["blocks"], list):
        raise ChainParseError(f"blocks must be a list{where}")
    try:
        blocks = tuple(block_from_doc(b) for b in doc["blocks"])
        return ChainInstance(
            network_id=_int_field(doc, "network_id"),
            port=_int_field(doc, "port"),
            difficulty=_int_field(doc, "difficulty"),
            blocks=blocks,
            parent_network_id=_int_field(doc, "parent_network_id", nullable=True),
            fork_block_no=_int_field(doc, "fork_block_no"),
        )
    except (ValueError, TypeError) as exc:
        raise ChainParseError(f"bad chain file{where}: {exc}") from exc


def verify_chain(chain: ChainInstance, path: object = None) -> ChainInstance:
    check = validate_chain(chain)
    if not check:
        raise HashMismatchError(check.index, check.reason, path)
    return chain


def load_chain_bytes(data: bytes, path: object = None) -> ChainInstance:
    return verify_chain(parse_chain(data, path), path)


def read_chain(path: PathLike) -> ChainInstance:
    """Parse a chain file but leave validation to the caller."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PersistError(f"cannot read {path}: {exc}") from exc
    return parse_chain(data, path)


def load_chain(path: PathLike) -> ChainInstance:
    return verify_chain(read_chain(path), path)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.chmod(tmp, FILE_MODE)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_chain(chain: ChainInstance, path: PathLike) -> None:
    _atomic_write(Path(path), dump_chain(chain))


def write_files(directory: PathLike, files: dict[str, bytes]) -> None:
    """Write several files so that either all of them change or none do.

    New contents go to temp files first; if any rename fails the originals
    are put back from backups.
    """
    directory = Path(directory)
    staged: list[tuple[Path, str]] = []
    backups: list[tuple[Path, Path | None]] = []
    try:
        for name, data in files.items():
            target = directory / name
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{name}.", suffix=".tmp")
            os.chmod(tmp, FILE_MODE)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            staged.append((target, tmp))
        for target, tmp in staged:
            backup = None
            if target.exists():
                backup = target.with_name(f".{target.name}.bak")
                os.replace(target, backup)
            backups.append((target, backup))
            os.replace(tmp, target)
    except BaseException:
        for target, backup in reversed(backups):
            if backup is not None:
                os.replace(backup, target)
            elif target.exists():
                target.unlink()
        for _, tmp in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    for _, backup in backups:
        if backup is not None:
            backup.unlink()


def ecosystem_files(eco: Ecosystem) -> dict[str, bytes]:
    repo_chain = eco.repository.chain
    entries = [
        {
            "network_id": repo_chain.network_id,
            "path": REPOSITORY_NAME,
            "port": repo_chain.port,
            "difficulty": repo_chain.difficulty,
        }
    ]
    files = {REPOSITORY_NAME: dump_chain(repo_chain)}
    for rec in eco.repository.get_all_fork_details():
        chain = eco.chain(rec.network_id)
        name = chain_file_name(chain.network_id)
        files[name] = dump_chain(chain)
        entries.append(
            {"network_id": chain.network_id, "path": name, "port": chain.port, "difficulty": chain.difficulty}
        )
    unrecorded = set(eco.member_ids()) - {rec.network_id for rec in eco.repository.get_all_fork_details()}
    if unrecorded:
        raise ConsistencyError(f"networks {sorted(unrecorded)} are registered but have no fork record")
    files[MANIFEST_NAME] = canonical.dump_bytes({"repository": REPOSITORY_NAME, "networks": entries})
    return files


def save_ecosystem(eco: Ecosystem, directory: PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_files(directory, ecosystem_files(eco))


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST_NAME
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PersistError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = canonical.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ChainParseError(f"unparseable manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or tuple(sorted(doc)) != _MANIFEST_KEYS:
        raise ChainParseError(f"manifest must have exactly the keys {list(_MANIFEST_KEYS)}")
    if not isinstance(doc["repository"], str) or not isinstance(doc["networks"], list):
        raise ChainParseError("manifest repository must be a path and networks a list")
    for entry in doc["networks"]:
        if not isinstance(entry, dict) or tuple(sorted(entry)) != _ENTRY_KEYS:
            raise ChainParseError(f"manifest entry must have exactly the keys {list(_ENTRY_KEYS)}")
        if not isinstance(entry["path"], str):
            raise ChainParseError("manifest entry path must be a string")
    return doc


def _resolve_in(directory: Path, name: str) -> Path:
    path = (directory / name).resolve()
    if path.parent != directory.resolve():
        raise ConsistencyError(f"manifest path {name!r} escapes {directory}")
    return path


def read_ecosystem_chains(directory: PathLike) -> tuple[dict, dict[int, ChainInstance], dict[int, str]]:
    """Parse the manifest and every chain file it names, without validating them.

    Returns ``(manifest, chains by network id, file path by network id)``.
    Used by ``verify`` so that damaged files can still be reported.
    """
    directory = Path(directory)
    manifest = _read_manifest(directory)
    chains: dict[int, ChainInstance] = {}
    paths: dict[int, str] = {}
    for entry in manifest["networks"]:
        path = _resolve_in(directory, entry["path"])
        chain = read_chain(path)
        for key, actual in (("network_id", chain.network_id), ("port", chain.port), ("difficulty", chain.difficulty)):
            if entry[key] != actual:
                raise ConsistencyError(f"{entry['path']}: manifest {key} {entry[key]!r} but file says {actual!r}")
        if chain.network_id in chains:
            raise ConsistencyError(f"network {chain.network_id} listed twice in manifest")
        chains[chain.network_id] = chain
        paths[chain.network_id] = entry["path"]
    return manifest, chains, paths


def load_ecosystem(directory: PathLike) -> Ecosystem:
    directory = Path(directory)
    manifest, chains, paths = read_ecosystem_chains(directory)
    for nid, chain in chains.items():
        verify_chain(chain, paths[nid])

    repo_ids = [nid for nid, p in paths.items() if p == manifest["repository"]]
    if len(repo_ids) != 1:
        raise ConsistencyError("manifest must list the repository chain exactly once")
    try:
        repository = Repository(chains.pop(repo_ids[0]))
    except ForkTreeError as exc:
        raise ConsistencyError(f"repository chain rejected: {exc}") from exc

    records = repository.get_all_fork_details()
    if {r.network_id for r in records} != set(chains):
        raise ConsistencyError(
            f"repository records networks {sorted(r.network_id for r in records)} "
            f"but manifest lists {sorted(chains)}"
        )
    eco = Ecosystem(repository)
    for rec in records:
        chain = chains[rec.network_id]
        meta = (chain.network_id, chain.parent_network_id, chain.fork_block_no, chain.port)
        expected = (rec.network_id, rec.parent_network_id, rec.fork_block_no, rec.port_number)
        if meta != expected:
            raise ConsistencyError(
                f"{paths[rec.network_id]}: chain metadata {meta} disagrees with fork record {expected}"
            )
        if not rec.is_root:
            parent = chains[rec.parent_network_id]
            n = rec.fork_block_no
            if chain.height < n or parent.height < n or chain.blocks[:n] != parent.blocks[:n]:
                raise ConsistencyError(
                    f"network {rec.network_id} does not share its first {n} blocks with parent {rec.parent_network_id}"
                )
        try:
            eco.register_network(chain)
        except ForkTreeError as exc:
            raise ConsistencyError(str(exc)) from exc
    return eco
