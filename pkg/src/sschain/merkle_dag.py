"""Content-addressed Merkle DAG of versioned account states.

A ``DagNode`` carries an optional byte payload and a list of named links
to other nodes. Its canonical serialization is the RLP list

    [data, [[name, cid, size], ...]]

with links sorted by name and sizes in minimal big-endian form, and its
``Cid`` is the SHA-256 digest of those bytes, printed as ``ss1-<hex>``.
Identical content always produces the same Cid, so storing the same
payload twice costs one entry.

Account states serialize to a small fixed-shape JSON document whose
field hashes make every field individually checkable. Directory nodes
group state files; version nodes wrap a root and link back to the prior
version, giving a rollback trail (``account_history``). A ``NameRegistry``
maps a publisher's node id to its latest root, latest-sequence-wins.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Optional

from .encoding import (
    DIGEST_SIZE,
    CodecError,
    Digest,
    RlpDecodeError,
    RlpItem,
    hash256,
    int_from_bytes,
    int_to_bytes,
    rlp_decode,
    rlp_encode,
)
from .errors import CorruptError, NotFoundError, SSChainError
from .store import KvStore


class DagError(SSChainError):
    """Base for DAG-specific failures."""


class DanglingLinkError(DagError):
    """A node links to a Cid that is not in the store."""


class DuplicateNameError(DagError):
    """Two links (or input files) share a name."""


class UnknownCidError(DagError):
    """A Cid passed by reference does not resolve in the store."""


class CidFormatError(DagError, ValueError):
    """Text does not parse as an ``ss1-<hex>`` Cid."""


CID_PREFIX = "ss1-"


@dataclass(frozen=True, slots=True)
class Cid:
    """Content identifier: the digest of a node's canonical bytes."""

    digest: Digest

    def __str__(self) -> str:
        return CID_PREFIX + self.digest.hex()

    @classmethod
    def parse(cls, text: str) -> "Cid":
        if not text.startswith(CID_PREFIX):
            raise CidFormatError(f"cid must start with {CID_PREFIX!r}: {text!r}")
        try:
            digest = bytes.fromhex(text[len(CID_PREFIX) :])
        except ValueError:
            raise CidFormatError(f"cid hex part is malformed: {text!r}") from None
        if len(digest) != DIGEST_SIZE:
            raise CidFormatError(f"cid digest must be {DIGEST_SIZE} bytes: {text!r}")
        return cls(digest)


@dataclass(frozen=True, slots=True)
class Link:
    name: str
    cid: Cid
    size: int


@dataclass(frozen=True, slots=True)
class DagNode:
    data: bytes = b""
    links: tuple[Link, ...] = ()

    def link(self, name: str) -> Optional[Link]:
        for link in self.links:
            if link.name == name:
                return link
        return None


@dataclass(frozen=True, slots=True)
class AccountState:
    """One account's balance, transaction count, and contract code.

    ``seq_number`` counts transactions the account has sent; ``balance``
    keeps the one-fractional-digit decimal convention (``"13.0"``) so the
    hashed text is reproducible. ``code`` is empty for external accounts.
    """

    seq_number: str
    balance: str
    code: bytes = b""

    @property
    def seq_number_hash(self) -> str:
        return hash256(self.seq_number.encode()).hex()

    @property
    def balance_hash(self) -> str:
        return hash256(self.balance.encode()).hex()

    @property
    def code_hash(self) -> str:
        """Hex digest of the code, or the empty string for no code."""
        return hash256(self.code).hex() if self.code else ""

    @property
    def data_hash(self) -> str:
        """Digest over the concatenated hex texts of the three field hashes."""
        combined = self.seq_number_hash + self.balance_hash + self.code_hash
        return hash256(combined.encode()).hex()

    def to_json_bytes(self) -> bytes:
        doc = {
            "result": {
                "seqNumber": self.seq_number,
                "balance": self.balance,
                "code": self.code.hex(),
                "seqNumberHash": self.seq_number_hash,
                "balanceHash": self.balance_hash,
                "codeHash": self.code_hash,
                "dataHash": self.data_hash,
            }
        }
        return (json.dumps(doc, indent=2) + "\n").encode()

    @classmethod
    def from_json_bytes(cls, raw: bytes) -> "AccountState":
        """Parse and re-verify every embedded field hash.

        Raises:
            CorruptError: malformed document or any hash mismatch.
        """
        try:
            result = json.loads(raw.decode())["result"]
            state = cls(
                seq_number=result["seqNumber"],
                balance=result["balance"],
                code=bytes.fromhex(result["code"]),
            )
            stored = (
                result["seqNumberHash"],
                result["balanceHash"],
                result["codeHash"],
                result["dataHash"],
            )
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CorruptError(f"malformed account state document: {exc}") from exc
        computed = (
            state.seq_number_hash,
            state.balance_hash,
            state.code_hash,
            state.data_hash,
        )
        if stored != computed:
            raise CorruptError("account state field hash mismatch")
        return state


def dag_put(store: KvStore, node: DagNode) -> Cid:
    """Store ``node`` canonically; children must already be present.

    Raises:
        DuplicateNameError: two links share a name.
        DagError: a link size is negative.
        DanglingLinkError: a linked Cid is missing from the store.
    """
    names = [link.name for link in node.links]
    if len(set(names)) != len(names):
        raise DuplicateNameError(f"duplicate link names in {sorted(names)}")
    for link in node.links:
        if link.size < 0:
            raise DagError(f"link {link.name!r} has negative size {link.size}")
        if not store.has(link.cid.digest):
            raise DanglingLinkError(f"link {link.name!r} -> {link.cid} not in store")
    return Cid(store.put(_encode_node(node)))


def dag_get(store: KvStore, cid: Cid) -> DagNode:
    """Load a node and re-verify its digest before decoding.

    Raises:
        NotFoundError: cid absent.
        CorruptError: stored bytes do not hash to the cid or do not
            decode as a canonical node.
    """
    raw = store.get(cid.digest)
    if hash256(raw) != cid.digest:
        raise CorruptError(f"content of {cid} does not match its digest")
    return _decode_node(raw)


def dag_build_directory(store: KvStore, files: list[tuple[str, bytes]]) -> Cid:
    """Store each payload as a leaf, then one directory node linking them all.

    Links carry the file name and payload size; the directory Cid depends
    only on the name/content set, not on input order.

    Raises:
        DuplicateNameError: repeated file name.
    """
    names = [name for name, _ in files]
    if len(set(names)) != len(names):
        raise DuplicateNameError(f"duplicate file names in {sorted(names)}")
    links = []
    for name, payload in files:
        leaf_cid = dag_put(store, DagNode(data=payload))
        links.append(Link(name, leaf_cid, len(payload)))
    return dag_put(store, DagNode(links=tuple(sorted(links, key=lambda l: l.name))))


def account_update(
    store: KvStore, dir_cid: Cid, name: str, new_state: AccountState
) -> Cid:
    """Replace one named entry of a directory; return the new directory Cid.

    Only the leaf and the directory node are rewritten; sibling links are
    reused byte-for-byte. An update that leaves the content unchanged
    returns ``dir_cid`` itself.

    Raises:
        NotFoundError: ``name`` is not linked from the directory.
    """
    directory = dag_get(store, dir_cid)
    old = directory.link(name)
    if old is None:
        raise NotFoundError(f"no entry named {name!r} under {dir_cid}")
    payload = new_state.to_json_bytes()
    leaf_cid = dag_put(store, DagNode(data=payload))
    if leaf_cid == old.cid:
        return dir_cid
    links = tuple(
        Link(name, leaf_cid, len(payload)) if link.name == name else link
        for link in directory.links
    )
    return dag_put(store, DagNode(data=directory.data, links=links))


ROOT_LINK = "root"
PREV_LINK = "prev"


def version_put(store: KvStore, root: Cid, prev: Optional[Cid] = None) -> Cid:
    """Wrap ``root`` in a version node, optionally chained to ``prev``."""
    root_size = len(store.get(root.digest))
    links = [Link(ROOT_LINK, root, root_size)]
    if prev is not None:
        links.append(Link(PREV_LINK, prev, len(store.get(prev.digest))))
    return dag_put(store, DagNode(links=tuple(links)))


def version_root(store: KvStore, version: Cid) -> Cid:
    """The content root a version node wraps.

    Raises:
        CorruptError: node has no root link.
    """
    link = dag_get(store, version).link(ROOT_LINK)
    if link is None:
        raise CorruptError(f"{version} is not a version node (no root link)")
    return link.cid


def account_history(store: KvStore, version_head: Cid) -> list[Cid]:
    """All version Cids reachable from ``version_head``, newest first.

    Adopting any returned Cid as current is a rollback; nothing is
    deleted by moving the head.

    Raises:
        NotFoundError: head or any prev link does not resolve.
    """
    history = []
    cursor: Optional[Cid] = version_head
    while cursor is not None:
        node = dag_get(store, cursor)
        history.append(cursor)
        prev = node.link(PREV_LINK)
        cursor = prev.cid if prev else None
    return history


@dataclass(frozen=True, slots=True)
class NameRecord:
    node_id: Digest
    target: Cid
    sequence: int


@dataclass
class NameRegistry:
    """Mutable node-id -> latest published Cid map, single writer per id."""

    store: KvStore
    _records: dict[Digest, NameRecord] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def records(self) -> list[NameRecord]:
        return list(self._records.values())


def name_publish(registry: NameRegistry, node_id: Digest, target: Cid) -> NameRecord:
    """Bind ``node_id`` to ``target`` with the next sequence number.

    Raises:
        UnknownCidError: target not present in the registry's store.
    """
    if not registry.store.has(target.digest):
        raise UnknownCidError(f"cannot publish unstored {target}")
    with registry._lock:
        prior = registry._records.get(node_id)
        record = NameRecord(node_id, target, (prior.sequence if prior else 0) + 1)
        registry._records[node_id] = record
    return record


def name_resolve(registry: NameRegistry, node_id: Digest) -> Cid:
    """Latest Cid published by ``node_id``.

    Raises:
        NotFoundError: nothing published under this id.
    """
    record = registry._records.get(node_id)
    if record is None:
        raise NotFoundError(f"no name published by {node_id.hex()}")
    return record.target


def _encode_node(node: DagNode) -> bytes:
    triples: list[RlpItem] = [
        [link.name.encode(), link.cid.digest, int_to_bytes(link.size)]
        for link in sorted(node.links, key=lambda l: l.name)
    ]
    return rlp_encode([node.data, triples])


def _decode_node(raw: bytes) -> DagNode:
    try:
        struct = rlp_decode(raw)
    except RlpDecodeError as exc:
        raise CorruptError(f"stored node is not valid RLP: {exc}") from exc
    if not (isinstance(struct, list) and len(struct) == 2):
        raise CorruptError("dag node must be a two-item RLP list")
    data, triples = struct
    if not isinstance(data, bytes) or not isinstance(triples, list):
        raise CorruptError("dag node fields have wrong shapes")
    links = []
    for triple in triples:
        if not (isinstance(triple, list) and len(triple) == 3):
            raise CorruptError("dag link must be a [name, cid, size] triple")
        name, digest, size = triple
        if not (isinstance(name, bytes) and isinstance(digest, bytes)):
            raise CorruptError("dag link fields have wrong shapes")
        if len(digest) != DIGEST_SIZE or not isinstance(size, bytes):
            raise CorruptError("dag link cid or size is malformed")
        try:
            links.append(Link(name.decode(), Cid(digest), int_from_bytes(size)))
        except (UnicodeDecodeError, CodecError) as exc:
            raise CorruptError(f"dag link name or size is malformed: {exc}") from exc
    names = [link.name for link in links]
    if names != sorted(names) or len(set(names)) != len(names):
        raise CorruptError("dag links are not uniquely named in sorted order")
    return DagNode(data=data, links=tuple(links))
