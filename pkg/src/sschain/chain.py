"""Blocks over the sharded account state.

A block header carries the committed account-trie root after its body
ran, plus a transaction-trie root over the body itself; the header
digest chains blocks together. Balances are decimal strings with one
fractional digit, held internally as integer tenths so arithmetic is
exact and the hashed text never wobbles.

Applying a block debits each sender, credits each receiver (creating it
at zero on first contact), bumps the sender's transaction count, and
writes both accounts through the shard table. A transaction that fails
its checks is skipped whole and reported on ``last_rejected``; nothing
of it lands in the state. Every committed root stays readable forever,
so ``rollback`` is nothing more than moving the head pointer, and
``validate_block`` is a replay of the body against the parent root.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .encoding import (
    DIGEST_SIZE,
    Digest,
    RlpItem,
    hash256,
    int_from_bytes,
    int_to_bytes,
    rlp_decode,
    rlp_encode,
)
from .errors import CorruptError, NotFoundError, SSChainError
from .merkle_dag import AccountState, Cid, dag_get, version_root
from .mpt import Trie
from .shard_dht import NodeIdentity, ShardTable
from .store import MemoryKvStore

ADDRESS_SIZE = 20
ZERO_DIGEST = bytes(DIGEST_SIZE)

REASON_UNKNOWN_SENDER = "unknown-sender"
REASON_BAD_SEQ = "bad-seq"
REASON_INSUFFICIENT = "insufficient-balance"


class ChainError(SSChainError):
    """Base for block and chain failures."""


class AmountError(ChainError, ValueError):
    """Text does not follow the one-fractional-digit decimal convention."""


class BadHeightError(ChainError):
    """Rollback target outside [0, head]."""


class UnknownParentError(ChainError):
    """A block's parent hash matches no stored header."""


_AMOUNT_RE = re.compile(r"^(\d+)(?:\.(\d))?$")


def tenths_from_text(text: str) -> int:
    """Parse ``"13.0"`` or ``"13"`` into integer tenths.

    Raises:
        AmountError: negative, empty, or more than one fractional digit.
    """
    match = _AMOUNT_RE.match(text)
    if match is None:
        raise AmountError(f"bad decimal amount {text!r}")
    whole, frac = match.groups()
    return int(whole) * 10 + int(frac or 0)


def text_from_tenths(value: int) -> str:
    """Render integer tenths with exactly one fractional digit."""
    if value < 0:
        raise AmountError(f"negative balance {value}")
    return f"{value // 10}.{value % 10}"


@dataclass(frozen=True, slots=True)
class Transaction:
    """One transfer: ``amount`` moves sender -> receiver at sender seq."""

    sender: bytes
    receiver: bytes
    amount: str
    seq: int

    def __post_init__(self) -> None:
        if len(self.sender) != ADDRESS_SIZE or len(self.receiver) != ADDRESS_SIZE:
            raise ChainError(f"addresses are {ADDRESS_SIZE} bytes")
        if self.sender == self.receiver:
            raise ChainError("self-transfers are not allowed")
        if self.seq < 0:
            raise ChainError(f"negative seq {self.seq}")
        tenths_from_text(self.amount)

    def to_rlp_item(self) -> RlpItem:
        return [self.sender, self.receiver, self.amount.encode(), int_to_bytes(self.seq)]

    @classmethod
    def from_rlp_item(cls, item: RlpItem) -> "Transaction":
        if not (isinstance(item, list) and len(item) == 4):
            raise CorruptError("transaction must be a four-item list")
        sender, receiver, amount, seq = item
        if not all(isinstance(f, bytes) for f in item):
            raise CorruptError("transaction fields must be byte strings")
        try:
            amount_text = amount.decode()
        except UnicodeDecodeError as exc:
            raise CorruptError("transaction amount is not valid text") from exc
        return cls(sender, receiver, amount_text, int_from_bytes(seq))


@dataclass(frozen=True, slots=True)
class BlockHeader:
    parent_hash: Digest
    number: int
    timestamp: int
    state_root: Digest
    tx_root: Digest

    def digest(self) -> Digest:
        return hash256(rlp_encode(self.to_rlp_item()))

    def to_rlp_item(self) -> RlpItem:
        return [
            self.parent_hash,
            int_to_bytes(self.number),
            int_to_bytes(self.timestamp),
            self.state_root,
            self.tx_root,
        ]

    @classmethod
    def from_rlp_item(cls, item: RlpItem) -> "BlockHeader":
        if not (isinstance(item, list) and len(item) == 5):
            raise CorruptError("header must be a five-item list")
        parent, number, timestamp, state_root, tx_root = item
        if not all(isinstance(f, bytes) for f in item):
            raise CorruptError("header fields must be byte strings")
        if len(parent) != DIGEST_SIZE or len(state_root) != DIGEST_SIZE:
            raise CorruptError("header digests have wrong length")
        if len(tx_root) != DIGEST_SIZE:
            raise CorruptError("header digests have wrong length")
        return cls(
            parent, int_from_bytes(number), int_from_bytes(timestamp), state_root, tx_root
        )


@dataclass(frozen=True, slots=True)
class Block:
    header: BlockHeader
    txs: tuple[Transaction, ...]

    def to_bytes(self) -> bytes:
        return rlp_encode(
            [self.header.to_rlp_item(), [tx.to_rlp_item() for tx in self.txs]]
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Block":
        struct = rlp_decode(raw)
        if not (isinstance(struct, list) and len(struct) == 2):
            raise CorruptError("block must be a [header, body] list")
        header_item, body = struct
        if not isinstance(body, list):
            raise CorruptError("block body must be a list")
        return cls(
            BlockHeader.from_rlp_item(header_item),
            tuple(Transaction.from_rlp_item(item) for item in body),
        )


def tx_root(txs: Iterable[Transaction]) -> Digest:
    """Trie root over index -> transaction, both RLP-encoded."""
    trie = Trie(MemoryKvStore())
    for index, tx in enumerate(txs):
        trie = trie.insert(rlp_encode(int_to_bytes(index)), rlp_encode(tx.to_rlp_item()))
    return trie.commit()


@dataclass(frozen=True, slots=True)
class Rejection:
    tx: Transaction
    reason: str


def default_producer(num_shards: int) -> NodeIdentity:
    """Deterministic fully-capable identity used to drive state writes."""
    return NodeIdentity.derive(
        hash256(b"block-producer"), num_shards, book=True, authority=True
    )


class Chain:
    """Append-only block list with a movable head.

    The chain adopts the table's current committed root as its genesis
    state, so accounts funded before construction are the genesis state.
    After ``rollback`` the head trie is reopened at the target root;
    applying a block then starts a fresh branch from there (the replaced
    blocks stay in their stores and remain readable by root).
    """

    def __init__(self, table: ShardTable, producer: Optional[NodeIdentity] = None):
        self.table = table
        self.producer = producer or default_producer(table.num_shards)
        genesis = Block(
            BlockHeader(ZERO_DIGEST, 0, 0, table.state_root, tx_root(())), ()
        )
        self.blocks: list[Block] = [genesis]
        self.head_height = 0
        self.last_rejected: tuple[Rejection, ...] = ()
        self.last_credits_out: tuple[tuple[bytes, int], ...] = ()
        self._trie = Trie(table.trie_store, table.state_root)

    @property
    def head(self) -> Block:
        return self.blocks[self.head_height]

    @property
    def genesis_root(self) -> Digest:
        return self.blocks[0].header.state_root

    def apply_block(
        self,
        txs: Iterable[Transaction],
        credits: Iterable[tuple[bytes, int]] = (),
        is_local: Optional[Callable[[bytes], bool]] = None,
    ) -> Block:
        """Run transactions, commit the state, and append one block.

        Invalid transactions are skipped whole and listed on
        ``last_rejected``; valid ones debit the sender, bump its seq, and
        credit the receiver. A receiver for which ``is_local`` is false is
        not touched here; the owed (address, tenths) pair is queued on
        ``last_credits_out`` for whoever owns it. ``credits`` are owed
        amounts from elsewhere, folded into this block after the body.

        Timestamps are a logical clock (parent's plus one), so the whole
        header is a function of the parent and the body and validation
        can re-derive every field.
        """
        head = self.head
        if self.head_height < len(self.blocks) - 1:
            del self.blocks[self.head_height + 1 :]
        trie = self._trie
        pending: dict[bytes, AccountState] = {}
        accepted: list[Transaction] = []
        rejected: list[Rejection] = []
        credits_out: list[tuple[bytes, int]] = []

        def read(address: bytes) -> Optional[AccountState]:
            if address in pending:
                return pending[address]
            return self._state_from_trie(trie, address)

        def write(address: bytes, state: AccountState) -> None:
            nonlocal trie
            prev = self._version_in_trie(trie, address)
            trie, _, _ = self.table.write_account(
                self.producer, address, state, trie=trie, prev_cid=prev
            )
            pending[address] = state

        for tx in txs:
            sender = read(tx.sender)
            if sender is None:
                rejected.append(Rejection(tx, REASON_UNKNOWN_SENDER))
                continue
            if tx.seq != int(sender.seq_number):
                rejected.append(Rejection(tx, REASON_BAD_SEQ))
                continue
            amount = tenths_from_text(tx.amount)
            balance = tenths_from_text(sender.balance)
            if balance < amount:
                rejected.append(Rejection(tx, REASON_INSUFFICIENT))
                continue
            write(
                tx.sender,
                AccountState(
                    str(int(sender.seq_number) + 1),
                    text_from_tenths(balance - amount),
                    sender.code,
                ),
            )
            if is_local is None or is_local(tx.receiver):
                receiver = read(tx.receiver) or AccountState("0", "0.0")
                write(
                    tx.receiver,
                    AccountState(
                        receiver.seq_number,
                        text_from_tenths(tenths_from_text(receiver.balance) + amount),
                        receiver.code,
                    ),
                )
            else:
                credits_out.append((tx.receiver, amount))
            accepted.append(tx)

        for address, amount in credits:
            state = read(address) or AccountState("0", "0.0")
            write(
                address,
                AccountState(
                    state.seq_number,
                    text_from_tenths(tenths_from_text(state.balance) + amount),
                    state.code,
                ),
            )

        state_root = trie.commit()
        self._trie = trie
        header = BlockHeader(
            head.header.digest(),
            head.header.number + 1,
            head.header.timestamp + 1,
            state_root,
            tx_root(accepted),
        )
        block = Block(header, tuple(accepted))
        self.blocks.append(block)
        self.head_height += 1
        self.last_rejected = tuple(rejected)
        self.last_credits_out = tuple(credits_out)
        return block

    def query_account(
        self, address: bytes, at_root: Optional[Digest] = None
    ) -> AccountState:
        """Account state at the head root, or at any committed root.

        Raises:
            RootNotFoundError: ``at_root`` never committed here.
            NotFoundError: account absent at that root.
        """
        root = self.head.header.state_root if at_root is None else at_root
        trie = self._trie if root == self._trie.commit() else Trie(
            self.table.trie_store, root
        )
        state = self._state_from_trie(trie, address)
        if state is None:
            raise NotFoundError(f"account {address.hex()} not at root {root.hex()}")
        return state

    def rollback(self, to_height: int) -> "Chain":
        """Move the head; nothing is deleted, later blocks stay adoptable.

        Raises:
            BadHeightError: target outside [0, head].
        """
        if not 0 <= to_height <= self.head_height:
            raise BadHeightError(
                f"height {to_height} outside [0, {self.head_height}]"
            )
        self.head_height = to_height
        self._trie = Trie(self.table.trie_store, self.head.header.state_root)
        return self

    def validate_block(self, block: Block) -> bool:
        """Re-derive the header from the parent and body; true iff equal.

        Checks height and timestamp against the parent, recomputes the
        transaction root from the body, and replays the body against the
        parent state root. Replays never move the shard lookup pointers,
        so validating old or foreign blocks leaves live reads untouched.

        Raises:
            UnknownParentError: parent hash matches no block held here.
        """
        parent = next(
            (
                b
                for b in self.blocks
                if b.header.digest() == block.header.parent_hash
            ),
            None,
        )
        if parent is None:
            raise UnknownParentError(
                f"no parent with digest {block.header.parent_hash.hex()}"
            )
        if block.header.number != parent.header.number + 1:
            return False
        if block.header.timestamp != parent.header.timestamp + 1:
            return False
        if tx_root(block.txs) != block.header.tx_root:
            return False
        trie = Trie(self.table.trie_store, parent.header.state_root)
        pending: dict[bytes, AccountState] = {}

        def read(address: bytes) -> Optional[AccountState]:
            if address in pending:
                return pending[address]
            return self._state_from_trie(trie, address)

        def write(address: bytes, state: AccountState) -> None:
            nonlocal trie
            prev = self._version_in_trie(trie, address)
            trie, _, _ = self.table.write_account(
                self.producer,
                address,
                state,
                trie=trie,
                prev_cid=prev,
                update_pointer=False,
            )
            pending[address] = state

        for tx in block.txs:
            sender = read(tx.sender)
            if sender is None or tx.seq != int(sender.seq_number):
                continue
            amount = tenths_from_text(tx.amount)
            balance = tenths_from_text(sender.balance)
            if balance < amount:
                continue
            write(
                tx.sender,
                AccountState(
                    str(int(sender.seq_number) + 1),
                    text_from_tenths(balance - amount),
                    sender.code,
                ),
            )
            receiver = read(tx.receiver) or AccountState("0", "0.0")
            write(
                tx.receiver,
                AccountState(
                    receiver.seq_number,
                    text_from_tenths(tenths_from_text(receiver.balance) + amount),
                    receiver.code,
                ),
            )
        return trie.commit() == block.header.state_root

    def export(self, directory: str | Path) -> None:
        """Write every block as ``<height>.blk`` plus a HEAD pointer file."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for height, block in enumerate(self.blocks):
            (out / f"{height}.blk").write_bytes(block.to_bytes())
        (out / "HEAD").write_text(
            f"{self.head_height} {self.head.header.state_root.hex()}\n"
        )

    @classmethod
    def load(
        cls,
        directory: str | Path,
        table: ShardTable,
        producer: Optional[NodeIdentity] = None,
    ) -> "Chain":
        """Rebuild a chain exported by :meth:`export`.

        Raises:
            NotFoundError: no HEAD file.
            CorruptError: gap in heights or broken parent links.
        """
        src = Path(directory)
        head_file = src / "HEAD"
        if not head_file.exists():
            raise NotFoundError(f"no chain at {src}")
        head_height = int(head_file.read_text().split()[0])
        blocks: list[Block] = []
        while (src / f"{len(blocks)}.blk").exists():
            blocks.append(Block.from_bytes((src / f"{len(blocks)}.blk").read_bytes()))
        if not blocks or head_height >= len(blocks):
            raise CorruptError(f"chain at {src} is missing blocks up to its HEAD")
        for prev, block in zip(blocks, blocks[1:]):
            if block.header.parent_hash != prev.header.digest():
                raise CorruptError(f"broken parent link at height {block.header.number}")
        chain = cls.__new__(cls)
        chain.table = table
        chain.producer = producer or default_producer(table.num_shards)
        chain.blocks = blocks
        chain.head_height = head_height
        chain.last_rejected = ()
        chain.last_credits_out = ()
        chain._trie = Trie(table.trie_store, blocks[head_height].header.state_root)
        return chain

    def _state_from_trie(self, trie: Trie, address: bytes) -> Optional[AccountState]:
        try:
            version_digest = trie.get(address)
        except NotFoundError:
            return None
        store = self.table.shard_for(address).store
        leaf = dag_get(store, version_root(store, Cid(version_digest)))
        return AccountState.from_json_bytes(leaf.data)

    def _version_in_trie(self, trie: Trie, address: bytes) -> Optional[Cid]:
        try:
            return Cid(trie.get(address))
        except NotFoundError:
            return None
