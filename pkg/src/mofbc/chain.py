"""Blocks, Merkle trees, removal-tolerant block identifiers and chain snapshots.

A block identifier is ``H(t_id_1 || ... || t_id_k || H(header))`` so it only
depends on transaction ids.  Removing a transaction's content therefore keeps
every block id valid; a tombstone ``(t_id, p_t_id, flags)`` stays behind.

Snapshot layout (all integers big-endian)::

    magic "MOFBC1" | block_size:u16 | n_blocks:u32 | block* | blackboard

    block      = height:u32 | prev_block_id:32 | merkle_root:32 | timestamp:u32
                 | block_id:32 | n_entries:u16 | entry*
    entry      = flags:u8 | (record            if flags & PRESENT)
                          | (t_id:32 p_t_id:32 otherwise)
    blackboard = n_redirects:u32 | (old:32 new:32)* | n_paid:u32 | t_id:32*
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .core import Record, TxRef, read_record
from .encoding import DIGEST_SIZE, ZERO_DIGEST, H, DecodeError, Reader, Writer

log = logging.getLogger(__name__)

SNAPSHOT_MAGIC = b"MOFBC1"
PAPER_BLOCK_SIZE = 10

FLAG_PRESENT = 0x01
FLAG_REDIRECTED = 0x02

HEADER_SIZE = 4 + DIGEST_SIZE + DIGEST_SIZE + 4
TOMBSTONE_SIZE = 1 + 2 * DIGEST_SIZE
BLOCK_OVERHEAD = HEADER_SIZE + DIGEST_SIZE + 2


class ChainError(Exception):
    pass


class UnknownTransaction(ChainError, KeyError):
    pass


# -- Merkle ---------------------------------------------------------------

def build_merkle_root(leaves: list[bytes]) -> bytes:
    """Binary Merkle root over raw leaf digests; odd levels repeat the last node."""
    if not leaves:
        raise ValueError("a Merkle root needs at least one leaf")
    if len(leaves) == 1:
        return H(leaves[0])
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [H(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]


# a proof step is (sibling digest, sibling sits on the left)
MerkleProof = list[tuple[bytes, bool]]


def merkle_membership_proof(leaves: list[bytes], index: int) -> MerkleProof:
    if not 0 <= index < len(leaves):
        raise IndexError(f"leaf index {index} out of range for {len(leaves)} leaves")
    if len(leaves) == 1:
        return []
    proof: MerkleProof = []
    level = list(leaves)
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        sib = index ^ 1
        proof.append((level[sib], sib < index))
        level = [H(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        index //= 2
    return proof


def verify_membership(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    if not proof:
        return H(leaf) == root
    node = leaf
    for sibling, left in proof:
        node = H(sibling + node) if left else H(node + sibling)
    return node == root


def encode_proof(proof: MerkleProof) -> str:
    """Text form ``L:<hex>,R:<hex>,...`` used by the CLI."""
    return ",".join(("L:" if left else "R:") + sib.hex() for sib, left in proof)


def decode_proof(text: str) -> MerkleProof:
    if not text.strip():
        return []
    out: MerkleProof = []
    for part in text.split(","):
        side, _, hexed = part.strip().partition(":")
        if side not in ("L", "R"):
            raise ValueError(f"bad proof step {part!r}")
        sib = bytes.fromhex(hexed)
        if len(sib) != DIGEST_SIZE:
            raise ValueError("proof digests must be 32 bytes")
        out.append((sib, side == "L"))
    return out


# -- blocks ---------------------------------------------------------------

@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_block_id: bytes
    merkle_root: bytes
    timestamp: int

    def encode(self) -> bytes:
        return Writer().u32(self.height).digest(self.prev_block_id).digest(self.merkle_root).u32(
            self.timestamp).getvalue()

    @classmethod
    def read(cls, r: Reader) -> "BlockHeader":
        return cls(r.u32(), r.digest(), r.digest(), r.u32())


@dataclass(slots=True)
class BlockEntry:
    t_id: bytes
    p_t_id: bytes
    content: Record | None
    redirected: bool = False

    @property
    def present(self) -> bool:
        return self.content is not None

    @property
    def size(self) -> int:
        return 1 + self.content.size if self.content is not None else TOMBSTONE_SIZE

    def write(self, w: Writer) -> None:
        flags = (FLAG_PRESENT if self.content is not None else 0) | (FLAG_REDIRECTED if self.redirected else 0)
        w.u8(flags)
        if self.content is not None:
            w.raw(self.content.encoded)
        else:
            w.digest(self.t_id).digest(self.p_t_id)

    @classmethod
    def read(cls, r: Reader) -> "BlockEntry":
        flags = r.u8()
        if flags & ~(FLAG_PRESENT | FLAG_REDIRECTED):
            raise DecodeError(f"unknown entry flags {flags:#x}")
        if flags & FLAG_PRESENT:
            rec = read_record(r)
            return cls(rec.t_id, rec.p_t_id, rec, bool(flags & FLAG_REDIRECTED))
        return cls(r.digest(), r.digest(), None, bool(flags & FLAG_REDIRECTED))


def compute_block_id(t_ids: Iterable[bytes], header: BlockHeader) -> bytes:
    return H(b"".join(t_ids) + H(header.encode()))


@dataclass
class Block:
    header: BlockHeader
    entries: list[BlockEntry]
    block_id: bytes

    @property
    def height(self) -> int:
        return self.header.height

    def t_ids(self) -> list[bytes]:
        return [e.t_id for e in self.entries]

    def recompute_id(self) -> bytes:
        return compute_block_id(self.t_ids(), self.header)

    @property
    def size(self) -> int:
        return BLOCK_OVERHEAD + sum(e.size for e in self.entries)

    def write(self, w: Writer) -> None:
        w.raw(self.header.encode()).digest(self.block_id).u16(len(self.entries))
        for e in self.entries:
            e.write(w)

    @classmethod
    def read(cls, r: Reader) -> "Block":
        header = BlockHeader.read(r)
        block_id = r.digest()
        entries = [BlockEntry.read(r) for _ in range(r.u16())]
        return cls(header, entries, block_id)


def assemble_block(pending: list[Record], prev: Block | None, timestamp: int,
                   block_size: int = PAPER_BLOCK_SIZE) -> Block:
    """Collate exactly ``block_size`` pre-validated records into a block."""
    if len(pending) != block_size:
        raise ValueError(f"a block holds exactly {block_size} transactions, got {len(pending)}")
    t_ids = [rec.t_id for rec in pending]
    header = BlockHeader(
        height=0 if prev is None else prev.height + 1,
        prev_block_id=ZERO_DIGEST if prev is None else prev.block_id,
        merkle_root=build_merkle_root(t_ids),
        timestamp=timestamp,
    )
    entries = [BlockEntry(rec.t_id, rec.p_t_id, rec) for rec in pending]
    return Block(header, entries, compute_block_id(t_ids, header))


# -- blackboard -----------------------------------------------------------

@dataclass
class Blackboard:
    """Shared registry of redirects and reward-paid transactions.

    Only the blackboard manager agent writes here; everyone else reads.
    """

    redirects: dict[bytes, bytes] = field(default_factory=dict)
    reward_paid_tx_ids: set[bytes] = field(default_factory=set)

    def resolve(self, t_id: bytes, max_hops: int | None = None) -> bytes:
        seen = {t_id}
        hops = 0
        while t_id in self.redirects:
            t_id = self.redirects[t_id]
            hops += 1
            if t_id in seen or (max_hops is not None and hops > max_hops):
                raise ChainError("redirect cycle")
            seen.add(t_id)
        return t_id

    def write(self, w: Writer) -> None:
        w.u32(len(self.redirects))
        for old in sorted(self.redirects):
            w.digest(old).digest(self.redirects[old])
        w.u32(len(self.reward_paid_tx_ids))
        for t in sorted(self.reward_paid_tx_ids):
            w.digest(t)

    @classmethod
    def read(cls, r: Reader) -> "Blackboard":
        redirects = {}
        for _ in range(r.u32()):
            old = r.digest()
            redirects[old] = r.digest()
        paid = {r.digest() for _ in range(r.u32())}
        return cls(redirects, paid)


# -- chain ----------------------------------------------------------------

class Chain:
    """Single-writer block store with an id index and ledger successor map."""

    def __init__(self, block_size: int = PAPER_BLOCK_SIZE, blackboard: Blackboard | None = None):
        self.block_size = block_size
        self.blocks: list[Block] = []
        self.blackboard = blackboard if blackboard is not None else Blackboard()
        self._index: dict[bytes, tuple[int, int]] = {}
        self._successors: dict[bytes, list[bytes]] = {}
        self._consumers: dict[bytes, list[bytes]] = {}
        self.size_bytes = 0

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip(self) -> Block | None:
        return self.blocks[-1] if self.blocks else None

    def __contains__(self, t_id: bytes) -> bool:
        return t_id in self._index

    def entry(self, t_id: bytes) -> BlockEntry:
        try:
            h, i = self._index[t_id]
        except KeyError:
            raise UnknownTransaction(t_id.hex()) from None
        return self.blocks[h].entries[i]

    def get(self, t_id: bytes) -> Record | None:
        """Stored content, or None if unknown or removed."""
        loc = self._index.get(t_id)
        if loc is None:
            return None
        return self.blocks[loc[0]].entries[loc[1]].content

    def block_of(self, t_id: bytes) -> Block:
        try:
            return self.blocks[self._index[t_id][0]]
        except KeyError:
            raise UnknownTransaction(t_id.hex()) from None

    def entries(self) -> Iterator[BlockEntry]:
        for b in self.blocks:
            yield from b.entries

    def successors(self, t_id: bytes) -> list[bytes]:
        return list(self._successors.get(t_id, ()))

    def consumers(self, t_id: bytes) -> list[bytes]:
        """Transactions that take an output of ``t_id`` as an input."""
        return list(self._consumers.get(t_id, ()))

    def _index_entry(self, h: int, i: int, e: BlockEntry) -> None:
        self._index.setdefault(e.t_id, (h, i))
        if e.p_t_id != ZERO_DIGEST:
            self._successors.setdefault(e.p_t_id, []).append(e.t_id)
        if e.content is not None:
            refs = getattr(e.content, "inputs", ()) or getattr(e.content, "external_inputs", ())
            for ref in refs:
                self._consumers.setdefault(ref.source_t_id, []).append(e.t_id)

    def ledger_from(self, genesis_t_id: bytes) -> list[bytes]:
        """All t_ids reachable from ``genesis_t_id`` along p_t_id links."""
        out, stack, seen = [], [genesis_t_id], set()
        while stack:
            t = stack.pop()
            if t in seen or t not in self._index:
                continue
            seen.add(t)
            out.append(t)
            stack.extend(reversed(self._successors.get(t, ())))
        return out

    def find_by_prefix(self, prefix: bytes, present_only: bool = True) -> list[bytes]:
        return [t for t in self._index if t.startswith(prefix)
                and (not present_only or self.get(t) is not None)]

    # -- mutations (single writer) --

    def append(self, block: Block) -> None:
        tip = self.tip
        expected_height = 0 if tip is None else tip.height + 1
        expected_prev = ZERO_DIGEST if tip is None else tip.block_id
        if block.header.height != expected_height or block.header.prev_block_id != expected_prev:
            raise ChainError(f"block at height {block.header.height} does not extend the tip")
        if block.recompute_id() != block.block_id:
            raise ChainError("block id does not match its contents")
        h = len(self.blocks)
        seen: set[bytes] = set()
        for e in block.entries:
            if e.t_id in self._index or e.t_id in seen:
                raise ChainError(f"duplicate transaction {e.t_id.hex()}")
            seen.add(e.t_id)
        for i, e in enumerate(block.entries):
            self._index_entry(h, i, e)
        self.blocks.append(block)
        self.size_bytes += block.size

    def mine(self, records: list[Record], timestamp: int) -> Block:
        block = assemble_block(records, self.tip, timestamp, self.block_size)
        self.append(block)
        return block

    def remove_content(self, t_id: bytes) -> int:
        """Drop a transaction's content, keeping its tombstone. Returns bytes freed."""
        e = self.entry(t_id)
        if e.content is None:
            log.info("remove_content: %s already removed", t_id.hex()[:16])
            return 0
        freed = e.size - TOMBSTONE_SIZE
        e.content = None
        self.size_bytes -= freed
        return freed

    def apply_redirection(self, old_t_id: bytes, new_t_id: bytes) -> None:
        e = self.entry(old_t_id)
        if new_t_id not in self._index:
            raise UnknownTransaction(f"redirect target {new_t_id.hex()} not mined")
        if self.blackboard.resolve(new_t_id) == old_t_id:
            raise ChainError("redirect would create a cycle")
        e.redirected = True
        self.blackboard.redirects[old_t_id] = new_t_id

    def resolve(self, t_id: bytes) -> bytes:
        return self.blackboard.resolve(t_id, max_hops=len(self._index))

    def resolve_input(self, ref: TxRef) -> Record | None:
        """The live record an input points at, following redirects."""
        rec = self.get(self.resolve(ref.source_t_id))
        if rec is None:
            return None
        outputs = getattr(rec, "outputs", ())
        return rec if ref.output_index < len(outputs) else None

    # -- verification --

    def verify(self) -> list[str]:
        """Re-check block ids, linkage, Merkle roots and entry structure."""
        problems: list[str] = []
        prev = ZERO_DIGEST
        for h, b in enumerate(self.blocks):
            if b.header.height != h:
                problems.append(f"height {h}: header claims height {b.header.height}")
            if b.header.prev_block_id != prev:
                problems.append(f"height {h}: broken prev_block_id link")
            if b.recompute_id() != b.block_id:
                problems.append(f"height {h}: block_id mismatch")
            if len(b.entries) != self.block_size:
                problems.append(f"height {h}: {len(b.entries)} entries, expected {self.block_size}")
            if b.entries and build_merkle_root(b.t_ids()) != b.header.merkle_root:
                problems.append(f"height {h}: merkle root mismatch")
            for e in b.entries:
                c = e.content
                if c is not None:
                    if c.t_id != e.t_id or c.p_t_id != e.p_t_id:
                        problems.append(f"height {h}: entry header disagrees with content")
                    elif not c.has_valid_t_id():
                        problems.append(f"height {h}: t_id {e.t_id.hex()[:16]} does not hash its content")
                if e.redirected and (c is not None or e.t_id not in self.blackboard.redirects):
                    problems.append(f"height {h}: stray redirection flag on {e.t_id.hex()[:16]}")
            prev = b.block_id
        for old, new in self.blackboard.redirects.items():
            if old not in self._index or new not in self._index:
                problems.append(f"redirect {old.hex()[:16]} -> {new.hex()[:16]} points outside the chain")
        try:
            for old in self.blackboard.redirects:
                self.resolve(old)
        except ChainError:
            problems.append("redirect map has a cycle")
        return problems

    # -- snapshots --

    def encode_snapshot(self) -> bytes:
        w = Writer().raw(SNAPSHOT_MAGIC).u16(self.block_size).u32(len(self.blocks))
        for b in self.blocks:
            b.write(w)
        self.blackboard.write(w)
        return w.getvalue()

    @classmethod
    def decode_snapshot(cls, data: bytes, check: bool = True) -> "Chain":
        """Rebuild a chain from a snapshot.

        With ``check`` the blocks go through ``append`` and a corrupt block
        raises ``SnapshotError`` naming its height.
        """
        r = Reader(data)
        if r.raw(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
            raise DecodeError("not a chain snapshot")
        chain = cls(block_size=r.u16())
        n = r.u32()
        for h in range(n):
            try:
                block = Block.read(r)
            except DecodeError as exc:
                raise SnapshotError(h, f"undecodable block: {exc}") from exc
            if check:
                try:
                    chain.append(block)
                except ChainError as exc:
                    raise SnapshotError(h, str(exc)) from exc
            else:
                chain._append_unchecked(block)
        chain.blackboard = Blackboard.read(r)
        r.expect_end()
        return chain

    def _append_unchecked(self, block: Block) -> None:
        h = len(self.blocks)
        for i, e in enumerate(block.entries):
            self._index_entry(h, i, e)
        self.blocks.append(block)
        self.size_bytes += block.size


class SnapshotError(ChainError):
    def __init__(self, height: int, reason: str):
        super().__init__(f"height {height}: {reason}")
        self.height = height
