"""Ledger records, their canonical binary encoding, identifiers and page accounting.

Every record shares one header layout::

    kind:u8 | t_id:32 | p_t_id:32 | pk_hash:32 | signature:var16 | body

``t_id`` is the hash of the encoding with the ``t_id`` field left out (so it
covers the signature).  The signature covers the encoding with both ``t_id``
and ``signature`` left out.  All integers are big-endian; variable fields are
length-prefixed.  The body layout per kind is given by ``_write_body``.
"""
from __future__ import annotations

import copy
import enum
import math
from dataclasses import dataclass, fields
from functools import cached_property
from typing import ClassVar

from .encoding import DIGEST_SIZE, ZERO_DIGEST, H, DecodeError, Reader, Writer
from .gv import SIGNATURE_SIZE, GvProof, KeyPair

PAPER_PAGE_SIZE = 1024


class MOM(enum.IntEnum):
    """Memory optimization mode chosen when a transaction is created."""

    DO_NOT_STORE = 0
    TEMPORARY = 1
    PERMANENT = 2
    SUMMARIZABLE = 3


class Kind(enum.IntEnum):
    TRANSACTION = 1
    REMOVE = 2
    LEDGER_REMOVE = 3
    SUMMARY = 4
    AGED = 5


@dataclass(frozen=True)
class TxRef:
    """Reference to output ``output_index`` of transaction ``source_t_id``."""

    source_t_id: bytes
    output_index: int

    def write(self, w: Writer) -> None:
        w.digest(self.source_t_id).u32(self.output_index)

    @classmethod
    def read(cls, r: Reader) -> "TxRef":
        return cls(r.digest(), r.u32())


@dataclass(frozen=True)
class OutputRecord:
    data: bytes

    @property
    def size(self) -> int:
        return len(self.data)


def _write_refs(w: Writer, refs) -> None:
    w.u16(len(refs))
    for ref in refs:
        ref.write(w)


def _read_refs(r: Reader) -> tuple[TxRef, ...]:
    return tuple(TxRef.read(r) for _ in range(r.u16()))


def _write_outputs(w: Writer, outputs) -> None:
    w.u16(len(outputs))
    for out in outputs:
        w.var32(out.data)


def _read_outputs(r: Reader) -> tuple[OutputRecord, ...]:
    return tuple(OutputRecord(r.var32()) for _ in range(r.u16()))


def _write_ttl(w: Writer, ttl: int | None) -> None:
    if ttl is None:
        w.u8(0)
    else:
        w.u8(1).u32(ttl)


def _read_ttl(r: Reader) -> int | None:
    flag = r.u8()
    if flag not in (0, 1):
        raise DecodeError(f"bad mom_setup flag {flag}")
    return r.u32() if flag else None


def _check_mom(mom: MOM, mom_setup: int | None) -> None:
    if mom == MOM.TEMPORARY:
        if mom_setup is None or mom_setup < 1:
            raise ValueError("temporary transactions need a TTL of at least one week")
    elif mom_setup is not None:
        raise ValueError(f"mom_setup is only meaningful for temporary transactions, not {mom.name}")


class Record:
    """Behaviour shared by every ledger record (mixed into frozen dataclasses)."""

    KIND: ClassVar[Kind]

    t_id: bytes
    p_t_id: bytes
    pk_hash: bytes
    signature: bytes
    timestamp: int

    def _write_body(self, w: Writer) -> None:  # pragma: no cover - abstract
        raise NotImplementedError

    @classmethod
    def _read_body(cls, r: Reader) -> dict:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def mom(self) -> MOM:
        return MOM.PERMANENT

    @cached_property
    def _body(self) -> bytes:
        w = Writer()
        self._write_body(w)
        return w.getvalue()

    @cached_property
    def signing_bytes(self) -> bytes:
        return bytes([self.KIND]) + self.p_t_id + self.pk_hash + self._body

    @cached_property
    def id_preimage(self) -> bytes:
        w = Writer().u8(self.KIND).digest(self.p_t_id).digest(self.pk_hash).var16(self.signature)
        return w.getvalue() + self._body

    @cached_property
    def encoded(self) -> bytes:
        w = Writer().u8(self.KIND).digest(self.t_id).digest(self.p_t_id).digest(self.pk_hash)
        w.var16(self.signature)
        return w.getvalue() + self._body

    @property
    def size(self) -> int:
        return len(self.encoded)

    def computed_t_id(self) -> bytes:
        return H(self.id_preimage)

    def has_valid_t_id(self) -> bool:
        return self.t_id == self.computed_t_id()

    def _check_header(self) -> None:
        for name in ("t_id", "p_t_id", "pk_hash"):
            if len(getattr(self, name)) != DIGEST_SIZE:
                raise ValueError(f"{name} must be {DIGEST_SIZE} bytes")
        if self.timestamp < 0:
            raise ValueError("timestamp must be a non-negative week index")


_HEADER_CACHES = ("signing_bytes", "id_preimage", "encoded")


def _with_header(record: Record, **header) -> Record:
    """Copy of an already validated record with header fields swapped.

    Header fields are not part of the body, so the cached body survives.
    """
    out = copy.copy(record)
    for k in _HEADER_CACHES:
        out.__dict__.pop(k, None)
    for k, v in header.items():
        object.__setattr__(out, k, v)
    return out


def seal(record: Record, keys: KeyPair) -> Record:
    """Return ``record`` signed by ``keys`` with its ``t_id`` filled in."""
    unsigned = _with_header(record, pk_hash=keys.pk_hash, signature=b"", t_id=ZERO_DIGEST)
    sig = keys.sign(unsigned.signing_bytes)
    w = Writer().u8(unsigned.KIND).digest(unsigned.p_t_id).digest(unsigned.pk_hash).var16(sig)
    preimage = w.getvalue() + unsigned._body
    sealed = _with_header(unsigned, signature=sig, t_id=H(preimage))
    sealed.__dict__["id_preimage"] = preimage
    return sealed


@dataclass(frozen=True, kw_only=True)
class Transaction(Record):
    """A user transaction."""

    KIND: ClassVar[Kind] = Kind.TRANSACTION

    t_id: bytes = ZERO_DIGEST
    p_t_id: bytes = ZERO_DIGEST
    pk_hash: bytes = ZERO_DIGEST
    signature: bytes = b""
    inputs: tuple[TxRef, ...] = ()
    outputs: tuple[OutputRecord, ...] = ()
    gv: bytes = b""
    mom: MOM = MOM.PERMANENT
    mom_setup: int | None = None
    pay_by_reward: bool = False
    payload: bytes = b""
    timestamp: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "mom", MOM(self.mom))
        self._check_header()
        _check_mom(self.mom, self.mom_setup)

    @property
    def is_genesis(self) -> bool:
        return self.p_t_id == ZERO_DIGEST

    def _write_body(self, w: Writer) -> None:
        _write_refs(w, self.inputs)
        _write_outputs(w, self.outputs)
        w.var16(self.gv)
        w.u8(self.mom)
        _write_ttl(w, self.mom_setup)
        w.u8(1 if self.pay_by_reward else 0)
        w.var32(self.payload)
        w.u32(self.timestamp)

    @classmethod
    def _read_body(cls, r: Reader) -> dict:
        inputs = _read_refs(r)
        outputs = _read_outputs(r)
        gv = r.var16()
        mom = MOM(r.u8())
        ttl = _read_ttl(r)
        pbr = r.u8()
        if pbr not in (0, 1):
            raise DecodeError(f"bad pay_by_reward flag {pbr}")
        return dict(inputs=inputs, outputs=outputs, gv=gv, mom=mom, mom_setup=ttl,
                    pay_by_reward=bool(pbr), payload=r.var32(), timestamp=r.u32())


@dataclass(frozen=True, kw_only=True)
class RemoveTransaction(Record):
    """Asks the network to drop ``target_t_id`` at the next cleaning pass.

    Signed with the GV private key whose public half is in ``proof``.
    """

    KIND: ClassVar[Kind] = Kind.REMOVE

    t_id: bytes = ZERO_DIGEST
    p_t_id: bytes = ZERO_DIGEST
    pk_hash: bytes = ZERO_DIGEST
    signature: bytes = b""
    timestamp: int = 0
    target_t_id: bytes
    proof: GvProof

    def __post_init__(self) -> None:
        self._check_header()

    @property
    def inputs(self) -> tuple[TxRef, ...]:
        return (TxRef(self.target_t_id, 0),)

    def _write_body(self, w: Writer) -> None:
        w.u32(self.timestamp).digest(self.target_t_id)
        self.proof.write(w)

    @classmethod
    def _read_body(cls, r: Reader) -> dict:
        return dict(timestamp=r.u32(), target_t_id=r.digest(), proof=GvProof.read(r))


@dataclass(frozen=True, kw_only=True)
class LedgerRemoveTransaction(Record):
    """Removes a whole ledger; the proof covers only its genesis transaction."""

    KIND: ClassVar[Kind] = Kind.LEDGER_REMOVE

    t_id: bytes = ZERO_DIGEST
    p_t_id: bytes = ZERO_DIGEST
    pk_hash: bytes = ZERO_DIGEST
    signature: bytes = b""
    timestamp: int = 0
    genesis_t_id: bytes
    proof: GvProof

    def __post_init__(self) -> None:
        self._check_header()

    def _write_body(self, w: Writer) -> None:
        w.u32(self.timestamp).digest(self.genesis_t_id)
        self.proof.write(w)

    @classmethod
    def _read_body(cls, r: Reader) -> dict:
        return dict(timestamp=r.u32(), genesis_t_id=r.digest(), proof=GvProof.read(r))


@dataclass(frozen=True, kw_only=True)
class SummaryTransaction(Record):
    """Consolidated replacement for a group of transactions.

    ``summary_times`` and ``trans_order`` are aligned: position ``i`` holds the
    timestamp and the ``d``-byte t_id prefix of the ``i``-th member in
    chronological order.  ``gv_proofs`` is empty for network-built summaries.
    """

    KIND: ClassVar[Kind] = Kind.SUMMARY

    t_id: bytes = ZERO_DIGEST
    p_t_id: bytes = ZERO_DIGEST
    pk_hash: bytes = ZERO_DIGEST
    signature: bytes = b""
    timestamp: int = 0
    merkle_root: bytes
    external_inputs: tuple[TxRef, ...] = ()
    external_outputs: tuple[OutputRecord, ...] = ()
    summary_times: tuple[int, ...]
    trans_order: tuple[bytes, ...]
    gv_proofs: tuple[GvProof, ...] = ()

    def __post_init__(self) -> None:
        for name in ("external_inputs", "external_outputs", "summary_times", "trans_order", "gv_proofs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self._check_header()
        k = len(self.trans_order)
        if k == 0 or len(self.summary_times) != k:
            raise ValueError("summary_times and trans_order must be non-empty and equally long")
        d = len(self.trans_order[0])
        if not 1 <= d <= DIGEST_SIZE - 1 or any(len(p) != d for p in self.trans_order):
            raise ValueError("trans_order prefixes must share one length d in [1, 31]")
        if len(set(self.trans_order)) != k:
            raise ValueError("trans_order prefixes must be pairwise distinct")
        if self.gv_proofs and len(self.gv_proofs) != k:
            raise ValueError("need one GV proof per summarized transaction")

    @property
    def k(self) -> int:
        return len(self.trans_order)

    @property
    def d(self) -> int:
        return len(self.trans_order[0])

    @property
    def is_network_summary(self) -> bool:
        return not self.gv_proofs

    def _write_body(self, w: Writer) -> None:
        w.u32(self.timestamp).digest(self.merkle_root)
        _write_refs(w, self.external_inputs)
        _write_outputs(w, self.external_outputs)
        w.u16(self.k)
        for t in self.summary_times:
            w.u32(t)
        w.u8(self.d)
        w.raw(b"".join(self.trans_order))
        w.u16(len(self.gv_proofs))
        for proof in self.gv_proofs:
            proof.write(w)

    @classmethod
    def _read_body(cls, r: Reader) -> dict:
        timestamp = r.u32()
        root = r.digest()
        ext_in = _read_refs(r)
        ext_out = _read_outputs(r)
        k = r.u16()
        times = tuple(r.u32() for _ in range(k))
        d = r.u8()
        order = tuple(r.raw(d) for _ in range(k))
        proofs = tuple(GvProof.read(r) for _ in range(r.u16()))
        return dict(timestamp=timestamp, merkle_root=root, external_inputs=ext_in,
                    external_outputs=ext_out, summary_times=times, trans_order=order,
                    gv_proofs=proofs)


@dataclass(frozen=True, kw_only=True)
class AgedTransaction(Record):
    """Compressed successor of ``original_t_id``.

    Carries the original's outputs so dependents keep resolving after
    redirection, and its own ``gv`` so it can be aged or removed again.
    """

    KIND: ClassVar[Kind] = Kind.AGED

    t_id: bytes = ZERO_DIGEST
    p_t_id: bytes = ZERO_DIGEST
    pk_hash: bytes = ZERO_DIGEST
    signature: bytes = b""
    timestamp: int = 0
    original_t_id: bytes
    outputs: tuple[OutputRecord, ...] = ()
    aged_payload: bytes
    gv: bytes = b""
    mom: MOM = MOM.PERMANENT
    mom_setup: int | None = None
    proof: GvProof

    def __post_init__(self) -> None:
        object.__setattr__(self, "outputs", tuple(self.outputs))
        object.__setattr__(self, "mom", MOM(self.mom))
        self._check_header()
        _check_mom(self.mom, self.mom_setup)
        if self.mom in (MOM.DO_NOT_STORE, MOM.SUMMARIZABLE):
            raise ValueError("aged transactions are stored as temporary or permanent")

    @property
    def payload(self) -> bytes:
        return self.aged_payload

    def _write_body(self, w: Writer) -> None:
        w.u32(self.timestamp).digest(self.original_t_id)
        _write_outputs(w, self.outputs)
        w.var32(self.aged_payload)
        w.var16(self.gv)
        w.u8(self.mom)
        _write_ttl(w, self.mom_setup)
        self.proof.write(w)

    @classmethod
    def _read_body(cls, r: Reader) -> dict:
        timestamp = r.u32()
        original = r.digest()
        outputs = _read_outputs(r)
        aged = r.var32()
        gv = r.var16()
        mom = MOM(r.u8())
        ttl = _read_ttl(r)
        return dict(timestamp=timestamp, original_t_id=original, outputs=outputs,
                    aged_payload=aged, gv=gv, mom=mom, mom_setup=ttl, proof=GvProof.read(r))


RECORD_TYPES: dict[int, type[Record]] = {
    cls.KIND: cls
    for cls in (Transaction, RemoveTransaction, LedgerRemoveTransaction, SummaryTransaction, AgedTransaction)
}


def canonical_serialize(record: Record) -> bytes:
    return record.encoded


def read_record(r: Reader) -> Record:
    kind = r.u8()
    try:
        cls = RECORD_TYPES[kind]
    except KeyError:
        raise DecodeError(f"unknown record kind {kind}") from None
    t_id = r.digest()
    p_t_id = r.digest()
    pk_hash = r.digest()
    signature = r.var16()
    try:
        return cls(t_id=t_id, p_t_id=p_t_id, pk_hash=pk_hash, signature=signature, **cls._read_body(r))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(str(exc)) from exc


def decode_record(data: bytes) -> Record:
    r = Reader(data)
    rec = read_record(r)
    r.expect_end()
    return rec


def compute_t_id(record: Record) -> bytes:
    return record.computed_t_id()


def min_page_size(signature_size: int = SIGNATURE_SIZE) -> int:
    """|pk| + |signature| + 2|hash| for the chosen primitives."""
    return DIGEST_SIZE + signature_size + 2 * DIGEST_SIZE


@dataclass(frozen=True)
class PageAccounting:
    page_size_bytes: int = PAPER_PAGE_SIZE

    def __post_init__(self) -> None:
        if self.page_size_bytes < min_page_size():
            raise ValueError(f"page size must be at least {min_page_size()} bytes")

    def pages_for_size(self, size: int) -> int:
        return max(1, math.ceil(size / self.page_size_bytes))

    def pages(self, record: Record) -> int:
        return self.pages_for_size(record.size)


def pages(record: Record, page_size_bytes: int = PAPER_PAGE_SIZE) -> int:
    return PageAccounting(page_size_bytes).pages(record)


def to_json(record: Record) -> dict:
    """Human-readable view for debugging (not a normative format)."""

    def conv(v):
        if isinstance(v, bytes):
            return v.hex()
        if isinstance(v, enum.Enum):
            return v.name
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if hasattr(v, "__dataclass_fields__"):
            return {f.name: conv(getattr(v, f.name)) for f in fields(v)}
        return v

    out = {"kind": record.KIND.name}
    out.update(conv(record))
    return out
