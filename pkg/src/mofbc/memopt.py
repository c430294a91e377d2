"""Building and validating remove, ledger-remove, summary and aged transactions."""
from __future__ import annotations

import math
from collections.abc import Callable, Sequence

from .chain import Chain, build_merkle_root
from .core import (
    MOM,
    AgedTransaction,
    LedgerRemoveTransaction,
    OutputRecord,
    Record,
    RemoveTransaction,
    SummaryTransaction,
    Transaction,
    TxRef,
    seal,
)
from .encoding import DIGEST_SIZE, ZERO_DIGEST
from .gv import GvProof, KeyPair, verify_gv


# -- TransOrder -----------------------------------------------------------

def compute_trans_order(t_ids: Sequence[bytes]) -> tuple[int, list[bytes]]:
    """Shortest prefix length ``d`` making all ids distinct, and the prefixes.

    Sorting puts the closest pair of ids next to each other, so ``d`` is one
    more than the longest common prefix between neighbours.
    """
    if not t_ids:
        raise ValueError("need at least one transaction id")
    if len(set(t_ids)) != len(t_ids):
        raise ValueError("duplicate transaction ids")
    ordered = sorted(t_ids)
    longest = 0
    for a, b in zip(ordered, ordered[1:]):
        n = 0
        while n < DIGEST_SIZE and a[n] == b[n]:
            n += 1
        longest = max(longest, n)
    d = longest + 1
    if d > DIGEST_SIZE - 1:
        raise ValueError("ids share too long a prefix for a TransOrder field")
    return d, [t[:d] for t in t_ids]


def chronological(group: Sequence[Record]) -> list[Record]:
    """Ascending timestamp; equal weeks broken by t_id."""
    return sorted(group, key=lambda tx: (tx.timestamp, tx.t_id))


# -- input/output consolidation -------------------------------------------

def consolidate_io(group: Sequence[Record]) -> tuple[list[TxRef], list[OutputRecord]]:
    """Inputs coming from outside the group, and outputs nobody in the group spends."""
    members = {tx.t_id for tx in group}
    external_inputs: list[TxRef] = []
    consumed: set[tuple[bytes, int]] = set()
    for tx in group:
        for ref in getattr(tx, "inputs", ()):
            if ref.source_t_id in members:
                consumed.add((ref.source_t_id, ref.output_index))
            else:
                external_inputs.append(ref)
    external_outputs = [
        out
        for tx in group
        for i, out in enumerate(getattr(tx, "outputs", ()))
        if (tx.t_id, i) not in consumed
    ]
    return external_inputs, external_outputs


# -- summaries ------------------------------------------------------------

def summary_fields(group: Sequence[Record]) -> dict:
    """The deterministic content of a summary over ``group``."""
    if not group:
        raise ValueError("cannot summarize an empty group")
    members = chronological(group)
    ids = [tx.t_id for tx in members]
    _, prefixes = compute_trans_order(ids)
    ext_in, ext_out = consolidate_io(members)
    return dict(
        merkle_root=build_merkle_root(ids),
        external_inputs=tuple(ext_in),
        external_outputs=tuple(ext_out),
        summary_times=tuple(tx.timestamp for tx in members),
        trans_order=tuple(prefixes),
    )


def build_summary(group: Sequence[Record], signer: KeyPair, *, timestamp: int,
                  proofs: Sequence[GvProof] | None = None,
                  p_t_id: bytes = ZERO_DIGEST) -> SummaryTransaction:
    """Summarize ``group``.

    With ``proofs`` (one per member, aligned with ``group``) this is a user or
    service-provider summary and ``signer`` must be the GV key.  Without, it is
    a network summary: every member must be summarizable and come from a
    single ledger (one generator key).
    """
    if not group:
        raise ValueError("cannot summarize an empty group")
    if proofs is not None:
        if len(proofs) != len(group):
            raise ValueError(f"{len(proofs)} proofs for {len(group)} transactions")
        by_id = {tx.t_id: p for tx, p in zip(group, proofs)}
        ordered_proofs = tuple(by_id[tx.t_id] for tx in chronological(group))
    else:
        if any(tx.mom != MOM.SUMMARIZABLE for tx in group):
            raise ValueError("network summaries only take summarizable transactions")
        if len({tx.pk_hash for tx in group}) != 1:
            raise ValueError("network summaries cover exactly one ledger")
        ordered_proofs = ()
    draft = SummaryTransaction(timestamp=timestamp, p_t_id=p_t_id, gv_proofs=ordered_proofs,
                               **summary_fields(group))
    return seal(draft, signer)


def summary_matches(summary: SummaryTransaction, group: Sequence[Record]) -> bool:
    """Does ``summary`` carry exactly what summarizing ``group`` produces?"""
    try:
        expected = summary_fields(group)
    except ValueError:
        return False
    return all(getattr(summary, k) == v for k, v in expected.items())


def locate_members(summary: SummaryTransaction, chain: Chain) -> list[Record] | None:
    """Find the stored transactions a summary refers to via its TransOrder."""
    members: list[Record] = []
    for prefix in summary.trans_order:
        hits = chain.find_by_prefix(prefix)
        if len(hits) != 1:
            return None
        members.append(chain.get(hits[0]))
    return members


def validate_summary(summary: SummaryTransaction, chain: Chain,
                     members: Sequence[Record] | None = None) -> bool:
    """Check a summary against the stored members it names.

    For user/provider summaries every member's GV is checked against the
    matching proof and the summary's own signature.  Network summaries are
    checked by recomputation only (the agent-trust layer decides how often).
    """
    if not summary.has_valid_t_id():
        return False
    if members is None:
        members = locate_members(summary, chain)
    if members is None or any(m is None or chain.get(m.t_id) is None for m in members):
        return False
    if not summary_matches(summary, members):
        return False
    if summary.is_network_summary:
        return True
    ordered = chronological(members)
    for proof, member in zip(summary.gv_proofs, ordered):
        if not verify_gv(proof, member, summary.signature, summary.signing_bytes):
            return False
    return True


# -- removal --------------------------------------------------------------

def make_remove(target_t_id: bytes, proof: GvProof, gv_keys: KeyPair, *, timestamp: int,
                p_t_id: bytes = ZERO_DIGEST) -> RemoveTransaction:
    return seal(RemoveTransaction(timestamp=timestamp, p_t_id=p_t_id,
                                  target_t_id=target_t_id, proof=proof), gv_keys)


def validate_remove(rm: RemoveTransaction, chain: Chain) -> bool:
    if not rm.has_valid_t_id():
        return False
    target = chain.get(rm.target_t_id)
    if target is None:
        return False
    return verify_gv(rm.proof, target, rm.signature, rm.signing_bytes)


def make_ledger_remove(genesis_t_id: bytes, proof: GvProof, gv_keys: KeyPair, *, timestamp: int,
                       p_t_id: bytes = ZERO_DIGEST) -> LedgerRemoveTransaction:
    return seal(LedgerRemoveTransaction(timestamp=timestamp, p_t_id=p_t_id,
                                        genesis_t_id=genesis_t_id, proof=proof), gv_keys)


def validate_ledger_remove(lr: LedgerRemoveTransaction, chain: Chain) -> bool:
    if not lr.has_valid_t_id():
        return False
    genesis = chain.get(lr.genesis_t_id)
    if genesis is None or genesis.p_t_id != ZERO_DIGEST:
        return False
    return verify_gv(lr.proof, genesis, lr.signature, lr.signing_bytes)


# -- aging ----------------------------------------------------------------

AgingFunction = Callable[[bytes], bytes]


def truncating_aging(fraction: float = 0.25) -> AgingFunction:
    """Reference lossy aging: keep the leading ``fraction`` of the payload."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")

    def age(payload: bytes) -> bytes:
        return payload[: math.floor(len(payload) * fraction)]

    return age


def make_aged(original: Record, proof: GvProof, gv_keys: KeyPair, *, timestamp: int,
              aging: AgingFunction | None = None, aged_payload: bytes | None = None,
              gv: bytes = b"", p_t_id: bytes = ZERO_DIGEST,
              mom: MOM = MOM.PERMANENT, mom_setup: int | None = None) -> AgedTransaction:
    original_payload = getattr(original, "payload", b"")
    if aged_payload is None:
        aged_payload = (aging or truncating_aging())(original_payload)
    if len(aged_payload) > len(original_payload):
        raise ValueError("aging must not grow the payload")
    draft = AgedTransaction(timestamp=timestamp, p_t_id=p_t_id, original_t_id=original.t_id,
                            outputs=getattr(original, "outputs", ()), aged_payload=aged_payload,
                            gv=gv, mom=mom, mom_setup=mom_setup, proof=proof)
    return seal(draft, gv_keys)


def validate_aged(at: AgedTransaction, chain: Chain) -> bool:
    if not at.has_valid_t_id():
        return False
    original = chain.get(at.original_t_id)
    if original is None:
        return False
    if len(at.aged_payload) > len(getattr(original, "payload", b"")):
        return False
    return verify_gv(at.proof, original, at.signature, at.signing_bytes)


def validate_optimization(rec: Record, chain: Chain) -> bool:
    """Dispatch to the validator for ``rec``'s kind (plain transactions pass)."""
    if isinstance(rec, RemoveTransaction):
        return validate_remove(rec, chain)
    if isinstance(rec, LedgerRemoveTransaction):
        return validate_ledger_remove(rec, chain)
    if isinstance(rec, AgedTransaction):
        return validate_aged(rec, chain)
    if isinstance(rec, SummaryTransaction):
        return validate_summary(rec, chain)
    return isinstance(rec, Transaction)
