"""Memory-optimized blockchain: records, chain, optimizations, agents, economics and a simulator."""

from .chain import Blackboard, Block, Chain
from .core import (
    MOM,
    AgedTransaction,
    LedgerRemoveTransaction,
    PageAccounting,
    RemoveTransaction,
    SummaryTransaction,
    Transaction,
    canonical_serialize,
    decode_record,
    seal,
)
from .gv import GvProof, GvSecret, KeyPair
from .sim import SimConfig, preset, run

__all__ = [
    "MOM", "AgedTransaction", "Blackboard", "Block", "Chain", "GvProof", "GvSecret", "KeyPair",
    "LedgerRemoveTransaction", "PageAccounting", "RemoveTransaction", "SimConfig",
    "SummaryTransaction", "Transaction", "canonical_serialize", "decode_record", "preset", "run", "seal",
]
