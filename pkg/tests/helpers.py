"""Small builders shared by the tests."""
from __future__ import annotations

from mofbc.chain import Chain
from mofbc.core import MOM, OutputRecord, Transaction, TxRef, seal
from mofbc.encoding import ZERO_DIGEST, H
from mofbc.gv import GvProof, GvSecret, KeyPair, make_gv_simo, make_gv_uimo, simo_proof, uimo_proof


class Owner:
    """A user with one ledger, a GV key pair and a GV secret."""

    def __init__(self, name: str, step: int | None = None, simo: bool = False):
        self.name = name
        self.ledger_keys = KeyPair.derive("ledger", name)
        self.gv_keys = KeyPair.derive("gv", name)
        self.secret = GvSecret(H(name.encode()), step)
        self.simo = simo
        self.head = ZERO_DIGEST
        self.index = 0
        self.proofs: dict[bytes, GvProof] = {}
        self.txs: list[Transaction] = []

    def tx(self, week: int = 0, mom: MOM = MOM.PERMANENT, ttl: int | None = None, payload: bytes = b"",
           inputs: tuple[TxRef, ...] = (), n_outputs: int = 1, pay_by_reward: bool = False) -> Transaction:
        if self.simo:
            gv = make_gv_simo(self.secret, self.gv_keys)
            proof = simo_proof(self.secret, self.gv_keys)
        else:
            gv = make_gv_uimo(self.secret, self.index, self.head, self.gv_keys)
            proof = uimo_proof(self.secret, self.index, self.head, self.gv_keys)
        outputs = tuple(OutputRecord(f"{self.name}:{self.index}:{i}".encode()) for i in range(n_outputs))
        t = seal(Transaction(p_t_id=self.head, inputs=inputs, outputs=outputs, gv=gv, mom=mom,
                             mom_setup=ttl, pay_by_reward=pay_by_reward, payload=payload,
                             timestamp=week), self.ledger_keys)
        self.proofs[t.t_id] = proof
        self.txs.append(t)
        if mom != MOM.DO_NOT_STORE:
            self.head = t.t_id
        self.index += 1
        return t


def mine_each(chain: Chain, records, week: int = 0) -> None:
    """Mine ``records`` one block at a time (for chains with block_size 1)."""
    for r in records:
        chain.mine([r], week)
