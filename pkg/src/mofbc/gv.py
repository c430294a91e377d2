"""Signature keys and Generator Verifier (GV) material.

A GV is the signed hash ``sign(gv_private, H(secret || p_t_id))`` (user mode)
or ``sign(gv_private, H(secret))`` (service-provider mode).  The GV is stored
in libsodium's *signed message* form (64-byte signature followed by the
32-byte hash), so opening it with the GV public key yields the hash back.
Ed25519 is deterministic, which keeps GVs reproducible byte-for-byte.
"""
from __future__ import annotations

from dataclasses import dataclass

import nacl.exceptions
import nacl.signing

from .encoding import DIGEST_SIZE, H, DecodeError, Reader, Writer

PUBLIC_KEY_SIZE = 32
SIGNATURE_SIZE = 64
GV_SIZE = SIGNATURE_SIZE + DIGEST_SIZE


class KeyPair:
    """Ed25519 key pair used for both transaction and GV signing."""

    __slots__ = ("_sk", "public", "pk_hash")

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("key seed must be 32 bytes")
        self._sk = nacl.signing.SigningKey(seed)
        self.public: bytes = bytes(self._sk.verify_key)
        self.pk_hash: bytes = H(self.public)

    @classmethod
    def derive(cls, *labels: bytes | str | int) -> "KeyPair":
        """Deterministic key from a label path (simulation identities)."""
        w = Writer()
        for label in labels:
            if isinstance(label, int):
                label = str(label)
            if isinstance(label, str):
                label = label.encode()
            w.var16(label)
        return cls(H(b"mofbc/key/" + w.getvalue()))

    def sign(self, message: bytes) -> bytes:
        return self._sk.sign(message).signature

    def sign_open(self, message: bytes) -> bytes:
        """Signature followed by the message (the GV wire form)."""
        return bytes(self._sk.sign(message))

    def __repr__(self) -> str:
        return f"KeyPair(pk_hash={self.pk_hash.hex()[:12]}...)"


def verify_signature(public: bytes, signature: bytes, message: bytes) -> bool:
    try:
        nacl.signing.VerifyKey(public).verify(message, signature)
    except (nacl.exceptions.BadSignatureError, nacl.exceptions.ValueError, TypeError):
        return False
    return True


def open_signed(public: bytes, signed: bytes) -> bytes | None:
    """Return the message inside ``signed`` if ``public`` made the signature."""
    try:
        return bytes(nacl.signing.VerifyKey(public).verify(signed))
    except (nacl.exceptions.BadSignatureError, nacl.exceptions.ValueError, TypeError):
        return None


# -- GV secret ------------------------------------------------------------

@dataclass(frozen=True)
class GvSecret:
    """A user's GV secret, optionally evolved per transaction.

    ``step=None`` keeps the secret constant.  Otherwise the secret is read as
    a big-endian integer and ``step * index`` is added for the ``index``-th
    transaction.
    """

    base_secret: bytes
    step: int | None = None

    def effective(self, index: int = 0) -> bytes:
        if self.step is None or index == 0:
            return self.base_secret
        value = int.from_bytes(self.base_secret, "big") + self.step * index
        if value < 0:
            raise ValueError("pattern drove the secret negative")
        width = max(len(self.base_secret), (value.bit_length() + 7) // 8)
        return value.to_bytes(width, "big")


GvKeyPair = KeyPair


@dataclass(frozen=True)
class GvProof:
    """Material revealed to prove authorship of a GV-bearing transaction.

    ``p_t_id`` is ``None`` for service-provider (SIMO) GVs.
    """

    gvs_bytes: bytes
    p_t_id: bytes | None
    gv_public: bytes

    def write(self, w: Writer) -> None:
        w.var16(self.gvs_bytes)
        if self.p_t_id is None:
            w.u8(0)
        else:
            w.u8(1).digest(self.p_t_id)
        w.raw(_fixed(self.gv_public, PUBLIC_KEY_SIZE))

    @classmethod
    def read(cls, r: Reader) -> "GvProof":
        gvs = r.var16()
        flag = r.u8()
        if flag not in (0, 1):
            raise DecodeError(f"bad proof flag {flag}")
        p_t_id = r.digest() if flag else None
        return cls(gvs, p_t_id, r.raw(PUBLIC_KEY_SIZE))


def _fixed(b: bytes, n: int) -> bytes:
    if len(b) != n:
        raise ValueError(f"expected {n} bytes, got {len(b)}")
    return b


def gv_hash(gvs_bytes: bytes, p_t_id: bytes | None) -> bytes:
    return H(gvs_bytes + p_t_id) if p_t_id is not None else H(gvs_bytes)


def make_gv_uimo(secret: GvSecret, index: int, p_t_id: bytes, keys: KeyPair) -> bytes:
    return keys.sign_open(gv_hash(secret.effective(index), p_t_id))


def make_gv_simo(secret: GvSecret, keys: KeyPair, index: int = 0) -> bytes:
    return keys.sign_open(gv_hash(secret.effective(index), None))


def uimo_proof(secret: GvSecret, index: int, p_t_id: bytes, keys: KeyPair) -> GvProof:
    return GvProof(secret.effective(index), p_t_id, keys.public)


def simo_proof(secret: GvSecret, keys: KeyPair, index: int = 0) -> GvProof:
    return GvProof(secret.effective(index), None, keys.public)


def verify_gv_bytes(proof: GvProof, gv: bytes, request_signature: bytes,
                    request_signed_bytes: bytes) -> bool:
    # open the stored GV with the presented public key
    opened = open_signed(proof.gv_public, gv) if gv else None
    if opened is None:
        return False
    # the revealed secret (and p_t_id) must hash to the signed value
    if gv_hash(proof.gvs_bytes, proof.p_t_id) != opened:
        return False
    # the requester must hold the matching private key
    return verify_signature(proof.gv_public, request_signature, request_signed_bytes)


def verify_gv(proof: GvProof, target, request_signature: bytes,
              request_signed_bytes: bytes) -> bool:
    """Check that whoever signed the request also generated ``target``.

    ``target`` is any stored record carrying a ``gv`` attribute.  Never raises;
    each of the three checks can independently return False.
    """
    gv = getattr(target, "gv", b"")
    return verify_gv_bytes(proof, gv, request_signature, request_signed_bytes)
