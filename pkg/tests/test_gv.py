import itertools

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mofbc.encoding import ZERO_DIGEST, H, Reader, Writer
from mofbc.gv import (
    GV_SIZE,
    GvProof,
    GvSecret,
    KeyPair,
    gv_hash,
    make_gv_simo,
    make_gv_uimo,
    open_signed,
    simo_proof,
    uimo_proof,
    verify_gv_bytes,
    verify_signature,
)

KEYS = KeyPair.derive("gv-owner")
SECRET = GvSecret(b"correct horse battery staple")
REQUEST = b"remove-request-bytes"


def flip(b: bytes, i: int = 0) -> bytes:
    return b[:i] + bytes([b[i] ^ 1]) + b[i + 1:]


class TestSecret:
    def test_constant_without_pattern(self):
        assert {SECRET.effective(i) for i in range(5)} == {SECRET.base_secret}

    def test_add_fixed_value(self):
        s = GvSecret((255).to_bytes(2, "big"), step=3)
        assert s.effective(0) == b"\x00\xff"
        assert s.effective(1) == (258).to_bytes(2, "big")
        assert s.effective(10) == (285).to_bytes(2, "big")

    def test_width_grows_on_overflow(self):
        s = GvSecret(b"\xff", step=1)
        assert s.effective(1) == b"\x01\x00"

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            GvSecret(b"\x01", step=-2).effective(1)


class TestUimo:
    def test_deterministic(self):
        p = H(b"prev")
        assert make_gv_uimo(SECRET, 0, p, KEYS) == make_gv_uimo(SECRET, 0, p, KEYS)
        assert len(make_gv_uimo(SECRET, 0, p, KEYS)) == GV_SIZE

    def test_distinct_p_t_id_gives_distinct_gv(self):
        assert make_gv_uimo(SECRET, 0, H(b"a"), KEYS) != make_gv_uimo(SECRET, 0, H(b"b"), KEYS)

    def test_sequence_with_pattern_pairwise_distinct(self):
        s = GvSecret(b"seed", step=7)
        gvs = []
        prev = ZERO_DIGEST
        for i in range(100):
            gv = make_gv_uimo(s, i, prev, KEYS)
            gvs.append(gv)
            prev = H(gv)
        assert all(a != b for a, b in itertools.combinations(gvs, 2))

    def test_gv_opens_to_hash(self):
        p = H(b"prev")
        assert open_signed(KEYS.public, make_gv_uimo(SECRET, 2, p, KEYS)) == H(SECRET.effective(2) + p)


class TestSimo:
    def test_same_secret_same_gv(self):
        assert make_gv_simo(SECRET, KEYS) == make_gv_simo(SECRET, KEYS)

    def test_different_secret_different_gv(self):
        assert make_gv_simo(SECRET, KEYS) != make_gv_simo(GvSecret(b"other"), KEYS)

    def test_cross_mode_rejected(self):
        gv = make_gv_simo(SECRET, KEYS)
        wrong = GvProof(SECRET.base_secret, ZERO_DIGEST, KEYS.public)  # UIMO-shaped proof
        assert not verify_gv_bytes(wrong, gv, KEYS.sign(REQUEST), REQUEST)
        assert verify_gv_bytes(simo_proof(SECRET, KEYS), gv, KEYS.sign(REQUEST), REQUEST)


class TestVerify:
    p = H(b"prev")

    def honest(self):
        return make_gv_uimo(SECRET, 0, self.p, KEYS), uimo_proof(SECRET, 0, self.p, KEYS)

    def test_honest(self):
        gv, proof = self.honest()
        assert verify_gv_bytes(proof, gv, KEYS.sign(REQUEST), REQUEST)

    def test_unrelated_request_key(self):
        gv, proof = self.honest()
        other = KeyPair.derive("attacker")
        assert not verify_gv_bytes(proof, gv, other.sign(REQUEST), REQUEST)

    def test_flipped_secret(self):
        gv, proof = self.honest()
        bad = GvProof(flip(proof.gvs_bytes), proof.p_t_id, proof.gv_public)
        assert not verify_gv_bytes(bad, gv, KEYS.sign(REQUEST), REQUEST)

    def test_wrong_public_key(self):
        gv, proof = self.honest()
        other = KeyPair.derive("attacker")
        bad = GvProof(proof.gvs_bytes, proof.p_t_id, other.public)
        assert not verify_gv_bytes(bad, gv, other.sign(REQUEST), REQUEST)

    def test_empty_or_garbage_gv(self):
        _, proof = self.honest()
        sig = KEYS.sign(REQUEST)
        assert not verify_gv_bytes(proof, b"", sig, REQUEST)
        assert not verify_gv_bytes(proof, b"\x00" * GV_SIZE, sig, REQUEST)

    def test_signature_over_other_bytes(self):
        gv, proof = self.honest()
        assert not verify_gv_bytes(proof, gv, KEYS.sign(b"something else"), REQUEST)

    @given(st.binary(min_size=1, max_size=40), st.integers(0, 50))
    def test_completeness(self, secret, index):
        s = GvSecret(secret, step=1)
        gv = make_gv_uimo(s, index, self.p, KEYS)
        assert verify_gv_bytes(uimo_proof(s, index, self.p, KEYS), gv, KEYS.sign(REQUEST), REQUEST)


@given(st.binary(max_size=64), st.one_of(st.none(), st.binary(min_size=32, max_size=32)))
def test_proof_round_trip(gvs, p_t_id):
    proof = GvProof(gvs, p_t_id, KEYS.public)
    w = Writer()
    proof.write(w)
    r = Reader(w.getvalue())
    assert GvProof.read(r) == proof
    assert r.at_end()


def test_gv_hash_order():
    assert gv_hash(b"s", b"p" * 32) == H(b"s" + b"p" * 32)
    assert gv_hash(b"s", None) == H(b"s")


def test_signatures():
    sig = KEYS.sign(b"m")
    assert verify_signature(KEYS.public, sig, b"m")
    assert not verify_signature(KEYS.public, sig, b"n")
    assert not verify_signature(KEYS.public, b"short", b"m")
    assert not verify_signature(b"bad key", sig, b"m")
