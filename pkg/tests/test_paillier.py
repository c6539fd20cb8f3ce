import random

import pytest

from cipherfed import paillier
from cipherfed.errors import (
    CorruptedCiphertextError,
    DomainError,
    PairingError,
    ScaleMismatchError,
)


def test_toy_keypair_matches_hand_computation(toy_keys):
    # p=5, q=7: lambda = 24 and u is its inverse mod 35 by extended Euclid
    pk, sk = toy_keys
    assert (pk.n, pk.g) == (35, 36)
    assert sk.lam == 24
    assert sk.u == pow(24, -1, 35) == 19
    assert sk.lam * sk.u % pk.n == 1


def test_keygen_size_gates():
    rng = random.Random(0)
    with pytest.raises(DomainError):
        paillier.keygen(8, rng, allow_test_sizes=True)
    with pytest.raises(DomainError):
        paillier.keygen(64, rng)  # test size without the flag


def test_keygen_bitlengths():
    rng = random.Random(7)
    pk, sk = paillier.keygen(32, rng, allow_test_sizes=True)
    assert pk.bits >= 2 * 32 - 1
    assert pk.g == pk.n + 1
    assert sk.lam * sk.u % pk.n == 1
    m = rng.randrange(pk.n)
    assert paillier.decrypt(sk, pk, paillier.encrypt(pk, m, rng)) == m


@pytest.mark.slow
def test_keygen_deployment_size():
    rng = random.Random(99)
    pk, _ = paillier.keygen(1024, rng)
    assert pk.bits in (2047, 2048)


def test_bad_prime_pairs_rejected():
    with pytest.raises(DomainError):
        paillier.keypair_from_primes(5, 5)
    with pytest.raises(DomainError):
        paillier.keypair_from_primes(5, 11)  # 5 divides 11 - 1


def test_encrypt_decrypt_roundtrip(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(1)
    for m in (0, 1, pk.n - 1):
        assert paillier.decrypt(sk, pk, paillier.encrypt(pk, m, rng)) == m
    for _ in range(100):
        m = rng.randrange(pk.n)
        assert paillier.decrypt(sk, pk, paillier.encrypt(pk, m, rng)) == m


def test_encrypt_domain_and_randomization(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(2)
    with pytest.raises(DomainError):
        paillier.encrypt(pk, pk.n, rng)
    with pytest.raises(DomainError):
        paillier.encrypt(pk, -1, rng)
    # same message, different randomness: distinct ciphertexts
    values = {paillier.encrypt(pk, 5, rng).value for _ in range(10)}
    assert len(values) > 1
    assert all(
        paillier.decrypt(sk, pk, paillier.Ciphertext(v)) == 5 for v in values
    )


def test_zero_encrypts_to_obfuscator_only(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(3)
    c = paillier.encrypt(pk, 0, rng)
    assert paillier.decrypt(sk, pk, c) == 0
    # value must be an N-th power residue: (1 + 0*N) * r^N
    assert pow(c.value, sk.lam, pk.n_sq) == 1


def test_split_threshold_equivalence(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(4)
    share1, share2 = paillier.split_key(sk, pk, rng)
    epsilon = share1.value + share2.value
    assert epsilon % sk.lam == 0
    assert epsilon % pk.n == 1
    for _ in range(100):
        m = rng.randrange(pk.n)
        c = paillier.encrypt(pk, m, rng)
        combined = paillier.threshold_decrypt(
            paillier.partial_decrypt(share1, pk, c),
            paillier.partial_decrypt(share2, pk, c),
            pk,
        )
        assert combined == paillier.decrypt(sk, pk, c) == m


def test_split_uniform_avoids_degenerate_shares(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(5)
    for _ in range(200):
        s1, s2 = paillier.split_key(sk, pk, rng)
        assert s1.value not in (0, sk.lam)
        assert s2.value not in (0, sk.lam)
        assert (s1.value + s2.value) % sk.lam == 0
        assert (s1.value + s2.value) % pk.n == 1


def test_split_small_second_share(keys128):
    pk, sk, _, _ = keys128
    rng = random.Random(6)
    s1, s2 = paillier.split_key(sk, pk, rng, mode="small_second_share")
    assert s2.value == 2
    m = rng.randrange(pk.n)
    c = paillier.encrypt(pk, m, rng)
    assert paillier.threshold_decrypt(
        paillier.partial_decrypt(s1, pk, c),
        paillier.partial_decrypt(s2, pk, c), pk,
    ) == m


def test_single_share_does_not_decrypt(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(7)
    share1, _ = paillier.split_key(sk, pk, rng)
    hits = 0
    for _ in range(50):
        m = rng.randrange(1, pk.n)
        c = paillier.encrypt(pk, m, rng)
        pd = paillier.partial_decrypt(share1, pk, c)
        other = paillier.PartialDecryption(pd.value, share1.pairing_id + "/2")
        try:
            recovered = paillier.threshold_decrypt(pd, other, pk)
        except CorruptedCiphertextError:
            continue
        if recovered == m:
            hits += 1
    assert hits < 5  # one share alone gives no reliable decryption


def test_pairing_validation(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(8)
    a1, a2 = paillier.split_key(sk, pk, rng, pairing_id="server")
    b1, _ = paillier.split_key(sk, pk, rng, pairing_id="participant")
    c = paillier.encrypt(pk, 3, rng)
    with pytest.raises(PairingError):
        paillier.threshold_decrypt(
            paillier.partial_decrypt(a1, pk, c),
            paillier.partial_decrypt(b1, pk, c), pk,
        )
    with pytest.raises(PairingError):
        paillier.threshold_decrypt(
            paillier.partial_decrypt(a1, pk, c),
            paillier.partial_decrypt(a1, pk, c), pk,
        )
    # complementary halves work regardless of argument order
    assert paillier.threshold_decrypt(
        paillier.partial_decrypt(a2, pk, c),
        paillier.partial_decrypt(a1, pk, c), pk,
    ) == 3


def test_additive_homomorphism(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(9)
    c2 = paillier.encrypt(pk, 2, rng)
    c3 = paillier.encrypt(pk, 3, rng)
    assert paillier.decrypt(sk, pk, paillier.add_encrypted(pk, c2, c3)) == 5
    czero = paillier.encrypt(pk, 0, rng)
    cx = paillier.encrypt(pk, 17 % pk.n, rng)
    assert paillier.decrypt(sk, pk, paillier.add_encrypted(pk, cx, czero)) == 17
    for _ in range(100):
        a, b = rng.randrange(pk.n), rng.randrange(pk.n)
        total = paillier.add_encrypted(
            pk, paillier.encrypt(pk, a, rng), paillier.encrypt(pk, b, rng)
        )
        assert paillier.decrypt(sk, pk, total) == (a + b) % pk.n


def test_scalar_homomorphism(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(10)
    c5 = paillier.encrypt(pk, 5, rng)
    assert paillier.decrypt(sk, pk, paillier.mul_scalar(pk, c5, 1)) == 5
    # negation: multiply by N-1, then add the original back
    neg = paillier.mul_scalar(pk, c5, pk.n - 1)
    assert paillier.decrypt(sk, pk, paillier.add_encrypted(pk, neg, c5)) == 0
    for _ in range(100):
        a, k = rng.randrange(pk.n), rng.randrange(pk.n)
        out = paillier.mul_scalar(pk, paillier.encrypt(pk, a, rng), k)
        assert paillier.decrypt(sk, pk, out) == a * k % pk.n
    with pytest.raises(DomainError):
        paillier.mul_scalar(pk, c5, pk.n)


def test_sub_encrypted(toy_keys):
    pk, sk = toy_keys
    rng = random.Random(11)
    c9 = paillier.encrypt(pk, 9, rng)
    c4 = paillier.encrypt(pk, 4, rng)
    assert paillier.decrypt(sk, pk, paillier.sub_encrypted(pk, c9, c4)) == 5


def test_scale_mismatch_rejected(toy_keys):
    pk, _ = toy_keys
    rng = random.Random(12)
    a = paillier.encrypt(pk, 1, rng, scale=6)
    b = paillier.encrypt(pk, 1, rng, scale=0)
    with pytest.raises(ScaleMismatchError):
        paillier.add_encrypted(pk, a, b)


def test_corrupted_ciphertext_detected(keys128):
    pk, sk, (helper, server), _ = keys128
    # a multiple of N is outside the unit group; the L check catches it
    bogus = paillier.Ciphertext(pk.n)
    with pytest.raises(CorruptedCiphertextError):
        paillier.decrypt(sk, pk, bogus)
    # combining partials of two different ciphertexts is not a decryption
    rng = random.Random(21)
    pd1 = paillier.partial_decrypt(helper, pk, paillier.encrypt(pk, 1, rng))
    pd2 = paillier.partial_decrypt(server, pk, paillier.encrypt(pk, 2, rng))
    with pytest.raises(CorruptedCiphertextError):
        paillier.threshold_decrypt(pd1, pd2, pk)


def test_serialization_roundtrips(keys128):
    pk, sk, (helper, server), _ = keys128
    assert paillier.deserialize_public_key(paillier.serialize_public_key(pk)) == pk
    assert paillier.deserialize_private_key(
        paillier.serialize_private_key(sk)) == sk
    for share in (helper, server):
        assert paillier.deserialize_key_share(
            paillier.serialize_key_share(share)) == share
    rng = random.Random(13)
    c = paillier.encrypt(pk, 12345, rng, scale=6)
    assert paillier.deserialize_ciphertext(paillier.serialize_ciphertext(c)) == c


def test_serialization_rejects_garbage(keys128):
    pk, _, _, _ = keys128
    blob = paillier.serialize_public_key(pk)
    with pytest.raises(DomainError):
        paillier.deserialize_public_key(b"\x02" + blob[1:])  # bad version
    with pytest.raises(DomainError):
        paillier.deserialize_public_key(blob[:-1])  # truncated
    with pytest.raises(DomainError):
        paillier.deserialize_public_key(blob + b"\x00")  # trailing
    with pytest.raises(DomainError):
        paillier.deserialize_ciphertext(b"\x01")
