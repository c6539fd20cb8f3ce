"""Paillier cryptosystem with two-way threshold decryption.

The private exponent lambda = (p-1)(q-1) is split into additive shares
(lambda_1, lambda_2) with

    lambda_1 + lambda_2 = 0 (mod lambda)   and
    lambda_1 + lambda_2 = 1 (mod N),

which the Chinese remainder theorem satisfies simultaneously via
epsilon = lambda * u mod (lambda * N), u = lambda^-1 mod N. A ciphertext
raised to one share is a partial decryption; multiplying two complementary
partials and applying L(x) = (x - 1) / N recovers the plaintext. One share
alone reveals nothing useful.

All operations are pure functions over frozen values and take randomness as
an explicit ``random.Random``-like argument, so protocol transcripts are
reproducible from a seed. Encryption uses the (1 + mN) * r^N shortcut, which
for g = N + 1 is identical to g^m * r^N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from random import Random

from . import modmath
from .errors import (
    CorruptedCiphertextError,
    DomainError,
    KeyGenerationError,
    PairingError,
)

# Key sizes below TEST_MIN_ZETA are never accepted; sizes below
# DEPLOY_MIN_ZETA require the explicit test-mode flag.
TEST_MIN_ZETA = 16
DEPLOY_MIN_ZETA = 1024

SERIAL_VERSION = 1


@dataclass(frozen=True)
class PublicKey:
    """Modulus N (product of two same-size primes) and generator g = N + 1."""

    n: int
    g: int

    def __post_init__(self):
        if self.g != self.n + 1:
            raise DomainError("generator must equal N + 1")
        if self.n % 2 == 0 or modmath.is_probable_prime(self.n):
            raise DomainError("modulus must be odd and composite")
        object.__setattr__(self, "n_sq", self.n * self.n)

    @property
    def bits(self):
        return self.n.bit_length()


@dataclass(frozen=True)
class PrivateKey:
    """lam = (p-1)(q-1) and its inverse u modulo N."""

    lam: int
    u: int


@dataclass(frozen=True)
class KeyShare:
    """One additive share of the private exponent.

    ``pairing_id`` names the split this share belongs to and ``index`` (1 or
    2) names the half, so mismatched partial decryptions are detectable.
    """

    value: int
    pairing_id: str
    index: int

    def __post_init__(self):
        if self.index not in (1, 2):
            raise DomainError("share index must be 1 or 2")

    @property
    def share_id(self):
        return f"{self.pairing_id}/{self.index}"


@dataclass(frozen=True)
class Ciphertext:
    """Element of the residue group mod N^2 tagged with a public scale.

    ``scale`` = s means the plaintext is an integer encoding value * 10^s.
    The tag is metadata for fixed-point bookkeeping; it is never encrypted.
    """

    value: int
    scale: int = 0

    def __post_init__(self):
        if self.scale < 0:
            raise DomainError("scale must be nonnegative")


@dataclass(frozen=True)
class PartialDecryption:
    value: int
    share_id: str


def keygen(zeta, rng: Random, *, allow_test_sizes=False):
    """Generate a keypair from two ``zeta``-bit primes.

    Primality is probabilistic with error probability <= 2**-80. Sizes in
    [16, 1024) are for tests and must be enabled explicitly.
    """
    if zeta < TEST_MIN_ZETA:
        raise DomainError(f"zeta must be >= {TEST_MIN_ZETA}")
    if zeta < DEPLOY_MIN_ZETA and not allow_test_sizes:
        raise DomainError(
            f"zeta < {DEPLOY_MIN_ZETA} requires allow_test_sizes=True"
        )
    for _ in range(64):
        p = modmath.random_prime(rng, zeta)
        q = modmath.random_prime(rng, zeta)
        if p == q:
            continue
        # gcd(lambda, N) = 1 fails when p divides q-1 or vice versa.
        if (q - 1) % p == 0 or (p - 1) % q == 0:
            continue
        return keypair_from_primes(p, q)
    raise KeyGenerationError("no usable prime pair after bounded retries")


def keypair_from_primes(p, q):
    """Build a keypair from caller-supplied primes (toy keys for tests)."""
    if p == q:
        raise DomainError("primes must be distinct")
    n = p * q
    lam = (p - 1) * (q - 1)
    if math.gcd(lam, n) != 1:
        raise DomainError("gcd(lambda, N) != 1 for this prime pair")
    u = modmath.invert(lam, n)
    return PublicKey(n, n + 1), PrivateKey(lam, u)


def split_key(sk: PrivateKey, pk: PublicKey, rng: Random, *,
              mode="uniform", pairing_id="split"):
    """Split the private exponent into two additive shares.

    ``uniform`` draws share 1 uniformly from [1, lambda*u]; shares may
    exceed N. ``small_second_share`` is the speed variant that fixes
    share 2 to the constant 2 so one party's exponentiations are cheap.
    """
    epsilon = sk.lam * sk.u % (sk.lam * pk.n)
    if mode == "uniform":
        while True:
            share1 = rng.randrange(1, epsilon + 1)
            share2 = epsilon - share1
            if 0 in (share1, share2) or sk.lam in (share1, share2):
                continue
            break
    elif mode == "small_second_share":
        share2 = 2
        share1 = epsilon - 2
    else:
        raise DomainError(f"unknown split mode {mode!r}")
    return (
        KeyShare(share1, pairing_id, 1),
        KeyShare(share2, pairing_id, 2),
    )


def encrypt(pk: PublicKey, m, rng: Random, scale=0):
    """Encrypt m in [0, N) as (1 + mN) * r^N mod N^2 with r in Z_N^*."""
    if not 0 <= m < pk.n:
        raise DomainError("plaintext out of range [0, N)")
    r = modmath.random_unit(rng, pk.n)
    value = (1 + m * pk.n) * modmath.powmod(r, pk.n, pk.n_sq) % pk.n_sq
    return Ciphertext(value, scale)


def _l_function(x, n):
    num = x - 1
    if num % n:
        raise CorruptedCiphertextError("L-function numerator not divisible by N")
    return num // n


def decrypt(sk: PrivateKey, pk: PublicKey, c: Ciphertext):
    """Recover the plaintext: L(c^lambda mod N^2) * u mod N."""
    return _l_function(modmath.powmod(c.value, sk.lam, pk.n_sq), pk.n) * sk.u % pk.n


def partial_decrypt(share: KeyShare, pk: PublicKey, c: Ciphertext):
    """Raise the ciphertext to one key share: c^lambda_i mod N^2."""
    return PartialDecryption(
        modmath.powmod(c.value, share.value, pk.n_sq), share.share_id
    )


def threshold_decrypt(pd1: PartialDecryption, pd2: PartialDecryption,
                      pk: PublicKey):
    """Combine complementary partial decryptions: L(M1 * M2 mod N^2)."""
    pairing1, _, index1 = pd1.share_id.rpartition("/")
    pairing2, _, index2 = pd2.share_id.rpartition("/")
    if pairing1 != pairing2 or {index1, index2} != {"1", "2"}:
        raise PairingError(
            f"partials {pd1.share_id!r} and {pd2.share_id!r} are not "
            "complementary halves of one split"
        )
    return _l_function(pd1.value * pd2.value % pk.n_sq, pk.n) % pk.n


def add_encrypted(pk: PublicKey, c1: Ciphertext, c2: Ciphertext):
    """Homomorphic addition; operands must share one scale."""
    if c1.scale != c2.scale:
        from .errors import ScaleMismatchError

        raise ScaleMismatchError(
            f"scales {c1.scale} and {c2.scale} differ; align first"
        )
    return Ciphertext(c1.value * c2.value % pk.n_sq, c1.scale)


def mul_scalar(pk: PublicKey, c: Ciphertext, k):
    """Homomorphic scalar multiplication by an unscaled integer k in [0, N)."""
    if not 0 <= k < pk.n:
        raise DomainError("scalar out of range [0, N)")
    return Ciphertext(modmath.powmod(c.value, k, pk.n_sq), c.scale)


def neg_encrypted(pk: PublicKey, c: Ciphertext):
    """Homomorphic negation, i.e. scalar multiplication by N - 1."""
    return mul_scalar(pk, c, pk.n - 1)


def sub_encrypted(pk: PublicKey, c1: Ciphertext, c2: Ciphertext):
    """c1 - c2 as negate-then-add."""
    return add_encrypted(pk, c1, neg_encrypted(pk, c2))


# ---------------------------------------------------------------------------
# Serialization: version byte + length-prefixed big-endian integers.
# Ciphertexts are big-endian value bytes with one trailing signed scale byte.
# ---------------------------------------------------------------------------


def _pack_int(v):
    b = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
    return len(b).to_bytes(4, "big") + b


def _unpack_int(data, offset):
    if offset + 4 > len(data):
        raise DomainError("truncated length prefix")
    length = int.from_bytes(data[offset:offset + 4], "big")
    offset += 4
    if offset + length > len(data):
        raise DomainError("truncated integer field")
    return int.from_bytes(data[offset:offset + length], "big"), offset + length


def _check_version(data):
    if not data or data[0] != SERIAL_VERSION:
        raise DomainError("unknown serialization version")


def serialize_public_key(pk: PublicKey):
    return bytes([SERIAL_VERSION]) + _pack_int(pk.n)


def deserialize_public_key(data):
    _check_version(data)
    n, offset = _unpack_int(data, 1)
    if offset != len(data):
        raise DomainError("trailing bytes in public key")
    return PublicKey(n, n + 1)


def serialize_private_key(sk: PrivateKey):
    return bytes([SERIAL_VERSION]) + _pack_int(sk.lam) + _pack_int(sk.u)


def deserialize_private_key(data):
    _check_version(data)
    lam, offset = _unpack_int(data, 1)
    u, offset = _unpack_int(data, offset)
    if offset != len(data):
        raise DomainError("trailing bytes in private key")
    return PrivateKey(lam, u)


def serialize_key_share(share: KeyShare):
    tag = share.pairing_id.encode()
    return (
        bytes([SERIAL_VERSION, share.index])
        + len(tag).to_bytes(2, "big") + tag
        + _pack_int(share.value)
    )


def deserialize_key_share(data):
    _check_version(data)
    if len(data) < 4:
        raise DomainError("truncated key share")
    index = data[1]
    tag_len = int.from_bytes(data[2:4], "big")
    if 4 + tag_len > len(data):
        raise DomainError("truncated pairing id")
    pairing_id = data[4:4 + tag_len].decode()
    value, offset = _unpack_int(data, 4 + tag_len)
    if offset != len(data):
        raise DomainError("trailing bytes in key share")
    return KeyShare(value, pairing_id, index)


def serialize_ciphertext(c: Ciphertext):
    v = c.value.to_bytes((c.value.bit_length() + 7) // 8 or 1, "big")
    return v + c.scale.to_bytes(1, "big", signed=True)


def deserialize_ciphertext(data):
    if len(data) < 2:
        raise DomainError("truncated ciphertext")
    scale = int.from_bytes(data[-1:], "big", signed=True)
    return Ciphertext(int.from_bytes(data[:-1], "big"), scale)
