import random

import pytest

from cipherfed import paillier


@pytest.fixture(scope="session")
def toy_keys():
    """The tiny worked example: p=5, q=7, N=35."""
    return paillier.keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def keys128():
    rng = random.Random(1001)
    pk, sk = paillier.keygen(128, rng, allow_test_sizes=True)
    helper, server = paillier.split_key(sk, pk, rng, pairing_id="server")
    member, release = paillier.split_key(sk, pk, rng, pairing_id="participant")
    return pk, sk, (helper, server), (member, release)


@pytest.fixture(scope="session")
def keys256():
    rng = random.Random(2002)
    pk, sk = paillier.keygen(256, rng, allow_test_sizes=True)
    helper, server = paillier.split_key(sk, pk, rng, pairing_id="server")
    member, release = paillier.split_key(sk, pk, rng, pairing_id="participant")
    return pk, sk, (helper, server), (member, release)


@pytest.fixture(scope="session")
def keys512():
    """Acceptance-scale keys with both split modes of the server split."""
    rng = random.Random(3003)
    pk, sk = paillier.keygen(512, rng, allow_test_sizes=True)
    uniform = paillier.split_key(sk, pk, rng, pairing_id="server")
    fast = paillier.split_key(sk, pk, rng, mode="small_second_share",
                              pairing_id="server")
    member, release = paillier.split_key(sk, pk, rng, pairing_id="participant")
    return pk, sk, uniform, fast, (member, release)
