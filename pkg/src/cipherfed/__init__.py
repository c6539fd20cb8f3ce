"""Secure-aggregation toolkit over threshold Paillier encryption.

Layers, bottom up:

* :mod:`cipherfed.modmath` -- backend-selected big-integer kernels
  (compiled GMP extension with a pure-Python fallback).
* :mod:`cipherfed.paillier` -- the cryptosystem with two-way threshold
  decryption and its homomorphisms.
* :mod:`cipherfed.fixedpoint` -- signed decimal encoding into Z_N.
* :mod:`cipherfed.protocols` -- interactive secure division and
  multiplication between the two servers.
* :mod:`cipherfed.fedavg`, :mod:`cipherfed.dropout`,
  :mod:`cipherfed.rewards` -- encrypted federated averaging, dropout
  strategies, and encrypted reward distribution, each paired with an exact
  plaintext oracle.
* :mod:`cipherfed.sim` -- deterministic multi-party simulator with a wire
  codec, in-memory and socket transports, and instrumentation.
* :mod:`cipherfed.cli` -- the ``cipherfed`` command.
"""

__version__ = "0.1.0"

from .paillier import (  # noqa: F401
    Ciphertext,
    KeyShare,
    PartialDecryption,
    PrivateKey,
    PublicKey,
    keygen,
    keypair_from_primes,
    split_key,
)
