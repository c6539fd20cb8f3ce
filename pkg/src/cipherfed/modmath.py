"""Backend-selected modular arithmetic.

Two interchangeable backends provide the big-integer hot kernels:

* ``gmp`` -- the compiled :mod:`cipherfed._modcore` extension (GMP). Chosen
  automatically when the extension built.
* ``python`` -- CPython ``pow`` plus a Miller-Rabin primality test. Always
  available; roughly 8x slower at 2048-bit operand sizes.

Selection happens at import time and may be overridden with the
``CIPHERFED_BACKEND`` environment variable or, transiently, with
:func:`use_backend` (handy for tests and the ``bench`` CLI command).
"""

from __future__ import annotations

import os
import random
from contextlib import contextmanager

from .errors import KeyGenerationError

# Miller-Rabin rounds giving error probability <= 2**-80.
PRIME_ROUNDS = 40

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113]


class _PythonBackend:
    name = "python"

    @staticmethod
    def powmod(a, e, m):
        if e < 0:
            raise ValueError("exponent must be nonnegative")
        return pow(a, e, m)

    @staticmethod
    def invert(a, m):
        return pow(a, -1, m)

    @staticmethod
    def is_probable_prime(n, rounds=PRIME_ROUNDS):
        if n < 2:
            return False
        for p in _SMALL_PRIMES:
            if n % p == 0:
                return n == p
        d = n - 1
        s = (d & -d).bit_length() - 1
        d >>= s
        # Witness choice is a deterministic function of n so primality is a
        # pure predicate (keygen transcripts stay reproducible per seed).
        picker = random.Random(n)
        for _ in range(rounds):
            a = picker.randrange(2, n - 1)
            x = pow(a, d, n)
            if x == 1 or x == n - 1:
                continue
            for _ in range(s - 1):
                x = x * x % n
                if x == n - 1:
                    break
            else:
                return False
        return True


class _GmpBackend:
    name = "gmp"

    def __init__(self, core):
        self.powmod = core.powmod
        self.invert = core.invert
        self._core_prime = core.is_probable_prime

    def is_probable_prime(self, n, rounds=PRIME_ROUNDS):
        return self._core_prime(n, rounds)


_BACKENDS = {"python": _PythonBackend()}
try:
    from . import _modcore
except ImportError:
    _modcore = None
else:
    _BACKENDS["gmp"] = _GmpBackend(_modcore)


def _pick_default():
    forced = os.environ.get("CIPHERFED_BACKEND")
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"CIPHERFED_BACKEND={forced!r} but available backends are "
                f"{sorted(_BACKENDS)}"
            )
        return _BACKENDS[forced]
    return _BACKENDS.get("gmp", _BACKENDS["python"])


_active = _pick_default()


def active_backend():
    return _active


def available_backends():
    """Mapping of backend name to backend object, pure-Python always present."""
    return dict(_BACKENDS)


@contextmanager
def use_backend(name):
    """Temporarily switch the active backend (not safe under concurrency)."""
    global _active
    previous = _active
    _active = _BACKENDS[name]
    try:
        yield _active
    finally:
        _active = previous


def powmod(a, e, m):
    """(a ** e) % m with a nonnegative exponent."""
    return _active.powmod(a, e, m)


def invert(a, m):
    """Inverse of a mod m; raises ValueError when gcd(a, m) != 1."""
    return _active.invert(a, m)


def is_probable_prime(n, rounds=PRIME_ROUNDS):
    """True if n is prime except with probability <= 4**-rounds."""
    return _active.is_probable_prime(n, rounds)


def random_bits(rng, bits):
    """Uniform integer with exactly ``bits`` bits (top bit set)."""
    if bits < 1:
        raise ValueError("bits must be positive")
    if bits == 1:
        return 1
    return rng.getrandbits(bits - 1) | (1 << (bits - 1))


def random_unit(rng, n):
    """Uniform element of the multiplicative group mod n."""
    import math

    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def random_prime(rng, bits, rounds=PRIME_ROUNDS, max_tries=None):
    """Random prime with exactly ``bits`` bits drawn from ``rng``.

    Raises :class:`KeyGenerationError` once the bounded retry budget is
    exhausted (expected tries grow ~0.35*bits, the budget is 64*bits).
    """
    if max_tries is None:
        max_tries = 64 * max(bits, 8)
    for _ in range(max_tries):
        candidate = random_bits(rng, bits) | 1
        if is_probable_prime(candidate, rounds):
            return candidate
    raise KeyGenerationError(f"no {bits}-bit prime found in {max_tries} tries")
