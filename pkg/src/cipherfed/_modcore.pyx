# cython: language_level=3
"""GMP-backed kernels for the big-integer hot loop.

Only the three operations that dominate runtime live here: modular
exponentiation, modular inversion, and probabilistic primality. Everything
else (multiplication, floordiv, gcd) is fast enough on CPython ints.
"""

from libc.stddef cimport size_t


cdef extern from "gmp.h":
    ctypedef struct __mpz_struct:
        pass
    ctypedef __mpz_struct mpz_t[1]
    void mpz_init(mpz_t)
    void mpz_clear(mpz_t)
    void mpz_import(mpz_t, size_t, int, size_t, int, size_t, const void *)
    void *mpz_export(void *, size_t *, int, size_t, int, size_t, const mpz_t)
    void mpz_powm(mpz_t, const mpz_t, const mpz_t, const mpz_t)
    int mpz_invert(mpz_t, const mpz_t, const mpz_t)
    int mpz_probab_prime_p(const mpz_t, int)
    int mpz_sgn(const mpz_t)
    size_t mpz_sizeinbase(const mpz_t, int)


cdef int _load(mpz_t z, object n) except -1:
    # n must be a nonnegative int
    cdef bytes b = n.to_bytes((n.bit_length() + 7) // 8 or 1, "big")
    mpz_import(z, len(b), 1, 1, 0, 0, <const char *>b)
    return 0


cdef object _dump(mpz_t z):
    cdef size_t count = 0
    if mpz_sgn(z) == 0:
        return 0
    out = bytes((mpz_sizeinbase(z, 2) + 7) // 8)
    mpz_export(<void *><char *>out, &count, 1, 1, 0, 0, z)
    return int.from_bytes(out, "big")


def powmod(a, e, m):
    """(a ** e) % m for nonnegative e and positive m."""
    if e < 0:
        raise ValueError("exponent must be nonnegative")
    if m <= 0:
        raise ValueError("modulus must be positive")
    cdef mpz_t za, ze, zm, zr
    mpz_init(za)
    mpz_init(ze)
    mpz_init(zm)
    mpz_init(zr)
    try:
        _load(za, a % m)
        _load(ze, e)
        _load(zm, m)
        mpz_powm(zr, za, ze, zm)
        return _dump(zr)
    finally:
        mpz_clear(za)
        mpz_clear(ze)
        mpz_clear(zm)
        mpz_clear(zr)


def invert(a, m):
    """Multiplicative inverse of a modulo m; ValueError if none exists."""
    if m <= 0:
        raise ValueError("modulus must be positive")
    cdef mpz_t za, zm, zr
    cdef int ok
    mpz_init(za)
    mpz_init(zm)
    mpz_init(zr)
    try:
        _load(za, a % m)
        _load(zm, m)
        ok = mpz_invert(zr, za, zm)
        if not ok:
            raise ValueError("base is not invertible for the given modulus")
        return _dump(zr)
    finally:
        mpz_clear(za)
        mpz_clear(zm)
        mpz_clear(zr)


def is_probable_prime(n, int rounds=40):
    """Probabilistic primality; error probability at most 4**-rounds."""
    if n < 2:
        return False
    cdef mpz_t zn
    cdef int res
    mpz_init(zn)
    try:
        _load(zn, n)
        res = mpz_probab_prime_p(zn, rounds)
        return res != 0
    finally:
        mpz_clear(zn)
