"""Backend benchmark: compiled GMP kernel vs pure-Python fallback.

Times the raw modular-exponentiation kernel and the protocol-level
operations (encrypt, decrypt, partial decryption, secure division and
multiplication) on every available backend with identical seeds, so the
numbers isolate the kernel difference.
"""

from __future__ import annotations

import time
from random import Random

from . import modmath
from .fixedpoint import to_signed
from .paillier import decrypt, encrypt, keygen, partial_decrypt, split_key
from .protocols import MaskingParams, secure_div, secure_mul


def _time_per_call(fn, iters):
    start = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - start) / iters * 1000.0


def bench_backend(name, zeta, iters, seed, params: MaskingParams):
    """Per-operation milliseconds for one backend."""
    with modmath.use_backend(name):
        rng = Random(seed)
        pk, sk = keygen(zeta, rng, allow_test_sizes=True)
        helper_share, server_share = split_key(sk, pk, rng, pairing_id="server")

        base = rng.randrange(1, pk.n_sq)
        exponent = rng.getrandbits(2 * zeta)
        results = {
            "powmod": _time_per_call(
                lambda: modmath.powmod(base, exponent, pk.n_sq), iters
            )
        }

        plain = rng.randrange(0, 1 << params.kappa)
        results["encrypt"] = _time_per_call(
            lambda: encrypt(pk, plain, rng), iters
        )
        cipher = encrypt(pk, plain, rng)
        results["decrypt"] = _time_per_call(lambda: decrypt(sk, pk, cipher), iters)
        results["partial_decrypt"] = _time_per_call(
            lambda: partial_decrypt(server_share, pk, cipher), iters
        )

        protocol_iters = max(1, iters // 4)

        def one_div():
            x = rng.randrange(1, 1 << params.kappa)
            y = rng.randrange(1, 1 << params.kappa)
            out = secure_div(pk, encrypt(pk, x, rng), encrypt(pk, y, rng),
                             server_share, helper_share, params, rng)
            assert decrypt(sk, pk, out) == x * 10 ** params.rounding_exp // y

        def one_mul():
            x = rng.randrange(-(1 << params.kappa) + 1, 1 << params.kappa)
            y = rng.randrange(-(1 << params.kappa) + 1, 1 << params.kappa)
            out = secure_mul(pk, encrypt(pk, x % pk.n, rng),
                             encrypt(pk, y % pk.n, rng),
                             server_share, helper_share, params, rng)
            assert to_signed(decrypt(sk, pk, out), pk.n) == x * y

        results["secure_div"] = _time_per_call(one_div, protocol_iters)
        results["secure_mul"] = _time_per_call(one_mul, protocol_iters)
        return results


def bench_all(zeta=512, iters=20, seed=1, params=None):
    """Benchmark every available backend; returns {backend: {op: ms}}."""
    params = params or MaskingParams()
    return {
        name: bench_backend(name, zeta, iters, seed, params)
        for name in sorted(modmath.available_backends())
    }


def format_table(results):
    ops = ["powmod", "encrypt", "decrypt", "partial_decrypt",
           "secure_div", "secure_mul"]
    backends = sorted(results)
    width = max(len(op) for op in ops) + 2
    lines = [" " * width + "".join(f"{b:>14}" for b in backends) + "      speedup"]
    for op in ops:
        cells = "".join(f"{results[b][op]:>11.3f} ms" for b in backends)
        if len(backends) == 2 and results[backends[0]][op] > 0:
            slow = max(results[b][op] for b in backends)
            fast = min(results[b][op] for b in backends)
            ratio = f"{slow / fast:>11.1f}x"
        else:
            ratio = ""
        lines.append(f"{op:<{width}}" + cells + ratio)
    return "\n".join(lines)
