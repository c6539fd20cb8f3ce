"""Command-line front end.

Subcommands::

    keygen   generate and serialize a keypair with both share splits
    sdiv     one secure division, decrypted result vs plaintext oracle
    smul     one secure multiplication, likewise
    avg      one encrypted averaging round on random models vs the oracle
    rewards  reward distribution for an experiment config
    run      full experiment from a config file, metrics to a file
    bench    compiled-kernel vs pure-Python backend timings

Every command echoes its effective invocation line (defaults included), so
any output is reproducible by pasting that line. Exit codes: 0 success,
1 configuration error, 2 protocol abort, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from random import Random

from . import __version__, modmath
from .bench import bench_all, format_table
from .errors import CipherFedError, ConfigError, ExperimentAborted
from .fedavg import (
    AveragingConfig,
    ModelVector,
    decrypt_released_average,
    encrypted_average_round,
    fedavg_plain,
    make_submission,
    release_average,
)
from .fixedpoint import FixedPointCodec, to_signed
from .paillier import (
    decrypt,
    encrypt,
    keygen,
    serialize_key_share,
    serialize_private_key,
    serialize_public_key,
    split_key,
)
from .protocols import MaskingParams, secure_div, secure_mul
from .sim import load_config, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PROTOCOL = 2
EXIT_IO = 3


def _echo_invocation(args, names):
    parts = [f"# cipherfed {args.command}"]
    for name in names:
        value = getattr(args, name.replace("-", "_"))
        if isinstance(value, bool):
            if value:
                parts.append(f"--{name}")
        elif value is not None:
            parts.append(f"--{name} {value}")
    print(" ".join(parts))


def _toy_keys(args):
    rng = Random(args.seed)
    pk, sk = keygen(args.zeta, rng, allow_test_sizes=args.zeta < 1024)
    helper_share, server_share = split_key(sk, pk, rng, pairing_id="server")
    return rng, pk, sk, server_share, helper_share


def cmd_keygen(args):
    _echo_invocation(args, ["zeta", "out", "seed", "split-mode",
                            "allow-test-sizes"])
    if args.zeta < 1024 and not args.allow_test_sizes:
        raise ConfigError("zeta < 1024 requires --allow-test-sizes")
    rng = Random(args.seed) if args.seed is not None else Random()
    pk, sk = keygen(args.zeta, rng, allow_test_sizes=args.allow_test_sizes)
    helper, server = split_key(sk, pk, rng, mode=args.split_mode,
                               pairing_id="server")
    member, release = split_key(sk, pk, rng, mode=args.split_mode,
                                pairing_id="participant")
    os.makedirs(args.out, exist_ok=True)
    blobs = {
        "public_key.bin": serialize_public_key(pk),
        "private_key.bin": serialize_private_key(sk),
        "share_server_helper.bin": serialize_key_share(helper),
        "share_server_main.bin": serialize_key_share(server),
        "share_participant.bin": serialize_key_share(member),
        "share_release.bin": serialize_key_share(release),
    }
    for name, blob in blobs.items():
        with open(os.path.join(args.out, name), "wb") as handle:
            handle.write(blob)
    print(f"modulus bits: {pk.bits}")
    print(f"wrote {len(blobs)} files to {args.out}")
    return EXIT_OK


def cmd_sdiv(args):
    _echo_invocation(args, ["x", "y", "L", "zeta", "kappa", "sigma", "seed"])
    if not 0 < args.x < 2 ** args.kappa or not 0 < args.y < 2 ** args.kappa:
        raise ConfigError(f"x and y must lie in (0, 2^{args.kappa})")
    params = MaskingParams(args.sigma, args.kappa, args.L)
    rng, pk, sk, server_share, helper_share = _toy_keys(args)
    out = secure_div(pk, encrypt(pk, args.x, rng), encrypt(pk, args.y, rng),
                     server_share, helper_share, params, rng)
    got = decrypt(sk, pk, out)
    want = args.x * 10 ** args.L // args.y
    print(f"{got} = {want}")
    if got != want:
        raise CipherFedError("decrypted quotient disagrees with the oracle")
    return EXIT_OK


def cmd_smul(args):
    _echo_invocation(args, ["x", "y", "zeta", "kappa", "sigma", "seed"])
    bound = 2 ** args.kappa
    if not (-bound < args.x < bound and -bound < args.y < bound):
        raise ConfigError(f"x and y must lie in (-2^{args.kappa}, 2^{args.kappa})")
    params = MaskingParams(args.sigma, args.kappa, args.L)
    rng, pk, sk, server_share, helper_share = _toy_keys(args)
    out = secure_mul(pk, encrypt(pk, args.x % pk.n, rng),
                     encrypt(pk, args.y % pk.n, rng),
                     server_share, helper_share, params, rng)
    got = to_signed(decrypt(sk, pk, out), pk.n)
    want = args.x * args.y
    print(f"{got} = {want}")
    if got != want:
        raise CipherFedError("decrypted product disagrees with the oracle")
    return EXIT_OK


def cmd_avg(args):
    _echo_invocation(args, ["n", "dim", "L", "zeta", "kappa", "sigma",
                            "offset", "seed"])
    rng, pk, sk, server_share, helper_share = _toy_keys(args)
    params = MaskingParams(args.sigma, args.kappa, args.L)
    codec = FixedPointCodec(args.L, args.kappa, pk.n)
    avg_cfg = AveragingConfig(codec, params, offset=Fraction(args.offset))
    models = [
        ModelVector(
            tuple(rng.randrange(-1000, 1001) / 1000 for _ in range(args.dim)),
            rng.randrange(1, 20),
        )
        for _ in range(args.n)
    ]
    subs = [
        make_submission(pk, model, f"p{i + 1}", 1, avg_cfg, rng)
        for i, model in enumerate(models)
    ]
    member, release = split_key(sk, pk, rng, pairing_id="participant")
    enc_avg = encrypted_average_round(pk, subs, server_share, helper_share,
                                      avg_cfg, rng)
    pairs = release_average(pk, enc_avg, release)
    decoded = decrypt_released_average(pairs, member, pk, avg_cfg)
    oracle = fedavg_plain(models, args.L)
    print(f"{'component':>9} {'decrypted':>14} {'oracle':>14}")
    for j, (d, o) in enumerate(zip(decoded, oracle)):
        print(f"{j:>9} {float(d):>14.6f} {float(o):>14.6f}")
        if abs(d - o) > Fraction(1, 10 ** args.L):
            raise CipherFedError(f"component {j} off by more than 10^-L")
    return EXIT_OK


def cmd_rewards(args):
    _echo_invocation(args, ["config"])
    cfg = load_config(args.config)
    if not cfg.rewards:
        raise ConfigError("config must set rewards=true for this command")
    report = run_experiment(cfg)
    print("round\tparticipant\tmu_decrypted\tw_oracle\td_oracle")
    for row in report.reward_table:
        mu = float(Fraction(row["mu_decrypted"]))
        w = float(Fraction(row["w_oracle"]))
        d = float(Fraction(row["d_oracle"]))
        print(f"{row['round']}\t{row['participant']}\t{mu:.6f}\t{w:.6f}\t{d:.6f}")
    return EXIT_OK


def cmd_run(args):
    _echo_invocation(args, ["config", "metrics-out"])
    cfg = load_config(args.config)
    report = run_experiment(cfg)
    try:
        with open(args.metrics_out, "wb") as handle:
            handle.write(report.to_jsonl())
    except OSError as exc:
        print(f"cannot write metrics: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"rounds: {cfg.rounds}  participants: {cfg.n}  "
          f"transport: {cfg.transport}")
    print(f"final model: {[float(w) for w in report.final_weights]}")
    print(f"wall seconds: {report.timing['wall_seconds']:.3f}")
    print(f"metrics: {args.metrics_out}")
    return EXIT_OK


def cmd_bench(args):
    _echo_invocation(args, ["zeta", "iters", "seed", "config"])
    params = MaskingParams()
    zeta = args.zeta
    if args.config:
        cfg = load_config(args.config)
        params = MaskingParams(cfg.sigma, cfg.kappa, cfg.rounding_exp)
        zeta = cfg.zeta if args.zeta is None else zeta
    zeta = zeta or 512
    available = sorted(modmath.available_backends())
    print(f"backends: {', '.join(available)} (active: "
          f"{modmath.active_backend().name})")
    results = bench_all(zeta=zeta, iters=args.iters, seed=args.seed,
                        params=params)
    print(f"zeta={zeta}, iters={args.iters}")
    print(format_table(results))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cipherfed",
        description="threshold-Paillier secure aggregation toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_crypto_flags(p, include_l=True):
        p.add_argument("--zeta", type=int, default=256,
                       help="prime size in bits (default 256)")
        p.add_argument("--kappa", type=int, default=32)
        p.add_argument("--sigma", type=int, default=80)
        if include_l:
            p.add_argument("--L", type=int, default=6,
                           help="rounding factor exponent")
        p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("keygen", help="generate and serialize key material")
    p.add_argument("--zeta", type=int, default=1024)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="deterministic keys (omit for system randomness)")
    p.add_argument("--split-mode", default="uniform",
                   choices=["uniform", "small_second_share"])
    p.add_argument("--allow-test-sizes", action="store_true")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("sdiv", help="secure division vs plaintext oracle")
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--y", type=int, required=True)
    add_crypto_flags(p)
    p.set_defaults(func=cmd_sdiv)

    p = sub.add_parser("smul", help="secure multiplication vs plaintext oracle")
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--y", type=int, required=True)
    add_crypto_flags(p)
    p.set_defaults(func=cmd_smul)

    p = sub.add_parser("avg", help="one encrypted averaging round vs oracle")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--offset", type=int, default=4,
                   help="positivity shift C")
    add_crypto_flags(p)
    p.set_defaults(func=cmd_avg)

    p = sub.add_parser("rewards", help="reward distribution for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_rewards)

    p = sub.add_parser("run", help="full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--metrics-out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare arithmetic backends")
    p.add_argument("--zeta", type=int, default=None)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ExperimentAborted, CipherFedError) as exc:
        print(f"protocol abort: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
