"""Experiment configuration, synthetic task, runner, and metrics.

``run_experiment`` wires the five roles to a transport, runs setup followed
by the train/submit/window/average/release loop (plus rewards when
enabled), and returns a :class:`MetricsReport`. Reports are deterministic:
identical configuration and seed produce byte-identical ``to_jsonl``
output; wall-clock timing lives outside the canonical bytes.
"""

from __future__ import annotations

import json
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from random import Random

import numpy as np

from ..errors import ConfigError, DomainError
from ..fedavg import fedavg_plain, linreg_loss
from ..rewards import RewardConfig, reward_plain
from .actors import (
    CspActor,
    KgcActor,
    ParticipantActor,
    RequesterActor,
    ROLE_CSP,
    ROLE_KGC,
    ROLE_REQUESTER,
    ROLE_SP,
    SpActor,
    participant_role,
)
from .engine import (
    Engine,
    FEDAVG_PHASE,
    Instrumentation,
    MemoryTransport,
    REWARD_PHASE,
    SETUP_PHASE,
    SocketTransport,
)

_STRATEGIES = ("discard", "retransmit")
_SCHEDULES = ("per_round", "final")
_TRANSPORTS = ("memory", "socket")
_SPLIT_MODES = ("uniform", "small_second_share")


@dataclass
class ExperimentConfig:
    """All experiment parameters; file keys in parentheses where they differ.

    Defaults follow the deployment configuration (zeta=1024, eta=0.001,
    B=50, E=30, sigma=80, kappa=32, L=6, budget 36); tests override to toy
    scales. Cross-field constraints are enforced by :func:`validate_config`
    at load time.
    """

    n: int = 4
    rounds: int = 5                      # (T)
    model_dim: int = 3
    zeta: int = 1024
    rounding_exp: int = 6                # (L)
    kappa: int = 32
    sigma: int = 80
    eta: float = 0.001
    batch_size: int = 50                 # (B)
    epochs: int = 30                     # (E)
    budget: Fraction = Fraction(36)      # (b_t)
    dropout_rate: float = 0.0
    strategy: str = "discard"
    retransmit_success_rate: float = 0.5
    seed: int = 1
    offset: Fraction = None              # positivity shift C
    window_ticks: int = 3
    rewards: bool = False
    reward_schedule: str = "per_round"
    transport: str = "memory"
    split_mode: str = "uniform"
    allow_test_sizes: bool = False
    samples: int = 20
    data_dir: str = None                 # CSV datasets instead of synthetic


_FILE_KEYS = {
    "n": ("n", int),
    "T": ("rounds", int),
    "model_dim": ("model_dim", int),
    "zeta": ("zeta", int),
    "L": ("rounding_exp", int),
    "kappa": ("kappa", int),
    "sigma": ("sigma", int),
    "eta": ("eta", float),
    "B": ("batch_size", int),
    "E": ("epochs", int),
    "b_t": ("budget", Fraction),
    "dropout_rate": ("dropout_rate", float),
    "strategy": ("strategy", str),
    "retransmit_success_rate": ("retransmit_success_rate", float),
    "seed": ("seed", int),
    "offset": ("offset", Fraction),
    "window_ticks": ("window_ticks", int),
    "rewards": ("rewards", None),
    "reward_schedule": ("reward_schedule", str),
    "transport": ("transport", str),
    "split_mode": ("split_mode", str),
    "allow_test_sizes": ("allow_test_sizes", None),
    "samples": ("samples", int),
    "data_dir": ("data_dir", str),
}


def parse_config_text(text):
    """Parse ``key=value`` lines (# comments allowed) into a config."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _FILE_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, conv = _FILE_KEYS[key]
        try:
            if conv is None:  # boolean
                if value.lower() not in ("true", "false", "0", "1"):
                    raise ValueError(value)
                parsed = value.lower() in ("true", "1")
            else:
                parsed = conv(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        values[attr] = parsed
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def effective_offset(cfg):
    if cfg.offset is not None:
        return Fraction(cfg.offset)
    return Fraction(2 ** (cfg.kappa - 2), 10 ** cfg.rounding_exp)


def required_kappa(cfg):
    """Conservative bound-bits requirement for the configured magnitudes.

    Assumes trained weights stay within the positivity offset C (they must,
    or submissions fail), then bounds every protocol operand: the averaging
    numerator at scale L, and for rewards the distance/weight chain with
    models aligned to the scale-2L average.
    """
    ten = 10 ** cfg.rounding_exp
    c2 = 2 * effective_offset(cfg)
    delta_total = cfg.n * cfg.samples
    bounds = [delta_total * c2 * ten]
    if cfg.rewards:
        sq_val = cfg.model_dim * c2 * c2
        bounds += [
            c2 * ten ** 2,                                  # d at scale 2L
            cfg.n * sq_val * ten ** 4,                      # sum of squares
            cfg.samples * cfg.n * sq_val * ten ** 4,        # delta * omega
            delta_total * (sq_val + 1) * ten ** 4,          # guarded divisor
            Fraction(cfg.budget) * cfg.n * sq_val * ten ** 3,
            cfg.n * cfg.n * sq_val * ten ** 3,              # summed weights
        ]
    worst = max(int(b) for b in bounds)
    return worst.bit_length() + 1


def validate_config(cfg):
    """Raise :class:`ConfigError` on inconsistent parameter combinations."""
    if cfg.n < 1 or cfg.rounds < 1 or cfg.model_dim < 1:
        raise ConfigError("n, T, model_dim must be positive")
    if cfg.samples < 1 or cfg.window_ticks < 1:
        raise ConfigError("samples and window_ticks must be positive")
    if cfg.strategy not in _STRATEGIES:
        raise ConfigError(f"strategy must be one of {_STRATEGIES}")
    if cfg.reward_schedule not in _SCHEDULES:
        raise ConfigError(f"reward_schedule must be one of {_SCHEDULES}")
    if cfg.transport not in _TRANSPORTS:
        raise ConfigError(f"transport must be one of {_TRANSPORTS}")
    if cfg.split_mode not in _SPLIT_MODES:
        raise ConfigError(f"split_mode must be one of {_SPLIT_MODES}")
    if not 0 <= cfg.dropout_rate <= 1 or not 0 <= cfg.retransmit_success_rate <= 1:
        raise ConfigError("rates must lie in [0, 1]")
    if cfg.zeta < 1024 and not cfg.allow_test_sizes:
        raise ConfigError("zeta < 1024 requires allow_test_sizes=true")
    if cfg.zeta < 16:
        raise ConfigError("zeta must be at least 16")
    if cfg.eta <= 0 or cfg.batch_size < 1 or cfg.epochs < 1:
        raise ConfigError("eta, B, E must be positive")
    try:
        RewardConfig(cfg.budget, cfg.rounding_exp)  # validates grid and sign
    except DomainError as exc:
        raise ConfigError(f"bad budget: {exc}") from exc
    if 10 ** cfg.rounding_exp >= 2 ** cfg.kappa:
        raise ConfigError("10^L must stay below 2^kappa")
    offset_raw = effective_offset(cfg) * 10 ** cfg.rounding_exp
    if offset_raw.denominator != 1 or offset_raw <= 0:
        raise ConfigError("offset must be positive with at most L decimals")
    log_n = 2 * cfg.zeta - 1
    ten_bits = (10 ** cfg.rounding_exp).bit_length()
    if 3 * cfg.kappa + cfg.sigma + ten_bits + 4 >= log_n:
        raise ConfigError(
            "modulus too small for the division-protocol mask interval: "
            f"need 2*zeta-1 > {3 * cfg.kappa + cfg.sigma + ten_bits + 4}"
        )
    need = required_kappa(cfg)
    if cfg.kappa < need:
        raise ConfigError(
            f"kappa={cfg.kappa} cannot bound the configured magnitudes; "
            f"need kappa >= {need} (or reduce n/samples/offset/budget)"
        )


def inject_dropout(n, rounds, rate, strategy, retransmit_success_rate, seed):
    """Deterministic per-seed plan of (round, participant) drop events.

    Under the retransmission strategy a dropped submission arrives late
    (inside the repair window) with the configured success probability;
    otherwise it is lost outright.
    """
    plan = {}
    rng = Random(f"{seed}/dropout")
    for round_index in range(1, rounds + 1):
        for i in range(1, n + 1):
            if rng.random() < rate:
                late = (
                    strategy == "retransmit"
                    and rng.random() < retransmit_success_rate
                )
                plan[(round_index, participant_role(i))] = "late" if late else "lost"
    return plan


def synthetic_task(cfg):
    """Seeded linear-regression datasets, one per participant, plus an
    evaluation set; targets come from one shared ground-truth weight
    vector with mild noise."""
    rng = Random(f"{cfg.seed}/data")
    truth = [rng.randrange(-500, 501) / 1000 for _ in range(cfg.model_dim)]

    def draw(count):
        features = [
            [rng.gauss(0, 1) for _ in range(cfg.model_dim)] for _ in range(count)
        ]
        targets = [
            sum(f * w for f, w in zip(row, truth)) + rng.gauss(0, 0.05)
            for row in features
        ]
        return np.array(features), np.array(targets)

    datasets = []
    for _ in range(cfg.n):
        count = rng.randint(max(1, cfg.samples // 2), cfg.samples)
        datasets.append(draw(count))
    return datasets, draw(50)


def load_task(cfg):
    """Participant datasets plus the evaluation set.

    With ``data_dir`` set, reads ``participant_<i>.csv`` (i = 1..n) and
    ``eval.csv`` (header row, features then target column); otherwise
    generates the seeded synthetic task.
    """
    if cfg.data_dir is None:
        return synthetic_task(cfg)
    import os

    from ..errors import DomainError as _DomainError
    from ..fedavg import load_dataset_csv

    def read(name):
        try:
            features, targets = load_dataset_csv(os.path.join(cfg.data_dir, name))
        except _DomainError as exc:
            raise ConfigError(str(exc)) from exc
        if features.shape[1] != cfg.model_dim:
            raise ConfigError(
                f"{name} has {features.shape[1]} feature columns, "
                f"config says model_dim={cfg.model_dim}"
            )
        return features, targets

    datasets = [read(f"participant_{i}.csv") for i in range(1, cfg.n + 1)]
    return datasets, read("eval.csv")


@dataclass
class MetricsReport:
    """Deterministic experiment record plus out-of-band timing."""

    records: list
    message_counts: Counter
    decrypt_log: list
    final_weights: list
    round_averages: dict
    reward_table: list
    timing: dict = field(default_factory=dict)

    def to_jsonl(self):
        """Canonical bytes: one sorted-key JSON record per line."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        return ("\n".join(lines) + "\n").encode()

    def round_counts(self, round_index, phase):
        return {
            role: count
            for (rnd, ph, role), count in sorted(self.message_counts.items())
            if rnd == round_index and ph == phase
        }


ALLOWED_DECRYPT_LABELS = {
    ROLE_SP: frozenset(),
    ROLE_CSP: frozenset({"masked-div-operand", "masked-mul-operand"}),
    ROLE_REQUESTER: frozenset({"final-model"}),
    # participants: released averages and their own rewards
}
_PARTICIPANT_LABELS = frozenset({"released-average", "own-reward"})


def hygiene_violations(decrypt_log):
    """Decryption events outside the role's entitlement. Empty means clean."""
    violations = []
    for role, label in decrypt_log:
        allowed = ALLOWED_DECRYPT_LABELS.get(role, _PARTICIPANT_LABELS)
        if label not in allowed:
            violations.append((role, label))
    return violations


def run_experiment(cfg: ExperimentConfig, dropout_plan=None):
    """Execute the full workflow and return the metrics report.

    Raises :class:`ExperimentAborted` (carrying a structured failure
    record) if any round cannot complete, e.g. every submission of a round
    was dropped under the discard strategy.
    """
    validate_config(cfg)
    if dropout_plan is None:
        dropout_plan = inject_dropout(
            cfg.n, cfg.rounds, cfg.dropout_rate, cfg.strategy,
            cfg.retransmit_success_rate, cfg.seed,
        )
    datasets, eval_set = load_task(cfg)
    oversized = max(len(targets) for _, targets in datasets)
    if oversized > cfg.samples:
        raise ConfigError(
            f"a dataset holds {oversized} samples but the config bounds "
            f"magnitudes with samples={cfg.samples}; raise it (and kappa)"
        )

    instrumentation = Instrumentation()
    for (round_index, role), event in sorted(dropout_plan.items()):
        instrumentation.dropout_events.append(
            {"kind": "dropout", "round": round_index, "participant": role,
             "event": event}
        )

    kgc = KgcActor(cfg, Random(f"{cfg.seed}/kgc"))
    sp = SpActor(cfg, Random(f"{cfg.seed}/sp"),
                 record_decrypt=instrumentation.recorder_for(ROLE_SP))
    csp = CspActor(cfg, Random(f"{cfg.seed}/csp"),
                   record_decrypt=instrumentation.recorder_for(ROLE_CSP))
    requester = RequesterActor(cfg, Random(f"{cfg.seed}/requester"),
                               record_decrypt=instrumentation.recorder_for(ROLE_REQUESTER))
    participants = {}
    for i in range(1, cfg.n + 1):
        role = participant_role(i)
        participants[role] = ParticipantActor(
            i, cfg, datasets[i - 1], dropout_plan, Random(f"{cfg.seed}/{role}"),
            record_decrypt=instrumentation.recorder_for(role),
        )

    actors = {ROLE_KGC: kgc, ROLE_SP: sp, ROLE_CSP: csp,
              ROLE_REQUESTER: requester, **participants}
    transport = SocketTransport() if cfg.transport == "socket" else MemoryTransport()
    engine = Engine(actors, instrumentation, transport)

    started = time.monotonic()
    kgc.bootstrap(engine)
    engine.run()
    wall_seconds = time.monotonic() - started

    return _build_report(cfg, sp, participants, requester, instrumentation,
                         eval_set, wall_seconds)


def _frac_str(value):
    return str(Fraction(value))


def _build_report(cfg, sp, participants, requester, instrumentation,
                  eval_set, wall_seconds):
    records = [{
        "kind": "config",
        "n": cfg.n, "rounds": cfg.rounds, "model_dim": cfg.model_dim,
        "zeta": cfg.zeta, "L": cfg.rounding_exp, "kappa": cfg.kappa,
        "sigma": cfg.sigma, "seed": cfg.seed, "strategy": cfg.strategy,
        "dropout_rate": cfg.dropout_rate, "rewards": cfg.rewards,
        "transport": cfg.transport,
    }]
    records.extend(instrumentation.dropout_events)

    reward_cfg = RewardConfig(cfg.budget, cfg.rounding_exp)
    round_averages = {}
    reward_table = []
    for entry in sp.rounds_log:
        round_index = entry["round"]
        contributing = entry["accepted"] + entry["folded"]
        models = {
            role: participants[role].models_log[round_index]
            for role in contributing
        }
        oracle = fedavg_plain(list(models.values()), cfg.rounding_exp)
        if round_index < cfg.rounds:
            decoded = next(iter(participants.values())).average_log[round_index]
        else:
            decoded = requester.final_weights
        round_averages[round_index] = decoded
        deviation = max(abs(d - o) for d, o in zip(decoded, oracle))
        records.append({
            "kind": "round",
            "round": round_index,
            "accepted": entry["accepted"],
            "folded": entry["folded"],
            "discarded": entry["discarded"],
            "average": [_frac_str(v) for v in decoded],
            "oracle_deviation": _frac_str(deviation),
        })
        for phase in (SETUP_PHASE, FEDAVG_PHASE, REWARD_PHASE):
            counts = {
                role: count
                for (rnd, ph, role), count in sorted(
                    instrumentation.message_counts.items())
                if rnd == round_index and ph == phase
            }
            if counts:
                records.append({
                    "kind": "message_counts", "round": round_index,
                    "phase": phase, "counts": counts,
                })
        if cfg.rewards and (
            cfg.reward_schedule == "per_round" or round_index == cfg.rounds
        ):
            oracle_rewards = reward_plain(list(models.values()), decoded,
                                          reward_cfg)
            for position, role in enumerate(models):
                decrypted = participants[role].reward_log.get(round_index)
                row = {
                    "kind": "reward",
                    "round": round_index,
                    "participant": role,
                    "mu_decrypted": _frac_str(decrypted),
                    "w_oracle": _frac_str(oracle_rewards.w[position]),
                    "d_oracle": _frac_str(oracle_rewards.distances[position]),
                }
                reward_table.append(row)
                records.append(row)

    final_weights = requester.final_weights
    eval_features, eval_targets = eval_set
    loss = linreg_loss(eval_features, eval_targets,
                       np.array([float(w) for w in final_weights]))
    records.append({
        "kind": "final",
        "weights": [_frac_str(w) for w in final_weights],
        "eval_loss": f"{loss:.10f}",
    })

    summary = Counter(instrumentation.decrypt_log)
    records.append({
        "kind": "decrypt_summary",
        "events": [
            {"role": role, "label": label, "count": count}
            for (role, label), count in sorted(summary.items())
        ],
    })

    return MetricsReport(
        records=records,
        message_counts=instrumentation.message_counts,
        decrypt_log=list(instrumentation.decrypt_log),
        final_weights=final_weights,
        round_averages=round_averages,
        reward_table=reward_table,
        timing={"wall_seconds": wall_seconds},
    )
