import random
from fractions import Fraction

import pytest

from cipherfed.errors import CodecError, ConfigError, ExperimentAborted
from cipherfed.sim import (
    ExperimentConfig,
    WireMessage,
    decode_message,
    encode_message,
    hygiene_violations,
    inject_dropout,
    parse_config_text,
    run_experiment,
)
from cipherfed.sim import codec
from cipherfed.sim.engine import WallClockTicker

BASE = dict(
    n=3, rounds=2, model_dim=2, zeta=128, rounding_exp=6, kappa=40, sigma=40,
    eta=0.05, batch_size=8, epochs=2, budget=Fraction(36), seed=7,
    offset=Fraction(4), allow_test_sizes=True, samples=10,
)

REWARD_BASE = dict(BASE, zeta=256, kappa=100, sigma=80, rewards=True)


# -- wire codec ---------------------------------------------------------------


def test_codec_roundtrips_every_tag():
    rng = random.Random(1)
    for tag in codec.TAG_NAMES:
        msg = WireMessage(
            tag, rng.getrandbits(64), rng.getrandbits(16),
            tuple(rng.getrandbits(rng.randrange(1, 2048)) for _ in range(5)),
        )
        assert decode_message(encode_message(msg)) == msg


def test_codec_roundtrips_extremes():
    msg = WireMessage(codec.TIMER, 0, 0, ())
    assert decode_message(encode_message(msg)) == msg
    msg = WireMessage(codec.SUBMIT, 2 ** 64 - 1, 2 ** 32 - 1, (0, 1, 2 ** 4096))
    assert decode_message(encode_message(msg)) == msg


def test_codec_rejects_malformed():
    good = encode_message(WireMessage(codec.SUBMIT, 5, 1, (123, 456)))
    with pytest.raises(CodecError):
        decode_message(good[:-1])  # truncated body
    with pytest.raises(CodecError):
        decode_message(good + b"\x00")  # trailing byte
    with pytest.raises(CodecError):
        decode_message(bytes([0xEE]) + good[1:])  # unknown tag
    with pytest.raises(CodecError):
        decode_message(b"")
    with pytest.raises(CodecError):
        decode_message("not bytes")
    bad_field = bytearray(good)
    bad_field[17:21] = (0).to_bytes(4, "big")  # zero-length field
    with pytest.raises(CodecError):
        decode_message(bytes(bad_field))


def test_codec_fuzz_smoke():
    rng = random.Random(2)
    survived = 0
    for _ in range(2000):
        blob = rng.randbytes(rng.randrange(0, 64))
        try:
            decode_message(blob)
            survived += 1
        except CodecError:
            pass
    assert survived < 50  # random bytes almost never parse


# -- configuration ------------------------------------------------------------


def test_parse_config_text_round_trip():
    cfg = parse_config_text(
        """
        # toy experiment
        n = 4
        T = 3
        model_dim = 2
        zeta = 128
        L = 6
        kappa = 40
        sigma = 40
        eta = 0.05
        B = 8
        E = 2
        b_t = 12.5
        dropout_rate = 0.25
        strategy = retransmit
        retransmit_success_rate = 1.0
        seed = 11
        offset = 4
        rewards = false
        allow_test_sizes = true
        samples = 10
        """
    )
    assert cfg.n == 4 and cfg.rounds == 3
    assert cfg.budget == Fraction(25, 2)
    assert cfg.strategy == "retransmit"


def test_parse_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError):
        parse_config_text("bogus_key = 1")
    with pytest.raises(ConfigError):
        parse_config_text("n four")
    with pytest.raises(ConfigError):
        parse_config_text("n = four")


def test_config_cross_field_validation():
    with pytest.raises(ConfigError):  # test sizes need the flag
        run_experiment(ExperimentConfig(**{**BASE, "allow_test_sizes": False}))
    with pytest.raises(ConfigError):  # mask interval empty at this modulus
        run_experiment(ExperimentConfig(**{**BASE, "kappa": 80, "sigma": 80}))
    with pytest.raises(ConfigError):  # kappa cannot bound the magnitudes
        run_experiment(ExperimentConfig(**{**BASE, "kappa": 20}))
    with pytest.raises(ConfigError):  # default offset caps total data count
        run_experiment(ExperimentConfig(**{**BASE, "offset": None}))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(**{**BASE, "strategy": "panic"}))
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig(**{**BASE, "budget": Fraction(1, 3)}))


# -- dropout planning ---------------------------------------------------------


def test_inject_dropout_rate_zero_empty():
    assert inject_dropout(8, 5, 0.0, "discard", 0.5, 1) == {}


def test_inject_dropout_deterministic():
    a = inject_dropout(6, 4, 0.5, "retransmit", 0.5, 42)
    b = inject_dropout(6, 4, 0.5, "retransmit", 0.5, 42)
    assert a == b and a
    assert set(a.values()) <= {"late", "lost"}
    c = inject_dropout(6, 4, 0.5, "discard", 0.5, 42)
    assert set(c.values()) == {"lost"}


# -- experiments --------------------------------------------------------------


def test_experiment_oracle_deviation_zero():
    report = run_experiment(ExperimentConfig(**BASE))
    for record in report.records:
        if record["kind"] == "round":
            assert record["oracle_deviation"] == "0"
            assert record["accepted"] == ["p1", "p2", "p3"]


def test_experiment_message_counts_match_analysis():
    report = run_experiment(ExperimentConfig(**{**BASE, "n": 2, "rounds": 2,
                                                "model_dim": 1}))
    counts = report.round_counts(1, "fedavg")
    assert counts["sp"] == 2 * 2 + 2
    assert counts["csp"] == 2
    assert counts["p1"] == counts["p2"] == 2
    # final round: no participant release, the requester gets the model
    final = report.round_counts(2, "fedavg")
    assert final["requester"] == 1
    assert final["p1"] == final["p2"] == 1


def test_experiment_determinism_same_seed():
    r1 = run_experiment(ExperimentConfig(**BASE))
    r2 = run_experiment(ExperimentConfig(**BASE))
    assert r1.to_jsonl() == r2.to_jsonl()
    r3 = run_experiment(ExperimentConfig(**{**BASE, "seed": 8}))
    assert r1.to_jsonl() != r3.to_jsonl()


def test_transport_equivalence():
    memory = run_experiment(ExperimentConfig(**BASE))
    sockets = run_experiment(ExperimentConfig(**{**BASE, "transport": "socket"}))
    strip = lambda report: [r for r in report.records if r["kind"] != "config"]
    assert strip(memory) == strip(sockets)
    assert memory.final_weights == sockets.final_weights


def test_dropout_discard_skips_participants():
    cfg = ExperimentConfig(**{**BASE, "dropout_rate": 0.4, "seed": 3})
    report = run_experiment(cfg)
    rounds = [r for r in report.records if r["kind"] == "round"]
    dropped = {(r["round"], p) for r in report.records if r["kind"] == "dropout"
               for p in [r["participant"]]}
    assert dropped  # the seed produces at least one drop
    for r in rounds:
        assert r["oracle_deviation"] == "0"
        for participant in ("p1", "p2", "p3"):
            if (r["round"], participant) in dropped:
                assert participant not in r["accepted"]


def test_dropout_retransmit_folds_late_models():
    cfg = ExperimentConfig(**{**BASE, "dropout_rate": 0.4, "seed": 3,
                              "strategy": "retransmit",
                              "retransmit_success_rate": 1.0})
    report = run_experiment(cfg)
    folded = [r["folded"] for r in report.records if r["kind"] == "round"]
    assert any(folded)  # same seed's drops now arrive late and fold in
    for r in report.records:
        if r["kind"] == "round":
            assert r["oracle_deviation"] == "0"
            assert not r["discarded"]


def test_full_dropout_aborts_with_record():
    cfg = ExperimentConfig(**{**BASE, "dropout_rate": 1.0})
    with pytest.raises(ExperimentAborted) as info:
        run_experiment(cfg)
    assert info.value.record["kind"] == "failure"
    assert info.value.record["error"] == "EmptyRoundError"
    assert info.value.record["round"] == 1


def test_rewards_flow_and_hygiene():
    report = run_experiment(ExperimentConfig(**REWARD_BASE))
    assert hygiene_violations(report.decrypt_log) == []
    assert not any(role == "sp" for role, _ in report.decrypt_log)
    csp_labels = {label for role, label in report.decrypt_log if role == "csp"}
    assert csp_labels <= {"masked-div-operand", "masked-mul-operand"}
    assert sum(1 for role, _ in report.decrypt_log if role == "csp") > 0
    # budget conserved each round
    for round_index in (1, 2):
        total = sum(
            Fraction(r["mu_decrypted"]) for r in report.reward_table
            if r["round"] == round_index
        )
        n = REWARD_BASE["n"]
        assert Fraction(36) * (1 - n * Fraction(10, 10 ** 6)) < total <= 36
    # no reward pair ever reaches the requester
    assert all(
        role != "requester"
        for (_, phase, role) in report.message_counts
        if phase == "reward"
    )


def test_reward_schedule_final_only():
    cfg = ExperimentConfig(**{**REWARD_BASE, "reward_schedule": "final"})
    report = run_experiment(cfg)
    rounds_with_rewards = {r["round"] for r in report.reward_table}
    assert rounds_with_rewards == {cfg.rounds}


def test_experiment_with_csv_datasets(tmp_path):
    rng = random.Random(17)
    for i in range(1, 3):
        rows = ["f1,f2,y"]
        for _ in range(rng.randrange(4, 8)):
            f1, f2 = rng.uniform(-1, 1), rng.uniform(-1, 1)
            rows.append(f"{f1},{f2},{0.3 * f1 - 0.2 * f2}")
        (tmp_path / f"participant_{i}.csv").write_text("\n".join(rows) + "\n")
    (tmp_path / "eval.csv").write_text("f1,f2,y\n0.5,0.5,0.05\n1.0,-1.0,0.5\n")
    cfg = ExperimentConfig(**{**BASE, "n": 2, "data_dir": str(tmp_path)})
    report = run_experiment(cfg)
    for record in report.records:
        if record["kind"] == "round":
            assert record["oracle_deviation"] == "0"
    # dimension mismatch is a config error
    bad = ExperimentConfig(**{**BASE, "n": 2, "model_dim": 3,
                              "data_dir": str(tmp_path)})
    with pytest.raises(ConfigError):
        run_experiment(bad)


def test_key_possession_matches_deployment():
    from cipherfed.sim.actors import (
        CspActor, KgcActor, ParticipantActor, RequesterActor, SpActor,
        ROLE_CSP, ROLE_KGC, ROLE_REQUESTER, ROLE_SP, participant_role,
    )
    from cipherfed.sim.engine import Engine, Instrumentation, MemoryTransport

    cfg = ExperimentConfig(**BASE)
    from cipherfed.sim.experiment import synthetic_task

    datasets, _ = synthetic_task(cfg)
    kgc = KgcActor(cfg, random.Random(1))
    sp = SpActor(cfg, random.Random(2))
    csp = CspActor(cfg, random.Random(3))
    requester = RequesterActor(cfg, random.Random(4))
    participants = {
        participant_role(i): ParticipantActor(i, cfg, datasets[i - 1], {},
                                              random.Random(10 + i))
        for i in range(1, cfg.n + 1)
    }
    engine = Engine({ROLE_KGC: kgc, ROLE_SP: sp, ROLE_CSP: csp,
                     ROLE_REQUESTER: requester, **participants},
                    Instrumentation(), MemoryTransport())
    kgc.bootstrap(engine)
    engine.run()
    assert kgc.sk is not None
    assert sp.server_share.pairing_id == "server" and sp.server_share.index == 2
    assert sp.release_share.pairing_id == "participant" and sp.release_share.index == 2
    assert csp.helper_share.pairing_id == "server" and csp.helper_share.index == 1
    for actor in participants.values():
        assert actor.member_share.pairing_id == "participant"
        assert actor.member_share.index == 1
    assert requester.member_share.pairing_id == "participant"
    shares = {sp.server_share.value, sp.release_share.value,
              csp.helper_share.value}
    assert kgc.sk.lam not in shares  # nobody holds the full exponent


def test_wall_clock_ticker_monotone():
    import time

    ticker = WallClockTicker(seconds_per_tick=0.01)
    first = ticker.now()
    time.sleep(0.03)
    assert ticker.now() > first
