import random
from fractions import Fraction

import pytest

from cipherfed import fedavg, paillier, rewards
from cipherfed.errors import DomainError, LedgerError
from cipherfed.fixedpoint import FixedPointCodec, exact_floor_scaled
from cipherfed.protocols import MaskingParams

L = 6
BUDGET = Fraction(36)
CFG = rewards.RewardConfig(BUDGET, L)


def make_avg_cfg(pk):
    return fedavg.AveragingConfig(
        FixedPointCodec(L, 100, pk.n),
        MaskingParams(sigma=80, kappa=100, rounding_exp=L),
        offset=Fraction(4),
    )


def random_models(rng, n, dim):
    return [
        fedavg.ModelVector(
            tuple(rng.randrange(-1000, 1001) / 1000 for _ in range(dim)),
            rng.randrange(1, 15),
        )
        for _ in range(n)
    ]


def encrypt_instance(keys, models, rng, budget=BUDGET):
    """Offset-shifted ciphertext inputs exactly as submissions carry them."""
    pk = keys[0]
    avg_cfg = make_avg_cfg(pk)
    avg = fedavg.fedavg_plain(models, L)
    enc_models = [
        tuple(
            paillier.encrypt(pk, fedavg.shifted_weight_raw(w, avg_cfg), rng,
                             scale=L)
            for w in m.weights
        )
        for m in models
    ]
    enc_deltas = [paillier.encrypt(pk, m.delta, rng) for m in models]
    enc_avg = tuple(
        paillier.encrypt(
            pk, (exact_floor_scaled(a, L) + avg_cfg.offset_raw) % pk.n, rng,
            scale=L,
        )
        for a in avg
    )
    enc_budget = paillier.encrypt(pk, int(budget * 10 ** L), rng, scale=L)
    return avg_cfg, avg, enc_models, enc_deltas, enc_avg, enc_budget


def decrypt_all(keys, enc_mus):
    pk, sk = keys[0], keys[1]
    member, release = keys[3]
    return [
        rewards.decrypt_reward(rewards.release_reward(pk, c, release),
                               member, pk)
        for c in enc_mus
    ]


def run_encrypted(keys, models, rng, budget=BUDGET):
    pk, _, (helper, server), _ = keys
    avg_cfg, avg, enc_models, enc_deltas, enc_avg, enc_budget = encrypt_instance(
        keys, models, rng, budget
    )
    enc_mus = rewards.encrypted_rewards(
        pk, enc_models, enc_deltas, enc_avg, enc_budget, server, helper,
        avg_cfg.params, rng,
    )
    return decrypt_all(keys, enc_mus), avg


# -- plaintext oracle ---------------------------------------------------------


def test_symmetric_pair_splits_evenly():
    models = [fedavg.ModelVector((1.0, 2.0), 5), fedavg.ModelVector((3.0, 4.0), 5)]
    avg = fedavg.fedavg_plain(models, L)
    plain = rewards.reward_plain(models, avg, CFG)
    assert plain.mu == (BUDGET / 2, BUDGET / 2)
    assert sum(plain.mu) == BUDGET


def test_equal_models_more_data_earns_more():
    models = [
        fedavg.ModelVector((0.5,), 9),
        fedavg.ModelVector((0.5,), 3),
        fedavg.ModelVector((-0.25,), 4),
    ]
    avg = fedavg.fedavg_plain(models, L)
    plain = rewards.reward_plain(models, avg, CFG)
    assert plain.distances[0] == plain.distances[1]
    assert plain.mu[0] > plain.mu[1]
    assert sum(plain.mu) == BUDGET


def test_budget_exact_in_rationals():
    rng = random.Random(1)
    for _ in range(50):
        models = random_models(rng, rng.randrange(2, 8), rng.randrange(1, 4))
        avg = fedavg.fedavg_plain(models, L)
        plain = rewards.reward_plain(models, avg, CFG)
        assert sum(plain.mu) == BUDGET


def test_closer_model_never_earns_less():
    rng = random.Random(2)
    for _ in range(30):
        models = random_models(rng, 4, 2)
        avg = [Fraction(0)] * 2
        base = rewards.reward_plain(models, avg, CFG)
        # move model 0 toward the average: its distance shrinks
        closer = [
            fedavg.ModelVector(tuple(w / 2 for w in models[0].weights),
                               models[0].delta)
        ] + models[1:]
        moved = rewards.reward_plain(closer, avg, CFG)
        if moved.distances[0] <= base.distances[0]:
            assert moved.w[0] >= base.w[0]


def test_all_equal_models_fall_back_to_data_shares():
    models = [fedavg.ModelVector((0.5,), 3), fedavg.ModelVector((0.5,), 1)]
    avg = [Fraction(1, 2)]
    plain = rewards.reward_plain(models, avg, CFG)
    assert plain.w == (0, 0)
    assert plain.mu == (BUDGET * Fraction(3, 4), BUDGET * Fraction(1, 4))


def test_reward_config_validation():
    with pytest.raises(DomainError):
        rewards.RewardConfig(Fraction(-1), L)
    with pytest.raises(DomainError):
        rewards.RewardConfig(Fraction(1, 3), L)  # off the 10^-L grid
    assert rewards.RewardConfig(Fraction(36), L).epsilon == Fraction(1, 10 ** L)


# -- encrypted pipeline -------------------------------------------------------


def test_single_participant_takes_whole_budget(keys256):
    rng = random.Random(3)
    mus, _ = run_encrypted(keys256, random_models(rng, 1, 2), rng)
    assert mus[0] == BUDGET


def test_symmetric_pair_encrypted(keys256):
    rng = random.Random(4)
    models = [fedavg.ModelVector((1.0, 2.0), 5), fedavg.ModelVector((3.0, 4.0), 5)]
    mus, _ = run_encrypted(keys256, models, rng)
    tolerance = Fraction(10, 10 ** L) * BUDGET * 2
    for mu in mus:
        assert abs(mu - BUDGET / 2) <= tolerance
    assert sum(mus) <= BUDGET


def test_random_instances_match_oracle(keys256):
    rng = random.Random(5)
    for _ in range(5):
        n = rng.randrange(2, 6)
        models = random_models(rng, n, rng.randrange(1, 4))
        mus, avg = run_encrypted(keys256, models, rng)
        plain = rewards.reward_plain(models, avg, CFG)
        tolerance = Fraction(10, 10 ** L) * BUDGET * n
        for got, want in zip(mus, plain.mu):
            assert abs(got - want) <= tolerance
        assert BUDGET - n * Fraction(10, 10 ** L) * BUDGET <= sum(mus) <= BUDGET


def test_ranking_preserved(keys256):
    rng = random.Random(6)
    models = random_models(rng, 5, 2)
    mus, avg = run_encrypted(keys256, models, rng)
    plain = rewards.reward_plain(models, avg, CFG)
    got_order = sorted(range(5), key=lambda i: mus[i])
    want_order = sorted(range(5), key=lambda i: plain.mu[i])
    assert got_order == want_order


def test_ledger_blocks_overdraw(keys256):
    pk, _, _, (member, release) = keys256
    rng = random.Random(7)
    enc_mus = [paillier.encrypt(pk, 1, rng, scale=L)]
    ledger = rewards.BudgetLedger(prepaid=BUDGET)
    rewards.release_rewards(pk, enc_mus, release, ledger, BUDGET)
    assert ledger.remaining == 0
    with pytest.raises(LedgerError):
        rewards.release_rewards(pk, enc_mus, release, ledger, BUDGET)


def test_ledger_rejects_negative():
    ledger = rewards.BudgetLedger(prepaid=Fraction(5))
    with pytest.raises(DomainError):
        ledger.commit(-1)
