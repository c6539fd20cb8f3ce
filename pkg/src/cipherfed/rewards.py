"""Posted-pricing reward distribution, plaintext oracle and encrypted form.

Participant i's model weight and reward for a round with budget b are

    w_i  = (delta_i / sum delta) * (sum_k d_k) / (d_i + eps)
    mu_i = b * w_i / sum_k w_k

where d_i is the squared distance between participant i's model and the
round's average model, summed over components, and eps = 10^-L only guards
the inner division. Closer models and larger data counts earn more, and the
rewards sum exactly to the budget.

The encrypted form evaluates the same formula on ciphertexts with one
secure multiplication per component plus three per participant and two
secure divisions per participant; the servers never see a distance, weight,
or reward. Degenerate instance where every model equals the average: every
d_i is zero, so all w_i vanish and the mu quotient is 0/0. The oracle
resolves it as the symmetric eps -> 0 limit (payout proportional to data
counts); encrypted evaluation cannot (the final divisor encrypts zero), so
the single-participant round short-circuits to the whole budget and the
n >= 2 all-equal case aborts inside the division protocol.

The requester prepays; a ledger guards releases so payouts never exceed the
prepaid amount.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from random import Random

from .errors import DomainError, LedgerError, ScaleMismatchError, ShapeError
from .fixedpoint import scale_up, to_signed
from .paillier import (
    Ciphertext,
    KeyShare,
    PublicKey,
    add_encrypted,
    encrypt,
    partial_decrypt,
    sub_encrypted,
    threshold_decrypt,
)
from .protocols import (
    MaskingParams,
    SecureDivSession,
    SecureMulSession,
    secure_div_respond,
    secure_mul_respond,
)

OWN_REWARD_LABEL = "own-reward"


@dataclass(frozen=True)
class RewardConfig:
    """Per-round budget and the rounding factor shared with the codec."""

    budget: Fraction
    rounding_exp: int = 6

    def __post_init__(self):
        object.__setattr__(self, "budget", Fraction(self.budget))
        if self.budget <= 0:
            raise DomainError("budget must be positive")
        raw = self.budget * 10 ** self.rounding_exp
        if raw.denominator != 1:
            raise DomainError("budget must sit on the 10^-L grid")
        object.__setattr__(self, "budget_raw", int(raw))

    @property
    def epsilon(self):
        return Fraction(1, 10 ** self.rounding_exp)


@dataclass(frozen=True)
class PlainRewards:
    """Oracle output: model weights, rewards, and squared distances."""

    w: tuple
    mu: tuple
    distances: tuple


def reward_plain(models, avg, cfg: RewardConfig):
    """Exact rational evaluation of the reward formula.

    ``avg`` is the average model the round released (pass the decrypted
    value to compare against the encrypted pipeline). When all distances
    vanish the payout falls back to the data-proportional limit.
    """
    models = list(models)
    if not models:
        raise DomainError("no models to reward")
    dim = models[0].dim
    if any(m.dim != dim for m in models) or len(avg) != dim:
        raise ShapeError("model/average dimensions disagree")
    avg = [Fraction(a) for a in avg]
    total_delta = sum(m.delta for m in models)
    distances = [
        sum((Fraction(w) - a) ** 2 for w, a in zip(m.weights, avg))
        for m in models
    ]
    total_d = sum(distances)
    weights = [
        Fraction(m.delta, total_delta) * total_d / (d + cfg.epsilon)
        for m, d in zip(models, distances)
    ]
    total_w = sum(weights)
    if total_w == 0:
        mu = [cfg.budget * Fraction(m.delta, total_delta) for m in models]
    else:
        mu = [cfg.budget * w / total_w for w in weights]
    return PlainRewards(tuple(weights), tuple(mu), tuple(distances))


def reward_flow(pk: PublicKey, enc_models, enc_deltas, enc_avg,
                enc_budget: Ciphertext, sp_share: KeyShare,
                params: MaskingParams, rng: Random):
    """Server-side reward pipeline as a generator of protocol round-trips.

    Yields ``("div" | "mul", request)`` for every interactive step and
    expects the matching response to be sent back in; returns the list of
    encrypted rewards. :func:`encrypted_rewards` drives it in-process and
    the simulator drives it over wire messages, so both paths execute the
    identical pipeline.

    ``enc_models`` holds one ciphertext vector per participant (all at one
    scale), ``enc_avg`` the released average vector, ``enc_deltas`` the
    encrypted data counts (scale 0), and ``enc_budget`` the budget at scale
    L. A shared additive offset on models and average cancels in the
    differences, so offset-shifted inputs work unchanged.
    """
    n = len(enc_models)
    if n == 0 or len(enc_deltas) != n:
        raise ShapeError("need one model vector and one delta per participant")
    dim = len(enc_avg)
    if any(len(v) != dim for v in enc_models):
        raise ShapeError("model vectors disagree with the average dimension")
    ell = params.rounding_exp
    if enc_budget.scale != ell:
        raise ScaleMismatchError("budget ciphertext must carry scale L")

    if n == 1:
        # sole participant takes the whole budget (0/0 limit of the formula)
        return [add_encrypted(pk, enc_budget, encrypt(pk, 0, rng, scale=ell))]

    def div(cx, cy):
        session, request = SecureDivSession.start(pk, cx, cy, sp_share, params, rng)
        response = yield ("div", request)
        return session.finish(response)

    def mul(cx, cy):
        session, request = SecureMulSession.start(pk, cx, cy, sp_share, params, rng)
        response = yield ("mul", request)
        return session.finish(response)

    model_scale = max(max(v.scale for vec in enc_models for v in vec),
                      max(c.scale for c in enc_avg))
    avg_aligned = [scale_up(pk, c, model_scale - c.scale) for c in enc_avg]

    # squared distance to the average, per participant
    sq_dist = []
    for vec in enc_models:
        total = None
        for cw, ca in zip(vec, avg_aligned):
            diff = sub_encrypted(pk, scale_up(pk, cw, model_scale - cw.scale), ca)
            square = yield from mul(diff, diff)
            total = square if total is None else add_encrypted(pk, total, square)
        sq_dist.append(total)

    sq_scale = 2 * model_scale
    if sq_scale < ell:
        raise ScaleMismatchError(
            "model scale too coarse to place the 10^-L division guard"
        )
    eps_unit = encrypt(pk, 10 ** (sq_scale - ell), rng, scale=sq_scale)
    guarded = [add_encrypted(pk, d, eps_unit) for d in sq_dist]

    total_delta = enc_deltas[0]
    for c in enc_deltas[1:]:
        total_delta = add_encrypted(pk, total_delta, c)
    total_dist = sq_dist[0]
    for c in sq_dist[1:]:
        total_dist = add_encrypted(pk, total_dist, c)

    w = []
    for enc_delta, d_guarded in zip(enc_deltas, guarded):
        w_down = yield from mul(total_delta, d_guarded)
        w_up = yield from mul(enc_delta, total_dist)
        w.append((yield from div(w_up, w_down)))

    budget_w = []
    for w_i in w:
        budget_w.append((yield from mul(enc_budget, w_i)))

    w_total = w[0]
    for w_i in w[1:]:
        w_total = add_encrypted(pk, w_total, w_i)
    w_total = scale_up(pk, w_total, ell)

    out = []
    for bw in budget_w:
        out.append((yield from div(bw, w_total)))
    return out


def encrypted_rewards(pk: PublicKey, enc_models, enc_deltas, enc_avg,
                      enc_budget: Ciphertext, sp_share: KeyShare,
                      csp_share: KeyShare, params: MaskingParams,
                      rng: Random, exchange_div=None, exchange_mul=None,
                      on_csp_decrypt=None):
    """Evaluate the reward formula on ciphertexts (one-call form).

    Drives :func:`reward_flow`, answering each protocol round-trip either
    through the optional exchange callables or by running the helper
    server's step in-process. Returns one ciphertext per participant
    encrypting mu_i at scale L.
    """
    flow = reward_flow(pk, enc_models, enc_deltas, enc_avg, enc_budget,
                       sp_share, params, rng)
    response = None
    while True:
        try:
            kind, request = flow.send(response)
        except StopIteration as stop:
            return stop.value
        if kind == "div":
            if exchange_div is not None:
                response = exchange_div(request)
            else:
                response = secure_div_respond(pk, csp_share, params, request,
                                              rng, on_decrypt=on_csp_decrypt)
        else:
            if exchange_mul is not None:
                response = exchange_mul(request)
            else:
                response = secure_mul_respond(pk, csp_share, request, rng,
                                              on_decrypt=on_csp_decrypt)


@dataclass
class BudgetLedger:
    """Prepaid funds at the server; releases commit against it."""

    prepaid: Fraction
    committed: Fraction = field(default_factory=lambda: Fraction(0))

    def commit(self, amount):
        amount = Fraction(amount)
        if amount < 0:
            raise DomainError("cannot commit a negative amount")
        if self.committed + amount > self.prepaid:
            raise LedgerError(
                f"release of {amount} would overdraw the prepaid budget "
                f"({self.committed} of {self.prepaid} already committed)"
            )
        self.committed += amount

    @property
    def remaining(self):
        return self.prepaid - self.committed


def release_reward(pk: PublicKey, enc_mu: Ciphertext,
                   sp_participant_share: KeyShare):
    """Pair one encrypted reward with the server's partial decryption."""
    return enc_mu, partial_decrypt(sp_participant_share, pk, enc_mu)


def release_rewards(pk: PublicKey, enc_mus, sp_participant_share: KeyShare,
                    ledger: BudgetLedger, round_budget):
    """Release a whole round's rewards, debiting the ledger first.

    The round's budget is fully distributed by construction, so the ledger
    commits the round budget as one unit; an exhausted ledger refuses.
    """
    ledger.commit(round_budget)
    return [release_reward(pk, c, sp_participant_share) for c in enc_mus]


def decrypt_reward(pair, participant_share: KeyShare, pk: PublicKey,
                   on_decrypt=None):
    """Participant-side decryption of a released reward, as a Fraction."""
    cipher, sp_partial = pair
    if on_decrypt is not None:
        on_decrypt(OWN_REWARD_LABEL)
    raw = threshold_decrypt(
        partial_decrypt(participant_share, pk, cipher), sp_partial, pk
    )
    return Fraction(to_signed(raw, pk.n), 10 ** cipher.scale)
