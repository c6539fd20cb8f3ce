"""Dropout handling: time-window discard and late-submission repair.

The discard strategy accepts only submissions stamped inside a closed tick
window [t0, t0 + t_delta] and averages whatever arrived; the shift this
inflicts on the global average has the closed form

    delta = sum_dropped delta_i * (avg_all - w_i) / sum_kept delta_i,

which equals the direct difference avg_kept - avg_all identically in
rational arithmetic (both forms are computed and cross-checked here).

The retransmission strategy folds a late submission into the encrypted
running sums with two homomorphic additions and re-runs the division, as
long as the round's average has not yet been released; afterwards the late
model is discarded like any other.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import DiscardedLateError, DomainError
from .fedavg import AveragingConfig, EncryptedSubmission, RoundState, divide_state
from .paillier import KeyShare, PublicKey


@dataclass(frozen=True)
class AcceptanceWindow:
    """Closed tick interval [start, start + length]."""

    start: int
    length: int

    def __post_init__(self):
        if self.length <= 0:
            raise DomainError("window length must be positive")

    @property
    def end(self):
        return self.start + self.length

    def contains(self, tick):
        return self.start <= tick <= self.end


def collect_with_window(stamped_submissions, window: AcceptanceWindow):
    """Partition (tick, submission) pairs into accepted and discarded.

    Discarded submissions keep their stamps so the retransmission strategy
    can account for them later.
    """
    accepted, discarded = [], []
    for tick, sub in stamped_submissions:
        (accepted if window.contains(tick) else discarded).append((tick, sub))
    return accepted, discarded


@dataclass(frozen=True)
class DropoutReport:
    """Per-component shift of the average caused by dropping k models."""

    dropped_ids: tuple
    delta_vector: tuple
    k: int


def discard_delta(models, dropped_ids):
    """Shift of the average when the models at ``dropped_ids`` are discarded.

    Evaluates both the direct difference of averages and the closed form
    and insists they agree exactly; returns the shared value.
    """
    models = list(models)
    n = len(models)
    dropped = set(dropped_ids)
    if not 1 <= len(dropped) < n:
        raise DomainError("must drop between 1 and n-1 models")
    if not dropped <= set(range(n)):
        raise DomainError("dropped ids out of range")
    dim = models[0].dim

    def exact_mean(idx, j):
        total = sum(models[i].delta for i in idx)
        return sum(models[i].delta * Fraction(models[i].weights[j]) for i in idx) / total

    kept = [i for i in range(n) if i not in dropped]
    kept_total = sum(models[i].delta for i in kept)
    delta_vec = []
    for j in range(dim):
        avg_all = exact_mean(range(n), j)
        direct = exact_mean(kept, j) - avg_all
        closed = (
            sum(models[i].delta * (avg_all - Fraction(models[i].weights[j]))
                for i in dropped)
            / kept_total
        )
        if direct != closed:
            raise AssertionError("closed form diverged from the direct difference")
        delta_vec.append(direct)
    return DropoutReport(tuple(sorted(dropped)), tuple(delta_vec), len(dropped))


def retransmit_update(pk: PublicKey, state: RoundState,
                      late: EncryptedSubmission, sp_share: KeyShare,
                      csp_share: KeyShare, avg_cfg: AveragingConfig, rng,
                      exchange=None, on_csp_decrypt=None):
    """Fold one late submission into the round and recompute the average.

    Two homomorphic additions extend the encrypted sums, then one secure
    division per component reruns; only allowed while the round's average
    is still unreleased.
    """
    if state.released:
        raise DiscardedLateError(
            f"round {state.round_index} already released; late submission "
            f"from {late.participant_id} is discarded"
        )
    state.fold_in(pk, late)
    return divide_state(pk, state, sp_share, csp_share, avg_cfg, rng,
                        exchange=exchange, on_csp_decrypt=on_csp_decrypt)
