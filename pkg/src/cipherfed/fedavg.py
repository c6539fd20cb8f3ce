"""Encrypted federated averaging with an exact plaintext oracle.

Participants train locally, encode each weight as a signed fixed-point
integer, and upload the pair (enc(delta_i * w_ij), enc(delta_i)) where
delta_i is the participant's sample count. The server sums both streams
homomorphically and one secure division per component produces the
encrypted weighted average; nobody but the participants (and, at the final
round, the requester) ever sees a plaintext weight.

Secure division needs strictly positive operands, so every weight is
shifted by a public offset C before weighting; averaging is affine, so
subtracting C after decryption undoes the shift exactly. The numerator
carries scale L and the denominator scale 0, which makes the quotient's
scale 2L; recipients floor back to the 10^-L grid, and that floored grid
value provably equals ``fedavg_plain`` applied to the same fixed-point
quantized models (the 10^L factors cancel inside a nested floor).

``run_training`` and ``run_training_plain`` run the encrypted and plaintext
pipelines from one seed; with that quantization discipline their round
averages are identical rationals, which is what the end-to-end acceptance
check exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from random import Random

import numpy as np

from .errors import DomainError, EmptyRoundError, ShapeError
from .fixedpoint import FixedPointCodec, exact_floor_scaled, to_signed
from .paillier import (
    Ciphertext,
    KeyShare,
    PartialDecryption,
    PublicKey,
    add_encrypted,
    encrypt,
    partial_decrypt,
    threshold_decrypt,
)
from .protocols import MaskingParams, secure_div

RELEASED_AVERAGE_LABEL = "released-average"
FINAL_MODEL_LABEL = "final-model"


@dataclass(frozen=True)
class ModelVector:
    """A participant's trained weights plus its data count delta = |D_i|."""

    weights: tuple
    delta: int

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        if self.delta < 1:
            raise DomainError("delta must be a positive sample count")

    @property
    def dim(self):
        return len(self.weights)


@dataclass(frozen=True)
class TrainConfig:
    """Learning rate, minibatch size, and local epoch count."""

    eta: float = 0.001
    batch_size: int = 50
    epochs: int = 30

    def __post_init__(self):
        if self.eta <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise DomainError("need eta > 0, batch_size >= 1, epochs >= 1")


@dataclass(frozen=True)
class EncryptedSubmission:
    """One participant's upload for one round.

    ``enc_weighted`` holds enc(delta * [w_j + C]) at scale L per component,
    ``enc_delta`` holds enc(delta) at scale 0, and ``enc_model`` (present
    when rewards are on) holds the unweighted enc([w_j + C]) vector.
    """

    participant_id: str
    round_index: int
    enc_weighted: tuple
    enc_delta: Ciphertext
    enc_model: tuple = None

    @property
    def dim(self):
        return len(self.enc_weighted)


@dataclass
class RoundState:
    """Server-side aggregation state: encrypted sums over the accepted set."""

    round_index: int
    m_sum: list
    d_sum: Ciphertext
    accepted: list
    released: bool = False

    @classmethod
    def from_submissions(cls, pk: PublicKey, subs, round_index):
        subs = list(subs)
        if not subs:
            raise EmptyRoundError(f"round {round_index} has no accepted submissions")
        dim = subs[0].dim
        if any(s.dim != dim for s in subs):
            raise ShapeError("submissions disagree on model dimension")
        m_sum = list(subs[0].enc_weighted)
        d_sum = subs[0].enc_delta
        for sub in subs[1:]:
            m_sum = [add_encrypted(pk, a, b) for a, b in zip(m_sum, sub.enc_weighted)]
            d_sum = add_encrypted(pk, d_sum, sub.enc_delta)
        return cls(round_index, m_sum, d_sum, subs)

    def fold_in(self, pk: PublicKey, sub: EncryptedSubmission):
        """Absorb one more submission into the running encrypted sums."""
        if sub.dim != len(self.m_sum):
            raise ShapeError("submission dimension does not match the round")
        self.m_sum = [
            add_encrypted(pk, a, b) for a, b in zip(self.m_sum, sub.enc_weighted)
        ]
        self.d_sum = add_encrypted(pk, self.d_sum, sub.enc_delta)
        self.accepted.append(sub)


@dataclass(frozen=True)
class AveragingConfig:
    """Fixed-point codec, masking parameters, and the positivity offset C.

    C must sit on the 10^-L grid and exceed every |weight| so the shifted
    values stay positive. The default 2^(kappa-2) / 10^L follows the
    division protocol's headroom convention but caps the total data count
    very low; experiment configs normally set a small explicit C.
    """

    codec: FixedPointCodec
    params: MaskingParams
    offset: Fraction = None

    def __post_init__(self):
        if self.codec.rounding_exp != self.params.rounding_exp:
            raise DomainError("codec and masking params disagree on L")
        if self.offset is None:
            object.__setattr__(
                self,
                "offset",
                Fraction(2 ** (self.codec.kappa - 2), 10 ** self.codec.rounding_exp),
            )
        offset_raw = Fraction(self.offset) * 10 ** self.codec.rounding_exp
        if offset_raw.denominator != 1 or offset_raw < 0:
            raise DomainError("offset must be nonnegative with at most L decimals")
        object.__setattr__(self, "offset_raw", int(offset_raw))

    @property
    def rounding_exp(self):
        return self.codec.rounding_exp


def shifted_weight_raw(value, avg_cfg: AveragingConfig):
    """floor((value + C) * 10^L), validated positive and within 2^kappa."""
    raw = exact_floor_scaled(value, avg_cfg.rounding_exp) + avg_cfg.offset_raw
    if raw <= 0:
        raise DomainError(f"weight {value} + offset is not positive; raise C")
    if raw >= 2 ** avg_cfg.codec.kappa:
        raise DomainError(f"weight {value} exceeds the 2^kappa magnitude bound")
    return raw


def quantize_weight(value, rounding_exp):
    """The plaintext twin of encoding: floor(value * 10^L) / 10^L."""
    return Fraction(exact_floor_scaled(value, rounding_exp), 10 ** rounding_exp)


def make_submission(pk: PublicKey, model: ModelVector, participant_id,
                    round_index, avg_cfg: AveragingConfig, rng: Random,
                    include_model=False):
    """Encrypt one participant's weighted model for upload."""
    scale = avg_cfg.rounding_exp
    raws = [shifted_weight_raw(w, avg_cfg) for w in model.weights]
    enc_weighted = tuple(
        encrypt(pk, model.delta * raw % pk.n, rng, scale=scale) for raw in raws
    )
    enc_model = None
    if include_model:
        enc_model = tuple(encrypt(pk, raw, rng, scale=scale) for raw in raws)
    return EncryptedSubmission(
        participant_id=participant_id,
        round_index=round_index,
        enc_weighted=enc_weighted,
        enc_delta=encrypt(pk, model.delta, rng, scale=0),
        enc_model=enc_model,
    )


def divide_state(pk: PublicKey, state: RoundState, sp_share: KeyShare,
                 csp_share: KeyShare, avg_cfg: AveragingConfig, rng: Random,
                 exchange=None, on_csp_decrypt=None):
    """One secure division per component: enc(sum)/enc(count) at scale 2L."""
    return [
        secure_div(pk, m_j, state.d_sum, sp_share, csp_share, avg_cfg.params,
                   rng, exchange=exchange, on_csp_decrypt=on_csp_decrypt)
        for m_j in state.m_sum
    ]


def encrypted_average_round(pk: PublicKey, subs, sp_share: KeyShare,
                            csp_share: KeyShare, avg_cfg: AveragingConfig,
                            rng: Random, round_index=1, exchange=None,
                            on_csp_decrypt=None):
    """Aggregate submissions and produce the encrypted average vector."""
    state = RoundState.from_submissions(pk, subs, round_index)
    return divide_state(pk, state, sp_share, csp_share, avg_cfg, rng,
                        exchange=exchange, on_csp_decrypt=on_csp_decrypt)


def release_average(pk: PublicKey, enc_avg, sp_participant_share: KeyShare):
    """Pair each component with the server's partial decryption.

    The pairs let any holder of the participant-side share finish the
    decryption; the server's partial alone recovers nothing.
    """
    return [(c, partial_decrypt(sp_participant_share, pk, c)) for c in enc_avg]


def decrypt_released_average(pairs, participant_share: KeyShare,
                             pk: PublicKey, avg_cfg: AveragingConfig,
                             on_decrypt=None, label=RELEASED_AVERAGE_LABEL):
    """Finish decryption, floor to the 10^-L grid, and remove the offset."""
    ten_l = 10 ** avg_cfg.rounding_exp
    out = []
    for cipher, sp_partial in pairs:
        if on_decrypt is not None:
            on_decrypt(label)
        raw = threshold_decrypt(
            partial_decrypt(participant_share, pk, cipher), sp_partial, pk
        )
        signed = to_signed(raw, pk.n)
        if cipher.scale >= avg_cfg.rounding_exp:
            grid = signed // 10 ** (cipher.scale - avg_cfg.rounding_exp)
        else:
            grid = signed * 10 ** (avg_cfg.rounding_exp - cipher.scale)
        out.append(Fraction(grid - avg_cfg.offset_raw, ten_l))
    return out


# ---------------------------------------------------------------------------
# Plaintext oracle and reference trainer
# ---------------------------------------------------------------------------


def fedavg_plain(models, rounding_exp):
    """Exact weighted mean of models, floored to the 10^-L grid.

    Computed in unbounded rational arithmetic; this is the oracle the
    encrypted pipeline is verified against.
    """
    models = list(models)
    if not models:
        raise DomainError("cannot average zero models")
    dim = models[0].dim
    if any(m.dim != dim for m in models):
        raise ShapeError("models disagree on dimension")
    total = sum(m.delta for m in models)
    ten_l = 10 ** rounding_exp
    out = []
    for j in range(dim):
        mean = sum(m.delta * Fraction(m.weights[j]) for m in models) / total
        out.append(Fraction(exact_floor_scaled(mean, rounding_exp), ten_l))
    return out


def load_dataset_csv(path):
    """Load one participant's samples from CSV.

    Expects a header row, one row per sample, features in the leading
    columns and the target in the last column. Returns (features, targets)
    as float arrays.
    """
    import warnings

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # empty input warns before we raise
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (ValueError, OSError) as exc:
        raise DomainError(f"cannot parse dataset {path}: {exc}") from exc
    if data.size == 0:
        raise DomainError(f"dataset {path} has no samples")
    if data.shape[1] < 2:
        raise ShapeError(
            f"dataset {path} needs at least one feature column plus the target"
        )
    return data[:, :-1], data[:, -1]


def linreg_loss(features, targets, weights):
    """Mean squared-error/2 of the linear model on the given samples."""
    residual = features @ weights - targets
    return float(residual @ residual) / (2 * len(targets))


def linreg_gradient(features, targets, weights):
    """Gradient of :func:`linreg_loss` in the weights."""
    return features.T @ (features @ weights - targets) / len(targets)


def local_train(features, targets, init, cfg: TrainConfig, rng: Random):
    """Minibatch gradient descent on the least-squares loss.

    Batch order is drawn from ``rng``, so training is deterministic per
    seed. This is the built-in reference trainer; anything with the same
    signature can replace it.
    """
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if features.ndim != 2 or features.shape[0] != targets.shape[0]:
        raise ShapeError("features and targets disagree on sample count")
    weights = np.array(init, dtype=float)
    if weights.shape != (features.shape[1],):
        raise ShapeError("initial weights do not match the feature dimension")
    indices = list(range(features.shape[0]))
    for _ in range(cfg.epochs):
        rng.shuffle(indices)
        for start in range(0, len(indices), cfg.batch_size):
            batch = indices[start:start + cfg.batch_size]
            weights = weights - cfg.eta * linreg_gradient(
                features[batch], targets[batch], weights
            )
    return weights


# ---------------------------------------------------------------------------
# Whole-pipeline drivers (library form; the simulator is in cipherfed.sim)
# ---------------------------------------------------------------------------


@dataclass
class TrainingResult:
    final_weights: list
    final_cipher: list
    round_averages: list = field(default_factory=list)


def _train_rng(seed, participant_index, round_index):
    return Random(f"{seed}/train/{participant_index}/{round_index}")


def _quantized_model(weights, delta, rounding_exp):
    return ModelVector(
        tuple(quantize_weight(float(w), rounding_exp) for w in weights), delta
    )


def run_training(pk: PublicKey, datasets, dim, rounds, train_cfg: TrainConfig,
                 avg_cfg: AveragingConfig, sp_share: KeyShare,
                 csp_share: KeyShare, sp_participant_share: KeyShare,
                 participant_share: KeyShare, seed, trainer=local_train,
                 exchange=None):
    """Run the full encrypted train/average loop for ``rounds`` iterations.

    ``datasets`` is a list of (features, targets) pairs, one per
    participant; delta_i is the sample count. Intermediate averages are
    released to participants; the final round's average goes only to the
    requester, whose decryption reuses the participant-side share it was
    routed at setup.
    """
    if rounds < 1:
        raise DomainError("need at least one round")
    enc_rng = Random(f"{seed}/enc")
    current = [Fraction(0)] * dim
    result = TrainingResult(final_weights=None, final_cipher=None)
    for round_index in range(1, rounds + 1):
        subs = []
        for i, (features, targets) in enumerate(datasets):
            trained = trainer(
                features, targets, [float(w) for w in current], train_cfg,
                _train_rng(seed, i, round_index),
            )
            model = _quantized_model(trained, len(targets), avg_cfg.rounding_exp)
            subs.append(
                make_submission(pk, model, f"p{i + 1}", round_index, avg_cfg, enc_rng)
            )
        enc_avg = encrypted_average_round(
            pk, subs, sp_share, csp_share, avg_cfg, enc_rng,
            round_index=round_index, exchange=exchange,
        )
        pairs = release_average(pk, enc_avg, sp_participant_share)
        decoded = decrypt_released_average(pairs, participant_share, pk, avg_cfg)
        result.round_averages.append(decoded)
        if round_index < rounds:
            current = decoded
        else:
            result.final_cipher = enc_avg
            result.final_weights = decoded
    return result


def run_training_plain(datasets, dim, rounds, train_cfg: TrainConfig,
                       rounding_exp, seed, trainer=local_train):
    """The plaintext mirror of :func:`run_training` with identical seeds.

    Models are quantized to the same 10^-L grid the encoder uses, so the
    round averages are the same rationals the encrypted pipeline yields.
    """
    current = [Fraction(0)] * dim
    result = TrainingResult(final_weights=None, final_cipher=None)
    for round_index in range(1, rounds + 1):
        models = []
        for i, (features, targets) in enumerate(datasets):
            trained = trainer(
                features, targets, [float(w) for w in current], train_cfg,
                _train_rng(seed, i, round_index),
            )
            models.append(_quantized_model(trained, len(targets), rounding_exp))
        average = fedavg_plain(models, rounding_exp)
        result.round_averages.append(average)
        if round_index < rounds:
            current = average
        else:
            result.final_weights = average
    return result
