"""Role actors: key center, aggregation server, compute helper,
participants, requester.

Key possession is exactly the deployment's: participants (and the
requester, for the final model) hold the public key and the
participant-side share; the aggregation server holds both server-side
shares; the compute helper holds the other half of the server split; the
key center holds everything and speaks only at setup.

The aggregation server's multi-step work (window close, batched divisions,
late-submission repair, reward pipeline) is written as generators that
yield ``(destination, message)`` per protocol round-trip; the actor resumes
the generator whenever the helper's response arrives, which keeps the
server strictly message-driven without hand-rolled state tables.
"""

from __future__ import annotations

from fractions import Fraction
from random import Random

from ..dropout import AcceptanceWindow, collect_with_window
from ..errors import CodecError, ProtocolAbortError, StateMachineError
from ..fedavg import (
    AveragingConfig,
    EncryptedSubmission,
    ModelVector,
    RoundState,
    TrainConfig,
    decrypt_released_average,
    local_train,
    make_submission,
    quantize_weight,
    release_average,
    FINAL_MODEL_LABEL,
)
from ..fixedpoint import FixedPointCodec
from ..paillier import (
    Ciphertext,
    KeyShare,
    PartialDecryption,
    PublicKey,
    encrypt,
)
from ..protocols import (
    DivResponse,
    DivRequest,
    MaskingParams,
    MulRequest,
    MulResponse,
    SecureDivSession,
    secure_div_respond,
    secure_mul_respond,
)
from ..rewards import BudgetLedger, decrypt_reward, release_rewards, reward_flow
from . import codec

ROLE_KGC = "kgc"
ROLE_SP = "sp"
ROLE_CSP = "csp"
ROLE_REQUESTER = "requester"

SERVER_SPLIT = "server"
PARTICIPANT_SPLIT = "participant"
_SPLIT_TAGS = {SERVER_SPLIT: 1, PARTICIPANT_SPLIT: 2}
_SPLIT_NAMES = {tag: name for name, tag in _SPLIT_TAGS.items()}


def participant_role(index):
    """1-based participant role name."""
    return f"p{index}"


# ---------------------------------------------------------------------------
# Wire packing helpers
# ---------------------------------------------------------------------------


def pack_key_material(pk: PublicKey, shares):
    fields = [pk.n, len(shares)]
    for share in shares:
        fields += [_SPLIT_TAGS[share.pairing_id], share.index, share.value]
    return fields


def unpack_key_material(msg):
    fields = msg.fields
    if len(fields) < 2 or len(fields) != 2 + 3 * fields[1]:
        raise CodecError("malformed key material")
    pk = PublicKey(fields[0], fields[0] + 1)
    shares = {}
    for i in range(fields[1]):
        tag, index, value = fields[2 + 3 * i:5 + 3 * i]
        name = _SPLIT_NAMES.get(tag)
        if name is None:
            raise CodecError(f"unknown split tag {tag}")
        shares[(name, index)] = KeyShare(value, name, index)
    return pk, shares


def pack_submission(sub: EncryptedSubmission):
    scale = sub.enc_weighted[0].scale
    fields = [sub.dim, scale, sub.enc_delta.value]
    fields += [c.value for c in sub.enc_weighted]
    fields.append(1 if sub.enc_model else 0)
    if sub.enc_model:
        fields += [c.value for c in sub.enc_model]
    return fields


def unpack_submission(msg, participant_id):
    fields = msg.fields
    if len(fields) < 4:
        raise CodecError("malformed submission")
    dim, scale = fields[0], fields[1]
    if dim < 1 or len(fields) < 4 + dim:
        raise CodecError("malformed submission")
    expect = 4 + dim + (dim if fields[3 + dim] else 0)
    if len(fields) != expect:
        raise CodecError("submission field count mismatch")
    weighted = tuple(Ciphertext(v, scale) for v in fields[3:3 + dim])
    model = None
    if fields[3 + dim]:
        model = tuple(Ciphertext(v, scale) for v in fields[4 + dim:])
    return EncryptedSubmission(
        participant_id=participant_id,
        round_index=msg.round_index,
        enc_weighted=weighted,
        enc_delta=Ciphertext(fields[2], 0),
        enc_model=model,
    )


def pack_release(pairs):
    scale = pairs[0][0].scale
    fields = [len(pairs), scale]
    for cipher, partial in pairs:
        fields += [cipher.value, partial.value]
    return fields


def unpack_release(msg, sp_share_id):
    fields = msg.fields
    if len(fields) < 2 or len(fields) != 2 + 2 * fields[0]:
        raise CodecError("malformed release")
    scale = fields[1]
    return [
        (Ciphertext(fields[2 + 2 * i], scale),
         PartialDecryption(fields[3 + 2 * i], sp_share_id))
        for i in range(fields[0])
    ]


def _div_request_wire(request: DivRequest, round_index):
    return codec.WireMessage(
        codec.DIV_REQ, request.session_id, round_index,
        (request.x_masked, request.x_partial, request.y_masked, request.y_partial),
    )


def _mul_request_wire(request: MulRequest, round_index):
    return codec.WireMessage(
        codec.MUL_REQ, request.session_id, round_index,
        (request.x_masked, request.x_partial, request.y_masked, request.y_partial),
    )


# ---------------------------------------------------------------------------
# Actors
# ---------------------------------------------------------------------------


class KgcActor:
    """Trusted key center: generates and distributes, then goes silent."""

    def __init__(self, cfg, rng: Random):
        self.cfg = cfg
        self.rng = rng
        self.pk = None
        self.sk = None

    def bootstrap(self, engine):
        from ..paillier import keygen, split_key

        cfg = self.cfg
        self.pk, self.sk = keygen(
            cfg.zeta, self.rng, allow_test_sizes=cfg.allow_test_sizes
        )
        helper_share, server_share = split_key(
            self.sk, self.pk, self.rng, mode=cfg.split_mode,
            pairing_id=SERVER_SPLIT,
        )
        member_share, release_share = split_key(
            self.sk, self.pk, self.rng, mode=cfg.split_mode,
            pairing_id=PARTICIPANT_SPLIT,
        )

        def send(role, shares):
            engine.enqueue(
                ROLE_KGC, role,
                codec.WireMessage(codec.KEY_MATERIAL, 0, 0,
                                  pack_key_material(self.pk, shares)),
                at=1,
            )

        send(ROLE_SP, [server_share, release_share])
        send(ROLE_CSP, [helper_share])
        for i in range(1, cfg.n + 1):
            send(participant_role(i), [member_share])
        # the requester decrypts its final model through the same
        # participant-side share, routed here at setup
        send(ROLE_REQUESTER, [member_share])

    def handle(self, ctx, src, msg):
        raise ProtocolAbortError(f"key center received unexpected {msg.tag_name}")


class _RoundBuffer:
    __slots__ = ("window", "stamped", "state", "enc_avg", "released")

    def __init__(self, window):
        self.window = window
        self.stamped = []
        self.state = None
        self.enc_avg = None
        self.released = False


class SpActor:
    """Aggregation server: windows, encrypted sums, divisions, releases."""

    def __init__(self, cfg, rng: Random, record_decrypt=None):
        self.cfg = cfg
        self.rng = rng
        self.record_decrypt = record_decrypt
        self.pk = None
        self.server_share = None          # its half of the server split
        self.release_share = None         # its half of the participant split
        self.avg_cfg = None
        self.enc_budget = None
        self.ledger = None
        self.rounds_log = []
        self.buffers = {}
        self._flow = None
        self._pending_flows = []
        self._ctx = None

    def handle(self, ctx, src, msg):
        self._ctx = ctx
        if msg.tag == codec.KEY_MATERIAL:
            self._on_keys(ctx, msg)
        elif msg.tag == codec.BUDGET:
            self._on_budget(msg)
        elif msg.tag == codec.SUBMIT:
            self._on_submit(ctx, src, msg)
        elif msg.tag == codec.TIMER:
            self._start_flow(self._round_flow(msg.round_index))
        elif msg.tag in (codec.DIV_BATCH_RESP, codec.DIV_RESP, codec.MUL_RESP):
            self._resume(msg)
        else:
            raise ProtocolAbortError(f"server cannot handle {msg.tag_name}")

    # -- message handlers ---------------------------------------------------

    def _on_keys(self, ctx, msg):
        cfg = self.cfg
        self.pk, shares = unpack_key_material(msg)
        self.server_share = shares[(SERVER_SPLIT, 2)]
        self.release_share = shares[(PARTICIPANT_SPLIT, 2)]
        self.avg_cfg = build_averaging_config(cfg, self.pk)
        for i in range(1, cfg.n + 1):
            ctx.send(
                participant_role(i),
                codec.WireMessage(codec.TASK, 0, 0, (cfg.model_dim, cfg.rounds)),
            )
        self._open_round(ctx, 1)

    def _on_budget(self, msg):
        enc_value, scale, num, den = msg.fields
        self.enc_budget = Ciphertext(enc_value, scale)
        self.ledger = BudgetLedger(prepaid=Fraction(num, den))

    def _on_submit(self, ctx, src, msg):
        sub = unpack_submission(msg, src)
        buffer = self.buffers.get(msg.round_index)
        if buffer is None or buffer.released:
            return  # round unknown or already released: discarded
        buffer.stamped.append((ctx.now, sub))

    def _open_round(self, ctx, round_index):
        cfg = self.cfg
        self.buffers[round_index] = _RoundBuffer(
            AcceptanceWindow(ctx.now + 1, cfg.window_ticks)
        )
        ctx.send(
            ROLE_SP,
            codec.WireMessage(codec.TIMER, 0, round_index, ()),
            delay=cfg.window_ticks + 2,
        )

    # -- generator plumbing --------------------------------------------------

    def _start_flow(self, generator):
        # flows run one at a time; a window may close while the previous
        # round's rewards are still in flight, so queue instead of clobber
        if self._flow is not None:
            self._pending_flows.append(generator)
            return
        self._flow = generator
        self._resume(None)

    def _resume(self, msg):
        if self._flow is None:
            raise StateMachineError("protocol response without an active flow")
        try:
            dst, out = self._flow.send(msg)
        except StopIteration:
            self._flow = None
            if self._pending_flows:
                self._start_flow(self._pending_flows.pop(0))
            return
        self._ctx.send(dst, out)

    # -- the per-round flow ---------------------------------------------------

    def _round_flow(self, round_index):
        cfg = self.cfg
        buffer = self.buffers[round_index]
        accepted_stamped, late_stamped = collect_with_window(
            buffer.stamped, buffer.window
        )
        state = RoundState.from_submissions(
            self.pk, [sub for _, sub in accepted_stamped], round_index
        )
        enc_avg = yield from self._batch_divide(state, round_index)

        folded = []
        if cfg.strategy == "retransmit":
            # repair per late arrival: two homomorphic additions, re-divide
            for _, sub in late_stamped:
                state.fold_in(self.pk, sub)
                folded.append(sub.participant_id)
                enc_avg = yield from self._batch_divide(state, round_index)
        buffer.state = state
        buffer.enc_avg = enc_avg

        pairs = release_average(self.pk, enc_avg, self.release_share)
        release_fields = pack_release(pairs)
        if round_index < cfg.rounds:
            for i in range(1, cfg.n + 1):
                self._ctx.send(
                    participant_role(i),
                    codec.WireMessage(codec.AVG_RELEASE, 0, round_index,
                                      release_fields),
                )
            self._open_round(self._ctx, round_index + 1)
        else:
            self._ctx.send(
                ROLE_REQUESTER,
                codec.WireMessage(codec.FINAL_MODEL, 0, round_index,
                                  release_fields),
            )
        buffer.released = True
        self.rounds_log.append({
            "round": round_index,
            "accepted": [sub.participant_id for _, sub in accepted_stamped],
            "folded": folded,
            "discarded": [
                sub.participant_id for _, sub in late_stamped
                if sub.participant_id not in folded
            ],
        })

        if cfg.rewards and (
            cfg.reward_schedule == "per_round" or round_index == cfg.rounds
        ):
            yield from self._reward_round(round_index, state)

    def _batch_divide(self, state, round_index):
        sessions = []
        fields = [len(state.m_sum)]
        for component in state.m_sum:
            session, request = SecureDivSession.start(
                self.pk, component, state.d_sum, self.server_share,
                self.avg_cfg.params, self.rng,
            )
            sessions.append(session)
            fields += [request.session_id, request.x_masked, request.x_partial,
                       request.y_masked, request.y_partial]
        response = yield (
            ROLE_CSP,
            codec.WireMessage(codec.DIV_BATCH_REQ, 0, round_index, fields),
        )
        if response.tag != codec.DIV_BATCH_RESP:
            raise ProtocolAbortError(f"expected batch response, got {response.tag_name}")
        count = response.fields[0]
        quotients = {
            response.fields[1 + 2 * i]: response.fields[2 + 2 * i]
            for i in range(count)
        }
        return [
            session.finish(DivResponse(session.session_id,
                                       quotients[session.session_id]))
            for session in sessions
        ]

    def _reward_round(self, round_index, state: RoundState):
        flow = reward_flow(
            self.pk,
            [sub.enc_model for sub in state.accepted],
            [sub.enc_delta for sub in state.accepted],
            self.buffers[round_index].enc_avg,
            self.enc_budget,
            self.server_share,
            self.avg_cfg.params,
            self.rng,
        )
        response = None
        while True:
            try:
                kind, request = flow.send(response)
            except StopIteration as stop:
                enc_rewards = stop.value
                break
            if kind == "div":
                wire = _div_request_wire(request, round_index)
            else:
                wire = _mul_request_wire(request, round_index)
            reply = yield (ROLE_CSP, wire)
            if reply.session_id != request.session_id:
                raise ProtocolAbortError("protocol reply for a different session")
            if kind == "div":
                response = DivResponse(reply.session_id, reply.fields[0])
            else:
                response = MulResponse(reply.session_id, reply.fields[0])
        pairs = release_rewards(
            self.pk, enc_rewards, self.release_share, self.ledger,
            self.cfg.budget,
        )
        for sub, (cipher, partial) in zip(state.accepted, pairs):
            self._ctx.send(
                sub.participant_id,
                codec.WireMessage(
                    codec.REWARD_RELEASE, 0, round_index,
                    (cipher.scale, cipher.value, partial.value),
                ),
            )


class CspActor:
    """Compute helper: answers masked division/multiplication requests."""

    def __init__(self, cfg, rng: Random, record_decrypt=None):
        self.cfg = cfg
        self.rng = rng
        self.record_decrypt = record_decrypt
        self.pk = None
        self.helper_share = None
        self.params = None

    def handle(self, ctx, src, msg):
        if msg.tag == codec.KEY_MATERIAL:
            self.pk, shares = unpack_key_material(msg)
            self.helper_share = shares[(SERVER_SPLIT, 1)]
            self.params = build_masking_params(self.cfg)
        elif msg.tag == codec.DIV_BATCH_REQ:
            fields = [msg.fields[0]]
            for i in range(msg.fields[0]):
                chunk = msg.fields[1 + 5 * i:6 + 5 * i]
                response = secure_div_respond(
                    self.pk, self.helper_share, self.params,
                    DivRequest(*chunk), self.rng,
                    on_decrypt=self.record_decrypt,
                )
                fields += [response.session_id, response.quotient]
            ctx.send(src, codec.WireMessage(codec.DIV_BATCH_RESP, 0,
                                            msg.round_index, fields))
        elif msg.tag == codec.DIV_REQ:
            response = secure_div_respond(
                self.pk, self.helper_share, self.params,
                DivRequest(msg.session_id, *msg.fields), self.rng,
                on_decrypt=self.record_decrypt,
            )
            ctx.send(src, codec.WireMessage(codec.DIV_RESP, response.session_id,
                                            msg.round_index, (response.quotient,)))
        elif msg.tag == codec.MUL_REQ:
            response = secure_mul_respond(
                self.pk, self.helper_share,
                MulRequest(msg.session_id, *msg.fields), self.rng,
                on_decrypt=self.record_decrypt,
            )
            ctx.send(src, codec.WireMessage(codec.MUL_RESP, response.session_id,
                                            msg.round_index, (response.product,)))
        else:
            raise ProtocolAbortError(f"helper cannot handle {msg.tag_name}")


class ParticipantActor:
    """Trains locally, submits encrypted models, decrypts releases."""

    def __init__(self, index, cfg, dataset, dropout_plan, rng: Random,
                 record_decrypt=None, trainer=local_train):
        self.index = index
        self.role = participant_role(index)
        self.cfg = cfg
        self.features, self.targets = dataset
        self.dropout_plan = dropout_plan
        self.rng = rng
        self.record_decrypt = record_decrypt
        self.trainer = trainer
        self.pk = None
        self.member_share = None
        self.avg_cfg = None
        self.current = None
        self.models_log = {}
        self.average_log = {}
        self.reward_log = {}

    def handle(self, ctx, src, msg):
        if msg.tag == codec.KEY_MATERIAL:
            self.pk, shares = unpack_key_material(msg)
            self.member_share = shares[(PARTICIPANT_SPLIT, 1)]
            self.avg_cfg = build_averaging_config(self.cfg, self.pk)
        elif msg.tag == codec.TASK:
            self.current = [Fraction(0)] * self.cfg.model_dim
            self._train_and_submit(ctx, 1)
        elif msg.tag == codec.AVG_RELEASE:
            pairs = unpack_release(msg, self.release_share_id())
            decoded = decrypt_released_average(
                pairs, self.member_share, self.pk, self.avg_cfg,
                on_decrypt=self.record_decrypt,
            )
            self.average_log[msg.round_index] = decoded
            self.current = decoded
            if msg.round_index < self.cfg.rounds:
                self._train_and_submit(ctx, msg.round_index + 1)
        elif msg.tag == codec.REWARD_RELEASE:
            scale, cipher, partial = msg.fields
            pair = (Ciphertext(cipher, scale),
                    PartialDecryption(partial, self.release_share_id()))
            self.reward_log[msg.round_index] = decrypt_reward(
                pair, self.member_share, self.pk,
                on_decrypt=self.record_decrypt,
            )
        else:
            raise ProtocolAbortError(f"participant cannot handle {msg.tag_name}")

    @staticmethod
    def release_share_id():
        return f"{PARTICIPANT_SPLIT}/2"

    def _train_and_submit(self, ctx, round_index):
        cfg = self.cfg
        trained = self.trainer(
            self.features, self.targets, [float(w) for w in self.current],
            TrainConfig(cfg.eta, cfg.batch_size, cfg.epochs),
            Random(f"{cfg.seed}/train/{self.index}/{round_index}"),
        )
        model = ModelVector(
            tuple(quantize_weight(float(w), cfg.rounding_exp) for w in trained),
            len(self.targets),
        )
        self.models_log[round_index] = model
        event = self.dropout_plan.get((round_index, self.role))
        if event == "lost":
            return
        submission = make_submission(
            self.pk, model, self.role, round_index, self.avg_cfg, self.rng,
            include_model=cfg.rewards,
        )
        ctx.send(
            ROLE_SP,
            codec.WireMessage(codec.SUBMIT, 0, round_index,
                              pack_submission(submission)),
            delay=cfg.window_ticks if event == "late" else 0,
        )


class RequesterActor:
    """Posts the task budget and receives only the final encrypted model."""

    def __init__(self, cfg, rng: Random, record_decrypt=None):
        self.cfg = cfg
        self.rng = rng
        self.record_decrypt = record_decrypt
        self.pk = None
        self.member_share = None
        self.final_weights = None
        self.reward_releases_seen = 0

    def handle(self, ctx, src, msg):
        if msg.tag == codec.KEY_MATERIAL:
            self.pk, shares = unpack_key_material(msg)
            self.member_share = shares[(PARTICIPANT_SPLIT, 1)]
            cfg = self.cfg
            reward_rounds = (
                0 if not cfg.rewards
                else 1 if cfg.reward_schedule == "final" else cfg.rounds
            )
            prepaid = Fraction(cfg.budget) * max(reward_rounds, 1)
            enc_budget = encrypt(
                self.pk, int(Fraction(cfg.budget) * 10 ** cfg.rounding_exp),
                self.rng, scale=cfg.rounding_exp,
            )
            ctx.send(
                ROLE_SP,
                codec.WireMessage(
                    codec.BUDGET, 0, 0,
                    (enc_budget.value, enc_budget.scale,
                     prepaid.numerator, prepaid.denominator),
                ),
            )
        elif msg.tag == codec.FINAL_MODEL:
            pairs = unpack_release(msg, ParticipantActor.release_share_id())
            avg_cfg = build_averaging_config(self.cfg, self.pk)
            self.final_weights = decrypt_released_average(
                pairs, self.member_share, self.pk, avg_cfg,
                on_decrypt=self.record_decrypt, label=FINAL_MODEL_LABEL,
            )
        elif msg.tag == codec.REWARD_RELEASE:
            self.reward_releases_seen += 1
            raise ProtocolAbortError("requester must never receive reward pairs")
        else:
            raise ProtocolAbortError(f"requester cannot handle {msg.tag_name}")


def build_masking_params(cfg):
    return MaskingParams(cfg.sigma, cfg.kappa, cfg.rounding_exp)


def build_averaging_config(cfg, pk):
    return AveragingConfig(
        FixedPointCodec(cfg.rounding_exp, cfg.kappa, pk.n),
        build_masking_params(cfg),
        offset=cfg.offset,
    )
