"""Interactive two-party primitives over threshold-Paillier ciphertexts.

Two protocols between the aggregation server (SP) and its helper (CSP),
each a single request/response round:

* secure division -- from encryptions of x and y (0 < x, y < 2^kappa), SP
  obtains an encryption of floor(x / y * 10^L) without either party seeing
  x, y, or the quotient.
* secure multiplication -- from encryptions of x and y in (-2^kappa,
  2^kappa), SP obtains an encryption of x * y.

SP blinds both operands inside the ciphertexts, partially decrypts with its
share, and ships masked pairs; CSP finishes the decryptions (seeing only
masked values), computes on the masked plaintexts, and returns a fresh
encryption; SP strips the blinding homomorphically.

Division masks: X encrypts r*x + (r*alpha + e)*y and Y encrypts r*y, with
alpha sigma bits, e kappa bits, and r a random composite. CSP's quotient is
then x/y + alpha + e/r exactly; SP subtracts alpha * 10^L and
floor(e/r * 10^L). The floor identity

    floor((x/y + alpha + e/r) * 10^L) - alpha*10^L - floor(e/r * 10^L)
        = floor(x/y * 10^L)

holds iff frac(x*10^L/y) + frac(e*10^L/r) < 1, so r is drawn above
e * 10^L * 2^kappa (still composite, still inside the prescribed interval):
that forces frac(e*10^L/r) < 2^-kappa < 1/y for every admissible y, making
the result exact unconditionally, not just with high probability.

Sessions are single-use, step-ordered state machines; the message-level API
(``start`` / ``respond`` / ``finish``) consumes one inbound and produces one
outbound message per step, and ``secure_div`` / ``secure_mul`` compose the
three steps for callers that do not care about transports.
"""

from __future__ import annotations

from dataclasses import dataclass
from random import Random

from . import modmath
from .errors import (
    CorruptedSessionError,
    MaskingError,
    ProtocolAbortError,
    ScaleMismatchError,
    StateMachineError,
)
from .paillier import Ciphertext, KeyShare, PublicKey, encrypt

DIV_DECRYPT_LABEL = "masked-div-operand"
MUL_DECRYPT_LABEL = "masked-mul-operand"


@dataclass(frozen=True)
class MaskingParams:
    """Statistical security bits sigma, bound bits kappa, rounding factor L."""

    sigma: int = 80
    kappa: int = 32
    rounding_exp: int = 6

    def __post_init__(self):
        if min(self.sigma, self.kappa) < 2 or self.rounding_exp < 0:
            raise MaskingError("sigma, kappa must be >= 2 and L >= 0")

    def validate_for_modulus(self, n):
        """The mask interval [2^(kappa+1), 2^(logN-kappa-sigma-2)) is nonempty."""
        if self.kappa + 1 >= n.bit_length() - self.kappa - self.sigma - 2:
            raise MaskingError(
                f"modulus of {n.bit_length()} bits leaves no mask interval for "
                f"kappa={self.kappa}, sigma={self.sigma}"
            )


@dataclass(frozen=True)
class DivRequest:
    session_id: int
    x_masked: int
    x_partial: int
    y_masked: int
    y_partial: int


@dataclass(frozen=True)
class DivResponse:
    session_id: int
    quotient: int


@dataclass(frozen=True)
class MulRequest:
    session_id: int
    x_masked: int
    x_partial: int
    y_masked: int
    y_partial: int


@dataclass(frozen=True)
class MulResponse:
    session_id: int
    product: int


def _draw_composite_mask(rng, lower, upper):
    """Random composite in [lower, upper): a product of two odd factors.

    Being a two-factor product by construction (never a prime, never a
    prime with a unit cofactor) is what the blinding of y rides on. The
    first factor is drawn at half width, the second directly from the
    surviving interval, so a draw succeeds regardless of how the interval
    sits relative to powers of two.
    """
    if 4 * lower >= upper:
        raise MaskingError(
            "modulus too small for the exactness-preserving mask interval"
        )
    half = max(3, lower.bit_length() // 2)
    while True:
        f1 = modmath.random_bits(rng, half) | 1
        low2 = lower // f1 + 1
        high2 = upper // f1 - 1
        if high2 - low2 < 4:
            continue
        f2 = rng.randrange(low2, high2) | 1
        if f2 < 3:
            continue
        r = f1 * f2
        if lower <= r < upper:
            return r


def _partial(value, share: KeyShare, n_sq):
    return modmath.powmod(value, share.value, n_sq)


def _finish_decrypt(masked, partial, share: KeyShare, pk: PublicKey):
    combined = partial * _partial(masked, share, pk.n_sq) % pk.n_sq
    num = combined - 1
    if num % pk.n:
        raise CorruptedSessionError("masked value does not decrypt cleanly")
    return num // pk.n % pk.n


class SecureDivSession:
    """SP-side state for one division. Create via :meth:`start`."""

    __slots__ = ("session_id", "r", "alpha", "e", "floor_er", "rounding_exp",
                 "out_scale", "_pk", "_rng", "stage")

    def __init__(self, session_id, r, alpha, e, floor_er, rounding_exp,
                 out_scale, pk, rng):
        self.session_id = session_id
        self.r = r
        self.alpha = alpha
        self.e = e
        self.floor_er = floor_er
        self.rounding_exp = rounding_exp
        self.out_scale = out_scale
        self._pk = pk
        self._rng = rng
        self.stage = "sent"

    @classmethod
    def start(cls, pk: PublicKey, cx: Ciphertext, cy: Ciphertext,
              sp_share: KeyShare, params: MaskingParams, rng: Random):
        """Blind the operands and emit the request message (step 1)."""
        params.validate_for_modulus(pk.n)
        if cx.scale < cy.scale:
            raise ScaleMismatchError(
                "dividend scale must be >= divisor scale; align first"
            )
        ten_l = 10 ** params.rounding_exp
        alpha = modmath.random_bits(rng, params.sigma)
        e = modmath.random_bits(rng, params.kappa)
        upper = 1 << (pk.bits - params.kappa - params.sigma - 2)
        r = _draw_composite_mask(rng, e * ten_l * (1 << params.kappa) + 1, upper)

        n_sq = pk.n_sq
        x_masked = (
            modmath.powmod(cx.value, r, n_sq)
            * modmath.powmod(cy.value, r * alpha + e, n_sq)
            % n_sq
        )
        y_masked = modmath.powmod(cy.value, r, n_sq)
        session = cls(
            session_id=rng.getrandbits(64),
            r=r,
            alpha=alpha,
            e=e,
            floor_er=e * ten_l // r,
            rounding_exp=params.rounding_exp,
            out_scale=params.rounding_exp + cx.scale - cy.scale,
            pk=pk,
            rng=rng,
        )
        request = DivRequest(
            session.session_id,
            x_masked,
            _partial(x_masked, sp_share, n_sq),
            y_masked,
            _partial(y_masked, sp_share, n_sq),
        )
        return session, request

    def finish(self, response: DivResponse):
        """Strip the blinding from CSP's masked quotient (step 3)."""
        if self.stage != "sent":
            raise StateMachineError("division session already finished")
        if response.session_id != self.session_id:
            raise StateMachineError("response does not match this session")
        self.stage = "done"
        pk, n_sq = self._pk, self._pk.n_sq
        ten_l = 10 ** self.rounding_exp
        value = (
            response.quotient
            * modmath.powmod(
                encrypt(pk, self.alpha, self._rng).value, pk.n - ten_l, n_sq
            )
            * modmath.powmod(
                encrypt(pk, self.floor_er, self._rng).value, pk.n - 1, n_sq
            )
            % n_sq
        )
        return Ciphertext(value, self.out_scale)


def secure_div_respond(pk: PublicKey, csp_share: KeyShare,
                       params: MaskingParams, request: DivRequest,
                       rng: Random, on_decrypt=None):
    """CSP's step: unmask, divide on the masked plaintexts, re-encrypt."""
    if on_decrypt is not None:
        on_decrypt(DIV_DECRYPT_LABEL)
        on_decrypt(DIV_DECRYPT_LABEL)
    x_prime = _finish_decrypt(request.x_masked, request.x_partial, csp_share, pk)
    y_prime = _finish_decrypt(request.y_masked, request.y_partial, csp_share, pk)
    if y_prime == 0:
        raise CorruptedSessionError("masked divisor decrypted to zero")
    quotient = x_prime * 10 ** params.rounding_exp // y_prime
    if quotient >= pk.n:
        raise CorruptedSessionError("masked quotient exceeds the plaintext space")
    return DivResponse(request.session_id, encrypt(pk, quotient, rng).value)


class SecureMulSession:
    """SP-side state for one multiplication. Create via :meth:`start`."""

    __slots__ = ("session_id", "r1", "r2", "out_scale", "_cx", "_cy",
                 "_pk", "_rng", "stage")

    def __init__(self, session_id, r1, r2, out_scale, cx, cy, pk, rng):
        self.session_id = session_id
        self.r1 = r1
        self.r2 = r2
        self.out_scale = out_scale
        self._cx = cx
        self._cy = cy
        self._pk = pk
        self._rng = rng
        self.stage = "sent"

    @classmethod
    def start(cls, pk: PublicKey, cx: Ciphertext, cy: Ciphertext,
              sp_share: KeyShare, params: MaskingParams, rng: Random):
        """Additively blind both operands and emit the request (step 1)."""
        params.validate_for_modulus(pk.n)
        n_sq = pk.n_sq
        r1 = modmath.random_bits(rng, params.sigma)
        r2 = modmath.random_bits(rng, params.sigma)
        x_masked = cx.value * encrypt(pk, r1, rng).value % n_sq
        y_masked = cy.value * encrypt(pk, r2, rng).value % n_sq
        session = cls(
            session_id=rng.getrandbits(64),
            r1=r1,
            r2=r2,
            out_scale=cx.scale + cy.scale,
            cx=cx,
            cy=cy,
            pk=pk,
            rng=rng,
        )
        request = MulRequest(
            session.session_id,
            x_masked,
            _partial(x_masked, sp_share, n_sq),
            y_masked,
            _partial(y_masked, sp_share, n_sq),
        )
        return session, request

    def finish(self, response: MulResponse):
        """Remove the cross terms: x'y' - r2*x - r1*y - r1*r2 (step 3)."""
        if self.stage != "sent":
            raise StateMachineError("multiplication session already finished")
        if response.session_id != self.session_id:
            raise StateMachineError("response does not match this session")
        self.stage = "done"
        pk, n_sq = self._pk, self._pk.n_sq
        neg = pk.n - 1
        cross_x = modmath.powmod(
            modmath.powmod(self._cx.value, self.r2, n_sq), neg, n_sq
        )
        cross_y = modmath.powmod(
            modmath.powmod(self._cy.value, self.r1, n_sq), neg, n_sq
        )
        cross_rr = modmath.powmod(
            encrypt(pk, self.r1 * self.r2 % pk.n, self._rng).value, neg, n_sq
        )
        value = response.product * cross_x % n_sq * cross_y % n_sq * cross_rr % n_sq
        return Ciphertext(value, self.out_scale)


def secure_mul_respond(pk: PublicKey, csp_share: KeyShare,
                       request: MulRequest, rng: Random, on_decrypt=None):
    """CSP's step: unmask, multiply the masked plaintexts, re-encrypt."""
    if on_decrypt is not None:
        on_decrypt(MUL_DECRYPT_LABEL)
        on_decrypt(MUL_DECRYPT_LABEL)
    x_prime = _finish_decrypt(request.x_masked, request.x_partial, csp_share, pk)
    y_prime = _finish_decrypt(request.y_masked, request.y_partial, csp_share, pk)
    return MulResponse(request.session_id, encrypt(pk, x_prime * y_prime % pk.n, rng).value)


def _run_exchange(exchange, request, fallback):
    if exchange is None:
        return fallback(request)
    try:
        return exchange(request)
    except Exception as exc:
        raise ProtocolAbortError(
            f"transport failed mid-protocol: {exc}", stage="exchange"
        ) from exc


def secure_div(pk: PublicKey, cx: Ciphertext, cy: Ciphertext,
               sp_share: KeyShare, csp_share: KeyShare,
               params: MaskingParams, rng: Random,
               exchange=None, on_csp_decrypt=None):
    """One-call division: compose the three steps over an optional transport.

    ``exchange`` maps the request message to the response message (e.g.
    through a codec or a socket); when omitted, CSP's step runs in-process.
    The result encrypts floor(x / y * 10^L) at scale L + sx - sy.
    """
    session, request = SecureDivSession.start(pk, cx, cy, sp_share, params, rng)
    response = _run_exchange(
        exchange,
        request,
        lambda req: secure_div_respond(pk, csp_share, params, req, rng,
                                       on_decrypt=on_csp_decrypt),
    )
    return session.finish(response)


def secure_mul(pk: PublicKey, cx: Ciphertext, cy: Ciphertext,
               sp_share: KeyShare, csp_share: KeyShare,
               params: MaskingParams, rng: Random,
               exchange=None, on_csp_decrypt=None):
    """One-call multiplication; the result encrypts x * y at scale sx + sy."""
    session, request = SecureMulSession.start(pk, cx, cy, sp_share, params, rng)
    response = _run_exchange(
        exchange,
        request,
        lambda req: secure_mul_respond(pk, csp_share, req, rng,
                                       on_decrypt=on_csp_decrypt),
    )
    return session.finish(response)
