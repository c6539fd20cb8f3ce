"""Signed fixed-point encoding of decimals into Z_N.

A decimal v becomes the integer floor(v * 10^L) reduced mod N; negatives
occupy the top half of Z_N and decode as element - N. The rounding factor L
must exceed the number of decimal places of the inputs, so inputs on the
10^-l grid (l < L) encode exactly.

Floors are taken toward minus infinity everywhere, and exactly (via
``Fraction``), never through float multiplication.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import DomainError, ScaleMismatchError
from .paillier import Ciphertext, PublicKey, mul_scalar


def exact_floor_scaled(value, exponent):
    """floor(value * 10**exponent) computed exactly for int/float/Fraction."""
    scaled = Fraction(value) * 10 ** exponent
    return scaled.numerator // scaled.denominator


@dataclass(frozen=True)
class FixedPointCodec:
    """Rounding factor L, magnitude bound kappa (bits), and modulus N."""

    rounding_exp: int
    kappa: int
    modulus: int

    def __post_init__(self):
        if self.rounding_exp < 0:
            raise DomainError("rounding exponent must be nonnegative")
        if 10 ** self.rounding_exp >= 2 ** self.kappa:
            raise DomainError("10^L must stay below 2^kappa")
        if 2 ** (self.kappa + 2) >= self.modulus:
            raise DomainError("2^(kappa+2) must stay below the modulus")

    @property
    def unit(self):
        """The quantization step 10^-L."""
        return Fraction(1, 10 ** self.rounding_exp)


def encode(value, codec: FixedPointCodec):
    """Map a signed decimal to floor(value * 10^L) mod N.

    Raises a range error when |value| * 10^L reaches 2^kappa.
    """
    raw = exact_floor_scaled(value, codec.rounding_exp)
    if abs(raw) >= 2 ** codec.kappa:
        raise DomainError(
            f"|{value}| * 10^{codec.rounding_exp} exceeds the 2^{codec.kappa} bound"
        )
    return raw % codec.modulus


def decode(element, scale, codec: FixedPointCodec):
    """Inverse of :func:`encode` at an arbitrary scale, as an exact Fraction.

    Elements above N/2 are negative: they decode as element - N.
    """
    if not 0 <= element < codec.modulus:
        raise DomainError("element out of range [0, N)")
    signed = to_signed(element, codec.modulus)
    return Fraction(signed, 10 ** scale)


def to_signed(element, modulus):
    """Centered representative of an element of Z_N in (-N/2, N/2]."""
    return element - modulus if element > modulus // 2 else element


def scale_up(pk: PublicKey, c: Ciphertext, by: int):
    """Multiply the plaintext by 10^by and raise the scale tag to match.

    The encoded value is unchanged; only its fixed-point representation
    moves to a finer grid. The caller must ensure the raw integer still
    fits its downstream magnitude bounds (not checkable on a ciphertext).
    """
    if by < 0:
        raise DomainError("can only rescale upward")
    if by == 0:
        return c
    scaled = mul_scalar(pk, c, 10 ** by)
    return Ciphertext(scaled.value, c.scale + by)


def align_scales(pk: PublicKey, c1: Ciphertext, c2: Ciphertext):
    """Bring two ciphertexts to the common scale max(s1, s2)."""
    if c1.scale == c2.scale:
        return c1, c2
    if c1.scale < c2.scale:
        return scale_up(pk, c1, c2.scale - c1.scale), c2
    return c1, scale_up(pk, c2, c1.scale - c2.scale)


def require_same_scale(c1: Ciphertext, c2: Ciphertext):
    if c1.scale != c2.scale:
        raise ScaleMismatchError(
            f"operands at scales {c1.scale} and {c2.scale}; align first"
        )
