"""Exception hierarchy for the toolkit."""


class CipherFedError(Exception):
    """Base class for all toolkit errors."""


class KeyGenerationError(CipherFedError):
    """Prime search exhausted its retry budget."""


class DomainError(CipherFedError, ValueError):
    """A plaintext, scalar, or encoded value is outside its legal range."""


class ScaleMismatchError(CipherFedError, ValueError):
    """Homomorphic operands carry incompatible fixed-point scales."""


class PairingError(CipherFedError, ValueError):
    """Partial decryptions do not come from complementary halves of one split."""


class CorruptedCiphertextError(CipherFedError):
    """Decryption produced a value outside the Paillier residue structure."""


class CorruptedSessionError(CipherFedError):
    """A protocol peer received an intermediate it cannot process."""


class MaskingError(CipherFedError, ValueError):
    """Masking parameters leave no room for the blinding intervals."""


class ProtocolAbortError(CipherFedError):
    """An interactive protocol died mid-flight (transport or peer failure)."""

    def __init__(self, message, *, stage=None):
        super().__init__(message)
        self.stage = stage


class StateMachineError(CipherFedError):
    """A protocol session was driven out of order or reused."""


class ShapeError(CipherFedError, ValueError):
    """Vector dimensions disagree."""


class EmptyRoundError(CipherFedError):
    """An aggregation round closed with zero accepted submissions."""


class DiscardedLateError(CipherFedError):
    """A late submission arrived after the round's average was released."""


class LedgerError(CipherFedError):
    """A reward release would overdraw the prepaid budget."""


class CodecError(CipherFedError, ValueError):
    """Wire bytes do not parse as a well-formed message."""


class ConfigError(CipherFedError, ValueError):
    """An experiment configuration is missing, malformed, or inconsistent."""


class ExperimentAborted(CipherFedError):
    """A simulator run terminated early; carries the structured failure record."""

    def __init__(self, message, *, record=None):
        super().__init__(message)
        self.record = record
