"""Exception types shared across the package."""


class ActorError(Exception):
    """Base class for all package-specific errors."""


# -- rotations ---------------------------------------------------------------

class DegenerateInput(ActorError):
    """6D input cannot be orthonormalized (zero or parallel vectors)."""


class InvalidRotation(ActorError):
    """Matrix fails the orthonormality / determinant check."""


# -- body --------------------------------------------------------------------

class ShapeMismatch(ActorError):
    """Pose and skeleton disagree on joint count or array shape."""


# -- model -------------------------------------------------------------------

class UnknownAction(ActorError):
    """Action label outside the configured label set."""


class EmptySequence(ActorError):
    """Encoder received a zero-length sequence."""


class NonPositiveDuration(ActorError):
    """Requested duration is < 1 frame."""


class UnknownVariant(ActorError):
    """Architecture variant name not recognized."""


class FixedLengthOnly(ActorError):
    """Fully connected variant only supports its configured fixed length."""


# -- losses ------------------------------------------------------------------

class LengthMismatch(ActorError):
    """Ground truth and prediction differ in length or joint count."""


# -- data --------------------------------------------------------------------

class InvalidSpec(ActorError):
    """Dataset specification violates its invariants."""


class CorruptFile(ActorError):
    """File is unreadable or missing required contents."""


class VersionMismatch(ActorError):
    """File carries an unsupported format version."""


# -- training ----------------------------------------------------------------

class ActionSetMismatch(ActorError):
    """Model and dataset disagree on the action label set."""


class DivergedLoss(ActorError):
    """Training loss became non-finite.

    Carries the last finite-loss model state so callers can persist it.
    """

    def __init__(self, message, last_good_state=None, step=0):
        super().__init__(message)
        self.last_good_state = last_good_state
        self.step = step


class IncompatibleCheckpoint(ActorError):
    """Checkpoint architecture does not match what the caller requested."""


# -- evaluation --------------------------------------------------------------

class InsufficientData(ActorError):
    """Not enough labeled data to train the recognizer."""


class InsufficientSamples(ActorError):
    """Not enough feature samples for the requested statistic."""


class DegenerateMoments(ActorError):
    """Feature moments unusable even after regularization."""


class EmptyInput(ActorError):
    """Metric called on an empty collection."""


# -- applications ------------------------------------------------------------

class TooShort(ActorError):
    """Sequence too short for a second-difference statistic."""


class ActionMismatch(ActorError):
    """Operands carry different action labels."""


class AlphaOutOfRange(ActorError):
    """Interpolation weight outside [0, 1]."""
