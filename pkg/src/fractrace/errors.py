"""Exception hierarchy shared across the package."""


class FractraceError(Exception):
    """Base class for all library errors."""


class InputError(FractraceError):
    """A point or argument lies outside the domain an operation accepts."""


class CellAmbiguity(FractraceError):
    pass


class PostcriticalNotFinite(FractraceError):
    pass


class BranchSetInfinite(FractraceError):
    """Two maps coincide on a continuum, so the branch set is not finite."""


class OrbitMeetsBranchSet(FractraceError):
    """Backward orbit collapsed: two words reached the same point."""


class SupportExplosion(FractraceError):
    pass


class MassMismatch(FractraceError):
    pass


class DegenerateInput(FractraceError):
    pass


class LevelMismatch(FractraceError):
    pass


class InsufficientMembers(FractraceError):
    pass


class AtomInExclusionWindow(FractraceError):
    pass


class NotTracial(FractraceError):
    pass


class UnequalOrbitMasses(FractraceError):
    pass


class NegativeResidual(FractraceError):
    pass


class BetaTooSmall(FractraceError):
    pass


class SupportTooLarge(FractraceError):
    """Exact transport was requested on supports beyond the solver cap."""
