"""Exception types shared across the package."""


class SemfoamError(Exception):
    """Base class for all package errors."""


class DegenerateInput(SemfoamError):
    """Site set is collinear/coplanar and cannot be tetrahedralized."""


class NotAdjacent(SemfoamError):
    """Queried site pair does not share a Delaunay edge."""


class TooFewSites(SemfoamError):
    """An operation would leave fewer than the minimum number of sites."""


class DuplicateSite(SemfoamError):
    """A new site coincides with an existing one within tolerance."""


class OutOfBounds(SemfoamError):
    """A point lies outside the scene bounding box."""


class StuckRay(SemfoamError):
    """Cell walk failed to advance through a degenerate configuration."""


class NonGenericCrossing(SemfoamError):
    """Segment boundary is too close to a face edge for a stable jacobian."""


class EmptyMask(SemfoamError):
    """Label mask contains no supervised pixels."""


class ShapeMismatch(SemfoamError):
    """Batch arrays disagree on dimensions."""


class NonFiniteGradient(SemfoamError):
    """Gradient buffer contains NaN/Inf entries."""


class EmptyClass(SemfoamError):
    """No cell matches the requested semantic class."""


class BadSpec(SemfoamError):
    """Unknown or malformed synthetic scene description."""


class BadMagic(SemfoamError):
    """Scene file does not start with the expected magic string."""


class VersionMismatch(SemfoamError):
    """Scene file was written by an incompatible format version."""


class Truncated(SemfoamError):
    """Scene file ends before all declared arrays are present."""
