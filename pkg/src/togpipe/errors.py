"""Exception hierarchy for the grasp transfer engine."""


class TogError(Exception):
    """Base class for all engine errors."""


# geometry
class NonPositiveDepth(TogError):
    pass


# feature store / binary formats
class BadMagic(TogError):
    pass


class DimensionMismatch(TogError):
    pass


class TruncatedFile(TogError):
    pass


class OutOfBounds(TogError):
    pass


class ZeroVector(TogError):
    pass


# memory
class EmptyInput(TogError):
    pass


class DegenerateTrajectory(TogError):
    pass


class AlreadyAugmented(TogError):
    pass


class SchemaVersionMismatch(TogError):
    pass


# retrieval
class EmptyStore(TogError):
    pass


class ReRankerFailure(TogError):
    pass


class EmptyMask(TogError):
    pass


# transfer
class LowConfidenceMatch(TogError):
    pass


class TooFewLifted(TogError):
    pass


class InsufficientCorrespondences(TogError):
    pass


class DegenerateConfiguration(TogError):
    pass


class NoConsensus(TogError):
    pass


class MissingDepthAtGraspPoint(TogError):
    pass


# alignment
class NoCandidates(TogError):
    pass


# synthetic
class InvalidSpec(TogError):
    pass
