"""Shared error hierarchy.

Every pipeline error derives from :class:`RoadRedesignError` and carries a
stable machine-parsable ``code`` (SCREAMING_SNAKE of the class name unless
overridden) so the CLI and HTTP layers can surface it without string matching.
"""

import re


def _default_code(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).upper()


class RoadRedesignError(Exception):
    """Base for all pipeline errors."""

    code: str = "ERROR"

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if "code" not in cls.__dict__:
            cls.code = _default_code(cls.__name__)


# events
class MalformedCsv(RoadRedesignError):
    pass


class SchemaMismatch(RoadRedesignError):
    pass


# hotspot
class SamplingExhausted(RoadRedesignError):
    pass


# imagery
class ProviderQuotaExceeded(RoadRedesignError):
    pass


class NoImageryAtLocation(RoadRedesignError):
    pass


class NetworkFailure(RoadRedesignError):
    pass


class FixtureMissing(RoadRedesignError):
    pass


class UnlabeledRecord(RoadRedesignError):
    pass


class CacheCorruption(RoadRedesignError):
    pass


# classifier
class UnknownBackbone(RoadRedesignError):
    pass


class SingleClassDataset(RoadRedesignError):
    pass


class EmptyDataset(RoadRedesignError):
    pass


class UndecodableImage(RoadRedesignError):
    pass


# apcam
class LayerNotFound(RoadRedesignError):
    pass


class NonFiniteGradient(RoadRedesignError):
    pass


# maskkit
class DimensionMismatch(RoadRedesignError):
    pass


class GeometryMismatch(RoadRedesignError):
    pass


class InvalidMaskImage(RoadRedesignError):
    pass


class AdapterUnavailable(RoadRedesignError):
    pass


# inpaint
class EmptyInstanceSet(RoadRedesignError):
    pass


class BackendUnavailable(RoadRedesignError):
    pass


class BackendTimeout(RoadRedesignError):
    pass


# saliency
class EmptyApMask(RoadRedesignError):
    pass


# evalreport
class MissingCandidate(RoadRedesignError):
    pass


class NoScoredSessions(RoadRedesignError):
    pass
