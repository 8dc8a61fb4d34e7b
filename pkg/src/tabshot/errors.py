"""Typed errors raised across the harness."""


class TabshotError(Exception):
    """Base class for all harness errors."""


# --- table ingestion / slicing ---

class SchemaMismatch(TabshotError):
    pass


class BadCell(TabshotError):
    def __init__(self, row: int, column: str, raw: str, reason: str = "") -> None:
        self.row = row
        self.column = column
        self.raw = raw
        detail = f": {reason}" if reason else ""
        super().__init__(f"bad cell at row {row}, column '{column}': {raw!r}{detail}")


class DuplicateSubject(TabshotError):
    pass


class UnknownColumn(TabshotError):
    pass


# --- splitting / context sampling ---

class TooFewSubjects(TabshotError):
    pass


class PoolTooSmall(TabshotError):
    pass


class TargetInPool(TabshotError):
    pass


class InvalidAssignment(TabshotError):
    pass


# --- feature selection ---

class DegenerateLabels(TabshotError):
    pass


class EmptyFeatureSet(TabshotError):
    pass


class PTooLarge(TabshotError):
    pass


class UnknownFeature(TabshotError):
    pass


class ScoreOutOfRange(TabshotError):
    pass


# --- prompt rendering ---

class SchemaDrift(TabshotError):
    pass


class MissingTemplateRule(TabshotError):
    pass


class FormatContract(TabshotError):
    pass


# --- fine-tune export ---

class InvariantViolation(TabshotError):
    pass


# --- inference client ---

class Transport(TabshotError):
    pass


class AuthFailure(TabshotError):
    pass


class RateLimited(TabshotError):
    pass


class MalformedResponse(TabshotError):
    pass


class RequestFailed(TabshotError):
    """Non-retryable 4xx from the endpoint."""


class Undecodable(TabshotError):
    pass


class FeatureNotFound(TabshotError):
    pass


# --- interpretable outputs ---

class NoJsonFound(TabshotError):
    pass


class MissingKey(TabshotError):
    pass


class BadPrediction(TabshotError):
    pass


# --- missingness ---

class BadEdges(TabshotError):
    pass


# --- baselines ---

class SingleClass(TabshotError):
    pass


class DimMismatch(TabshotError):
    pass


# --- evaluation ---

class IdMismatch(TabshotError):
    pass


class EmptyInput(TabshotError):
    pass
