class FlakiDockError(Exception):
    """Base class for every error the library raises on purpose."""


class MalformedEncoding(FlakiDockError):
    pass


class EmptyDocument(FlakiDockError):
    pass


class EngineError(FlakiDockError):
    """Driver-level failure (daemon unreachable, disk full, missing CLI).

    Distinct from a build that ran and failed. `records` carries the
    BuildRecords completed before the failure when raised from a series.
    """

    def __init__(self, message: str, records: list | None = None):
        super().__init__(message)
        self.records = records or []


class ScenarioError(FlakiDockError):
    pass


class InvalidRule(FlakiDockError):
    pass


class ProviderUnavailable(FlakiDockError):
    pass


class TokenLimit(FlakiDockError):
    pass


class DimensionMismatch(FlakiDockError):
    pass


class ZeroVector(FlakiDockError):
    pass


class SchemaViolation(FlakiDockError):
    def __init__(self, record_id: str | None, field: str, message: str):
        super().__init__(f"record {record_id!r}: field {field!r}: {message}")
        self.record_id = record_id
        self.field = field


class VersionMismatch(FlakiDockError):
    pass


class BudgetExhausted(FlakiDockError):
    pass


class UnparseableResponse(FlakiDockError):
    def __init__(self, message: str, response: str = ""):
        super().__init__(message)
        self.response = response


class StateDirLocked(FlakiDockError):
    pass
