"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MockTrialError(Exception):
    """Base class for every error raised by mocktrial."""


# -- parsing / domain -------------------------------------------------------


class UnparseableDuration(MockTrialError, ValueError):
    pass


class UnparseableAmount(MockTrialError, ValueError):
    pass


class InvalidJudgment(MockTrialError, ValueError):
    pass


class InvalidCase(MockTrialError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


# -- procedure engine ---------------------------------------------------------


class ProcedureError(MockTrialError):
    pass


class OutOfTurn(ProcedureError):
    pass


class StageNotFinished(ProcedureError):
    pass


class IllegalBacktrack(ProcedureError):
    pass


# -- backends -----------------------------------------------------------------


class BackendFailure(MockTrialError):
    pass


class ScriptMiss(BackendFailure, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class RemoteExhausted(BackendFailure):
    pass


class AuthMissing(BackendFailure):
    pass


class CassetteMiss(BackendFailure, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class EmptyCompletion(BackendFailure):
    pass


# -- agents / extraction ------------------------------------------------------


class VerdictParseFailure(MockTrialError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ExtractionFailure(MockTrialError, ValueError):
    pass


class ExtractionIncomplete(MockTrialError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing components: " + ", ".join(self.missing))


# -- retrieval ----------------------------------------------------------------


class ArticleNotFound(MockTrialError, LookupError):
    pass


class AmbiguousLawName(MockTrialError, LookupError):
    pass


class DuplicateArticle(MockTrialError, ValueError):
    pass


class MalformedRecord(MockTrialError, ValueError):
    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {reason}")


# -- evaluation ---------------------------------------------------------------


class EmptyInput(MockTrialError, ValueError):
    pass


class AllExcluded(MockTrialError, ValueError):
    pass


class LengthMismatch(MockTrialError, ValueError):
    pass


class AlignmentError(MockTrialError, ValueError):
    def __init__(self, missing_predictions, missing_truths):
        self.missing_predictions = sorted(missing_predictions)
        self.missing_truths = sorted(missing_truths)
        parts = []
        if self.missing_predictions:
            parts.append("no prediction for: " + ", ".join(self.missing_predictions))
        if self.missing_truths:
            parts.append("no truth for: " + ", ".join(self.missing_truths))
        super().__init__("; ".join(parts))


class MissingAnnotation(MockTrialError, ValueError):
    pass


class DegenerateMarginals(MockTrialError, ZeroDivisionError):
    pass
