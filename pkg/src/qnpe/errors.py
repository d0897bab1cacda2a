"""Exception hierarchy shared by every qnpe module.

Each exception carries a short machine-readable ``code`` so the CLI can emit
structured error JSON, plus an optional ``details`` mapping.
"""

from __future__ import annotations


class QnpeError(Exception):
    code = "qnpe-error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": self.message}
        if self.details:
            out["details"] = {k: _jsonable(v) for k, v in self.details.items()}
        return out


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


# dataset-store

class FormatError(QnpeError, ValueError):
    code = "format-error"


class NonFiniteError(QnpeError, ValueError):
    code = "non-finite-value"


class EmptyInputError(QnpeError, ValueError):
    code = "empty-input"


class InvariantError(QnpeError, ValueError):
    code = "invariant-violation"


class ZeroNormError(QnpeError, ValueError):
    code = "zero-norm"


class BoundsError(QnpeError, IndexError):
    code = "index-out-of-range"


# classical-npe

class IsolatedPointError(QnpeError, ValueError):
    code = "isolated-point"


class DegenerateRowError(QnpeError, ValueError):
    code = "degenerate-row"


class ParameterError(QnpeError, ValueError):
    code = "invalid-parameter"


# quantum-core

class UnitarityError(QnpeError, ValueError):
    code = "non-unitary"


class ImpossibleOutcomeError(QnpeError, ValueError):
    code = "impossible-outcome"


class RepresentationError(QnpeError, OverflowError):
    code = "value-overflow"


# quantum-subroutines

class NoOverlapError(QnpeError, ValueError):
    code = "no-overlap"


class BranchError(QnpeError, ValueError):
    code = "branch-error"


class ZeroDifferenceError(QnpeError, ValueError):
    code = "zero-difference"


class PostSelectionError(QnpeError, RuntimeError):
    code = "post-selection-failure"


class ConstructionError(QnpeError, RuntimeError):
    code = "construction-failure"


class SpanError(QnpeError, ValueError):
    code = "outside-span"


class RealAmplitudeError(QnpeError, ValueError):
    code = "complex-amplitudes"


class ExhaustedError(QnpeError, LookupError):
    code = "exhausted"


class EmbeddingError(QnpeError, ValueError):
    code = "embedding-error"


class TomographyError(QnpeError, RuntimeError):
    code = "tomography-failure"


# qnpe-pipeline

class NoNeighborsError(QnpeError, ValueError):
    code = "no-neighbors"


class PrecisionError(QnpeError, RuntimeError):
    code = "insufficient-precision"


class StepError(QnpeError, RuntimeError):
    """Wraps a failure inside the quantum pipeline with its procedure step."""

    code = "pipeline-step-failure"

    def __init__(self, step: int, cause: QnpeError):
        super().__init__(f"step {step}: {cause.message}", step=step, cause=cause.code, **cause.details)
        self.step = step
        self.cause = cause


# cli-harness

class ComparisonError(QnpeError, ValueError):
    code = "comparison-mismatch"


class FitError(QnpeError, ValueError):
    code = "degenerate-fit"
