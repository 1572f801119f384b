"""Exception hierarchy.

Every error carries a machine-readable ``reason`` code; the CLI maps the
class to an exit code (validation 2, refusal 3, I/O 4).
"""

from __future__ import annotations


class GeoWitnessError(Exception):
    reason = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"reason": self.reason, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


class ValidationError(GeoWitnessError, ValueError):
    reason = "validation_failure"


class MalformedHeaderError(ValidationError):
    reason = "malformed_header"


class RowCountMismatchError(ValidationError):
    reason = "row_count_mismatch"


class NonFiniteError(ValidationError):
    reason = "non_finite"

    def __init__(self, message: str, row: int):
        super().__init__(message, row=row)
        self.row = row


class UnmatchedRowError(ValidationError):
    reason = "unmatched_row"

    def __init__(self, message: str, row_id: str):
        super().__init__(message, row_id=row_id)
        self.row_id = row_id


class DimensionMismatchError(ValidationError):
    reason = "dimension_mismatch"


class UnmappedConditionError(ValidationError):
    reason = "unmapped_condition"

    def __init__(self, message: str, tag: str):
        super().__init__(message, tag=tag)
        self.tag = tag


class InsufficientSupportError(ValidationError):
    reason = "insufficient_support"


class DegenerateError(ValidationError):
    """Zero variance, degenerate reference sample, empty group and similar."""

    reason = "degenerate"


class RefusalError(GeoWitnessError):
    """A freeze-discipline refusal: hash, denominator or disjointness."""

    reason = "refusal"


class HashMismatchError(RefusalError):
    reason = "hash_mismatch"


class DenominatorMismatchError(RefusalError):
    reason = "denominator_mismatch"


class FreezeViolationError(RefusalError):
    reason = "freeze_violation"

    def __init__(self, message: str, row_ids: list[str]):
        super().__init__(message, row_ids=row_ids)
        self.row_ids = row_ids


class FrozenDataError(RefusalError):
    """Attempt to overwrite a file referenced by a frozen manifest."""

    reason = "frozen_data"
