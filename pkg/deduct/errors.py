from typing import Optional


class DeductError(RuntimeError):
    """Base error for every failure raised by the estimation pipeline.

    `stage` names the pipeline step that failed (ingest, support, fit, extend,
    estimand, solve, baseline, simulate) so the CLI can label diagnostics.
    """

    default_stage = "pipeline"

    def __init__(self, message: str, stage: Optional[str] = None, row: Optional[int] = None):
        super().__init__(message)
        self.stage = stage or self.default_stage
        self.row = row

    def __str__(self) -> str:
        msg = super().__str__()
        if self.row is not None:
            msg = f"row {self.row}: {msg}"
        return f"[{self.stage}] {msg}"


# ---------- ingestion ----------

class MalformedRow(DeductError):
    default_stage = "ingest"


class InvariantViolation(DeductError):
    default_stage = "ingest"


class EmptyDataset(DeductError):
    default_stage = "ingest"


class MissingDropoutTime(DeductError):
    default_stage = "ingest"


# ---------- support ----------

class EmptyStratum(DeductError):
    default_stage = "support"


class NotInSupport(DeductError):
    default_stage = "support"


# ---------- working models ----------

class SeparationDetected(DeductError):
    default_stage = "fit"

    def __init__(self, message: str, model=None, **kwargs):
        super().__init__(message, **kwargs)
        # clamped fit, usable by callers that want to continue
        self.model = model


class DegenerateSelection(DeductError):
    default_stage = "fit"


class NonConvergence(DeductError):
    default_stage = "fit"


class ZeroVariance(DeductError):
    default_stage = "fit"


class DegenerateExtension(DeductError):
    default_stage = "extend"


class ZeroMarginal(DeductError):
    default_stage = "estimand"


# ---------- solving / baselines ----------

class NoRoot(DeductError):
    default_stage = "solve"


class NoCompleteCases(DeductError):
    default_stage = "baseline"
