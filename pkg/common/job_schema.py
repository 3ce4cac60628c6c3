from enum import Enum
from typing import Optional

from pydantic import BaseModel


class JobStatus(str, Enum):
    PENDING = "PENDING"
    PROCESSING = "PROCESSING"
    DONE = "DONE"
    FAILED = "FAILED"


class ReplicateJob(BaseModel):
    id: str
    gm: str                  # GM1 / GM2
    n: int
    replicate: int           # index into the run's seed substreams
    seed: int                # run seed the substream is spawned from
    estimators: list[str]
    t: float = 0.7
    status: JobStatus = JobStatus.PENDING
    error: Optional[str] = None


class EstimatorOutcome(BaseModel):
    job_id: str
    replicate: int
    estimator: str
    tau_hat: Optional[float] = None
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    status: JobStatus = JobStatus.DONE
    error: Optional[str] = None
