import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional

import pandas as pd
from pydantic import BaseModel

from common.config import LOCAL_JOBS_FILE, ensure_local_dirs
from common.job_schema import JobStatus, ReplicateJob

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------------------
# JOB LEDGER
# data/jobs.json keeps every replicate job of the last simulate run.
# ------------------------------------------------------------------------------

def _read_local_jobs(path: Optional[Path] = None) -> List[ReplicateJob]:
    path = Path(path or LOCAL_JOBS_FILE)
    content = path.read_text() if path.exists() else "[]"
    if not content.strip():
        content = "[]"
    return [ReplicateJob(**x) for x in json.loads(content)]


def _write_local_jobs(jobs: List[ReplicateJob], path: Optional[Path] = None) -> None:
    path = Path(path or LOCAL_JOBS_FILE)
    if path == LOCAL_JOBS_FILE:
        ensure_local_dirs()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([j.model_dump(mode="json") for j in jobs], indent=2))


def save_jobs(jobs: Iterable[ReplicateJob], path: Optional[Path] = None) -> Path:
    jobs = list(jobs)
    _write_local_jobs(jobs, path)
    failed = sum(1 for j in jobs if j.status == JobStatus.FAILED)
    logger.info("Wrote %d jobs (%d failed) to %s", len(jobs), failed, path or LOCAL_JOBS_FILE)
    return Path(path or LOCAL_JOBS_FILE)


def load_jobs(path: Optional[Path] = None) -> List[ReplicateJob]:
    return _read_local_jobs(path)


# ------------------------------------------------------------------------------
# RESULT FILES
# ------------------------------------------------------------------------------

def write_rows_csv(rows: List[dict], path: Path, columns: Optional[List[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, index=False, na_rep="NA")
    return path


def write_json(model: BaseModel, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2))
    return path


def sidecar_path(path: Path) -> Path:
    """result.csv -> result.json"""
    return Path(path).with_suffix(".json")
