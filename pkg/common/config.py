import os
from pathlib import Path
from typing import List, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

load_dotenv()

BASE_DIR = Path(__file__).resolve().parents[1]

LOCAL_OUTPUT_DIR = Path(os.getenv("DEDUCT_OUTPUT_DIR", BASE_DIR / "data" / "output"))
LOCAL_JOBS_FILE = Path(os.getenv("DEDUCT_JOBS_FILE", LOCAL_OUTPUT_DIR.parent / "jobs.json"))

LOG_LEVEL = os.getenv("DEDUCT_LOG_LEVEL", "INFO")
DEFAULT_EPSILON = float(os.getenv("DEDUCT_EPSILON", "1e-4"))
DEFAULT_WORKERS = int(os.getenv("DEDUCT_WORKERS", "1"))

VERSION = "0.3.0"


def ensure_local_dirs() -> None:
    LOCAL_OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
    LOCAL_JOBS_FILE.parent.mkdir(parents=True, exist_ok=True)
    if not LOCAL_JOBS_FILE.exists():
        LOCAL_JOBS_FILE.write_text("[]")


class RunSettings(BaseModel):
    """Every tunable of an estimate or simulate run."""

    model_config = ConfigDict(extra="forbid")

    variant: str = "cox"
    estimator: str = "de"
    epsilon: float = Field(default=DEFAULT_EPSILON, gt=0, lt=1)
    bracket: Tuple[float, float] = (-5.0, 5.0)
    bracket_limit: float = Field(default=50.0, gt=0)
    surv_method: str = "km"
    alpha_zero: bool = False
    wrong_s: bool = False
    use_w_in_observed: bool = False
    strict_selection: bool = True
    gamma: Optional[float] = Field(default=None, gt=0)
    dropout_col: str = "L"
    t: List[float] = [0.7]
    n_boot: int = Field(default=1000, ge=1)
    seed: int = 0
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)

    @field_validator("variant")
    @classmethod
    def _variant(cls, v: str) -> str:
        if v not in ("cox", "lognormal"):
            raise ValueError("variant must be 'cox' or 'lognormal'")
        return v

    @field_validator("estimator")
    @classmethod
    def _estimator(cls, v: str) -> str:
        if v not in ("de", "km-s", "km-c"):
            raise ValueError("estimator must be one of de, km-s, km-c")
        return v

    @field_validator("surv_method")
    @classmethod
    def _surv(cls, v: str) -> str:
        if v not in ("km", "na"):
            raise ValueError("surv_method must be 'km' or 'na'")
        return v

    @field_validator("t")
    @classmethod
    def _times(cls, v: List[float]) -> List[float]:
        if not v or any(x < 0 for x in v):
            raise ValueError("t must be a nonempty list of nonnegative times")
        return v

    @model_validator(mode="after")
    def _bracket(self):
        lo, hi = self.bracket
        if not lo < hi:
            raise ValueError("bracket must satisfy lo < hi")
        return self


def load_settings(config_path: Optional[Path] = None, **overrides) -> RunSettings:
    """Defaults < environment < YAML file < explicit overrides (None means unset)."""
    values = {}
    if config_path is not None:
        content = yaml.safe_load(Path(config_path).read_text()) or {}
        if not isinstance(content, dict):
            raise ValueError(f"{config_path} must hold a flat key/value mapping")
        values.update(content)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunSettings(**values)
