from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class SolverDiagnostics(BaseModel):
    bracket: List[float]
    iterations: int = 0
    evaluations: int = 0
    residual: Optional[float] = None
    root_found: bool = True
    sign_changes: List[List[float]] = []


class EstimationResult(BaseModel):
    """One estimate of tau = P(T > t); shared by the deductive and Kaplan-Meier estimators."""

    estimator: str
    t: float
    tau_hat: float
    se: Optional[float] = Field(default=None, ge=0)
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None
    n: int
    variant: Optional[str] = None
    alpha_hat: Optional[float] = None
    epsilon: Optional[float] = None
    solver: Optional[SolverDiagnostics] = None
    support: Dict[str, float] = {}
    gateaux_values: List[float] = []
    warnings: List[str] = []

    @property
    def mortality(self) -> float:
        return 1.0 - self.tau_hat

    def mortality_row(self) -> dict:
        """Plot-ready row: mortality 1 - tau with the CI flipped accordingly."""
        return {
            "t": self.t,
            "estimator": self.estimator,
            "mortality": self.mortality,
            "ci_lo": None if self.ci_hi is None else 1.0 - self.ci_hi,
            "ci_hi": None if self.ci_lo is None else 1.0 - self.ci_lo,
            "alpha_hat": self.alpha_hat,
            "se": self.se,
        }


class BaselineResult(EstimationResult):
    n_boot: int = 0
    n_boot_skipped: int = 0


class ReplicateSummary(BaseModel):
    gm: str
    n: int
    estimator: str
    bias: Optional[float] = None             # percentage points
    cp: Optional[float] = Field(default=None, ge=0, le=100)
    sd: Optional[float] = Field(default=None, ge=0)
    n_replicates: int
    n_fail: int = 0
    truth: float


class Table1Row(BaseModel):
    gm: str
    n_mc: int
    tau: float
    p_robs0: float
    p_s1_given_robs0: float
    selection_prob_p10: float
    selection_prob_p90: float
    p_delta1_given_observed: float
    x_p10: float
    x_p90: float
    corr_tc_given_z_robs: float
    corr_tc_given_z_l_robs0: float


class RunMetadata(BaseModel):
    command: str
    version: str
    seed: Optional[int] = None
    settings: dict = {}
    data: Optional[str] = None
    n: Optional[int] = None
    results: List[EstimationResult] = []
    summaries: List[ReplicateSummary] = []
    fits: Optional[dict] = None
