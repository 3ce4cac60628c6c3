import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from common.job_schema import EstimatorOutcome, JobStatus, ReplicateJob
from common.result_schema import EstimationResult, ReplicateSummary
from deduct.baselines import km_complete_case, km_stratified
from deduct.engine import DeductiveEstimator
from deduct.simulation import GenerativeModel, exact_tau, generate_replicate
from deduct.working_models import Variant

logger = logging.getLogger(__name__)

ESTIMATORS = (
    "DE.Cox", "DE.LN", "DE.Cox.WrongS", "DE.LN.WrongS",
    "DE.Cox(alpha=0)", "DE.LN(alpha=0)", "KM.S", "KM.C",
)

SLUGS = {
    "de-cox": "DE.Cox",
    "de-ln": "DE.LN",
    "de-cox-wrongs": "DE.Cox.WrongS",
    "de-ln-wrongs": "DE.LN.WrongS",
    "de-cox-a0": "DE.Cox(alpha=0)",
    "de-ln-a0": "DE.LN(alpha=0)",
    "km-s": "KM.S",
    "km-c": "KM.C",
}


def resolve_estimator(name: str) -> str:
    """Canonical estimator name from either its table name or CLI slug."""
    if name in ESTIMATORS:
        return name
    key = name.strip().lower().replace("α", "alpha")
    if key in SLUGS:
        return SLUGS[key]
    for canonical in ESTIMATORS:
        if canonical.lower() == key:
            return canonical
    raise ValueError(f"unknown estimator {name!r}; choose from {', '.join(SLUGS)}")


def run_estimator(name: str, data, t: float, seed: int = 0, n_boot: int = 1000, epsilon: float = 1e-4) -> EstimationResult:
    name = resolve_estimator(name)
    if name == "KM.C":
        return km_complete_case(data, t)
    if name == "KM.S":
        return km_stratified(data, t, n_boot=n_boot, seed=seed)
    estimator = DeductiveEstimator(
        data,
        variant=Variant.COX if name.startswith("DE.Cox") else Variant.LOGNORMAL,
        epsilon=epsilon,
        wrong_s="WrongS" in name,
        alpha_zero="alpha=0" in name,
    )
    return estimator.estimate(t)


def process_job(job: ReplicateJob, n_boot: int = 1000, epsilon: float = 1e-4) -> Tuple[ReplicateJob, List[EstimatorOutcome]]:
    """Draw the replicate dataset and run every estimator on it.

    A failing estimator yields a FAILED outcome; the job itself fails only
    when the replicate cannot be generated.
    """
    outcomes = []
    try:
        job.status = JobStatus.PROCESSING
        data = generate_replicate(GenerativeModel(job.gm), job.n, job.seed, job.replicate)
        for name in job.estimators:
            try:
                res = run_estimator(name, data, job.t, seed=job.seed * 100_003 + job.replicate, n_boot=n_boot, epsilon=epsilon)
                outcomes.append(EstimatorOutcome(
                    job_id=job.id, replicate=job.replicate, estimator=name,
                    tau_hat=res.tau_hat, ci_lo=res.ci_lo, ci_hi=res.ci_hi,
                ))
            except Exception as e:
                outcomes.append(EstimatorOutcome(
                    job_id=job.id, replicate=job.replicate, estimator=name,
                    status=JobStatus.FAILED, error=str(e),
                ))
                logger.debug("Estimator %s failed on job %s: %s", name, job.id, e)
        job.status = JobStatus.DONE
        logger.debug("Processed job %s", job.id)
    except Exception as e:
        job.status = JobStatus.FAILED
        job.error = str(e)
        logger.warning("Failed job %s: %s", job.id, e)
    return job, outcomes


def make_jobs(gm: GenerativeModel, n: int, n_rep: int, seed: int, estimators: Sequence[str], t: float = 0.7) -> List[ReplicateJob]:
    names = [resolve_estimator(e) for e in estimators]
    gm = GenerativeModel(gm)
    return [
        ReplicateJob(id=f"{gm.value}-n{n}-r{i:05d}", gm=gm.value, n=n, replicate=i, seed=seed, estimators=names, t=t)
        for i in range(n_rep)
    ]


def summarize(outcomes: List[EstimatorOutcome], truth: float, gm: str, n: int, estimators: Sequence[str]) -> List[ReplicateSummary]:
    """Bias, SD and 95% CI coverage in percentage points; failures excluded and counted."""
    summaries = []
    for name in estimators:
        mine = [o for o in outcomes if o.estimator == name]
        ok = [o for o in mine if o.status == JobStatus.DONE and o.tau_hat is not None]
        taus = np.array([o.tau_hat for o in ok])
        covered = [o.ci_lo <= truth <= o.ci_hi for o in ok if o.ci_lo is not None and o.ci_hi is not None]
        summaries.append(ReplicateSummary(
            gm=gm,
            n=n,
            estimator=name,
            bias=100.0 * (float(taus.mean()) - truth) if taus.size else None,
            cp=100.0 * float(np.mean(covered)) if covered else None,
            sd=100.0 * float(taus.std(ddof=1)) if taus.size > 1 else (0.0 if taus.size else None),
            n_replicates=len(mine),
            n_fail=len(mine) - len(ok),
            truth=truth,
        ))
    return summaries


def _pool_map(fn: Callable, jobs: List[ReplicateJob], workers: int):
    if workers <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map keeps job order, so the reduction does not depend on scheduling
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


class _JobRunner:
    def __init__(self, n_boot: int, epsilon: float):
        self.n_boot = n_boot
        self.epsilon = epsilon

    def __call__(self, job: ReplicateJob):
        return process_job(job, self.n_boot, self.epsilon)


def run_replicates(
    gm: GenerativeModel,
    n: int,
    estimators: Sequence[str],
    n_rep: int,
    seed: int = 0,
    t: float = 0.7,
    workers: int = 1,
    n_boot: int = 1000,
    epsilon: float = 1e-4,
) -> Tuple[List[ReplicateSummary], List[ReplicateJob]]:
    """Replicate datasets from `gm`, every estimator on each, summarized against the exact tau."""
    gm = GenerativeModel(gm)
    jobs = make_jobs(gm, n, n_rep, seed, estimators, t)
    truth = exact_tau(gm, t)
    logger.info("Running %d replicates of %s at n=%d with %d worker(s)", n_rep, gm.value, n, workers)

    results = _pool_map(_JobRunner(n_boot, epsilon), jobs, workers)
    done_jobs = [job for job, _ in results]
    outcomes = [o for _, outs in results for o in outs]
    failed = sum(1 for j in done_jobs if j.status == JobStatus.FAILED)
    if failed:
        logger.warning("%d of %d replicate jobs failed", failed, n_rep)

    names = [resolve_estimator(e) for e in estimators]
    summaries = summarize(outcomes, truth, gm.value, n, names)
    for s in summaries:
        logger.info("%s n=%d %s: bias=%s cp=%s sd=%s (failed %d)", s.gm, s.n, s.estimator, s.bias, s.cp, s.sd, s.n_fail)
    return summaries, done_jobs
