import functools
import logging
import math
from pathlib import Path
from typing import List, Optional

import click
from pydantic import ValidationError

from common.config import LOCAL_JOBS_FILE, LOCAL_OUTPUT_DIR, LOG_LEVEL, VERSION, load_settings
from common.result_schema import RunMetadata
from common.storage import save_jobs, sidecar_path, write_json, write_rows_csv
from deduct.baselines import km_complete_case, km_stratified
from deduct.data_model import ColumnSpec, parse_csv
from deduct.engine import DeductiveEstimator
from deduct.errors import DeductError
from deduct.simulation import GenerativeModel, apply_gamma_restriction, descriptive_stats
from deduct.support import build_support
from deduct.working_models import Variant
from worker.worker import resolve_estimator, run_replicates

logger = logging.getLogger(__name__)

ESTIMATE_COLUMNS = ["t", "estimator", "mortality", "ci_lo", "ci_hi", "alpha_hat", "se"]
SIMULATE_COLUMNS = ["gm", "n", "estimator", "bias", "cp", "sd", "n_fail"]


# ---------- option parsing ----------

def _split(value: Optional[str]) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()] if value else []


def _float_list(ctx, param, value):
    if value is None:
        return None
    try:
        return [float(v) for v in _split(value)]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {value!r}")


def _int_list(ctx, param, value):
    if value is None:
        return None
    try:
        values = [int(v) for v in _split(value)]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {value!r}")
    if not values or min(values) < 2:
        raise click.BadParameter("sample sizes must be at least 2")
    return values


def _t_grid(ctx, param, value):
    """a:b:step -> [a, a + step, ..., <= b]"""
    if value is None:
        return None
    try:
        a, b, step = (float(v) for v in value.split(":"))
    except ValueError:
        raise click.BadParameter(f"expected a:b:step, got {value!r}")
    if step <= 0 or b < a or a < 0:
        raise click.BadParameter("need 0 <= a <= b and step > 0")
    k = int(math.floor((b - a) / step + 1e-9))
    return [round(a + i * step, 10) for i in range(k + 1)]


def _bracket(ctx, param, value):
    if value is None:
        return None
    values = _float_list(ctx, param, value)
    if len(values) != 2:
        raise click.BadParameter("bracket is lo,hi")
    return tuple(values)


def _estimators(ctx, param, value):
    try:
        return [resolve_estimator(v) for v in _split(value)]
    except ValueError as e:
        raise click.BadParameter(str(e))


def _gm(value: str) -> GenerativeModel:
    return GenerativeModel(value if value.upper().startswith("GM") else f"GM{value}")


def _settings(config: Optional[Path], **overrides):
    try:
        return load_settings(config, **overrides)
    except (ValidationError, ValueError) as e:
        raise click.UsageError(f"invalid settings: {e}")


def pipeline(fn):
    """Pipeline failures exit 1 with their stage label on stderr."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DeductError as e:
            click.echo(f"error: {e}", err=True)
            click.get_current_context().exit(1)

    return wrapper


# ---------- commands ----------

@click.group(name="deduct")
@click.option("--log-level", default=LOG_LEVEL, show_default=True, help="Logging level for stderr diagnostics.")
@click.version_option(VERSION, prog_name="deduct")
def cli(log_level: str):
    """Deductive estimation of survival probability in double-sampling designs."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--z-cols", default="", help="Comma-separated baseline covariate columns.")
@click.option("--w-cols", default="", help="Comma-separated post-dropout covariate columns.")
@click.option("--variant", type=click.Choice([v.value for v in Variant]), default=None)
@click.option("--estimator", type=click.Choice(["de", "km-s", "km-c"]), default=None)
@click.option("--t", "times", callback=_float_list, default=None, help="Comma-separated evaluation times.")
@click.option("--t-grid", callback=_t_grid, default=None, help="Mortality curve grid a:b:step.")
@click.option("--epsilon", type=float, default=None)
@click.option("--alpha-zero", is_flag=True, help="Report tau at alpha = 0 without solving.")
@click.option("--wrong-s", is_flag=True, help="Intercept-only selection model.")
@click.option("--gamma", type=float, default=None, help="Mask double-samples with c - L > gamma.")
@click.option("--dropout-col", default=None, help="w column holding the dropout time (default L).")
@click.option("--bracket", callback=_bracket, default=None, help="Initial alpha bracket lo,hi.")
@click.option("--surv-method", type=click.Choice(["km", "na"]), default=None)
@click.option("--use-w-in-observed", is_flag=True, help="Use w as a covariate in the r_obs=1 fits.")
@click.option("--lenient-selection", is_flag=True, help="Clamp separated selection fits instead of failing.")
@click.option("--n-boot", type=click.IntRange(min=1), default=None, help="KM.S bootstrap resamples.")
@click.option("--seed", type=int, default=None)
@click.option("--config", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--dump-support", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--dump-fits", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--gateaux-out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@pipeline
def estimate(data_path, z_cols, w_cols, variant, estimator, times, t_grid, epsilon, alpha_zero, wrong_s, gamma,
             dropout_col, bracket, surv_method, use_w_in_observed, lenient_selection, n_boot, seed, config, out,
             dump_support, dump_fits, gateaux_out):
    """Estimate mortality 1 - P(T > t) from a double-sampling CSV.

    Runs in one process: Gateaux values are vectorized over the support, so
    there is no --workers here; it parallelizes replicates in `simulate`.
    """
    settings = _settings(
        config,
        variant=variant,
        estimator=estimator,
        t=t_grid or times,
        epsilon=epsilon,
        alpha_zero=alpha_zero or None,
        wrong_s=wrong_s or None,
        gamma=gamma,
        dropout_col=dropout_col,
        bracket=bracket,
        surv_method=surv_method,
        use_w_in_observed=use_w_in_observed or None,
        strict_selection=False if lenient_selection else None,
        n_boot=n_boot,
        seed=seed,
    )
    data = parse_csv(data_path, ColumnSpec(z_cols=_split(z_cols), w_cols=_split(w_cols)))
    if settings.gamma is not None:
        before = data.m1
        data = apply_gamma_restriction(data, settings.gamma, settings.dropout_col)
        logger.info("gamma=%g keeps %d of %d double-samples", settings.gamma, data.m1, before)

    fits = None
    if settings.estimator == "de":
        de = DeductiveEstimator(
            data,
            variant=Variant(settings.variant),
            epsilon=settings.epsilon,
            wrong_s=settings.wrong_s,
            alpha_zero=settings.alpha_zero,
            bracket=settings.bracket,
            bracket_limit=settings.bracket_limit,
            surv_method=settings.surv_method,
            use_w_in_observed=settings.use_w_in_observed,
            strict_selection=settings.strict_selection,
        )
        results = de.estimate_curve(settings.t)
        support = de.fit.support
        fits = de.fit.summary()
    elif settings.estimator == "km-s":
        results = [km_stratified(data, t, n_boot=settings.n_boot, seed=settings.seed) for t in settings.t]
        support = None
    else:
        results = [km_complete_case(data, t) for t in settings.t]
        support = None

    out = out or LOCAL_OUTPUT_DIR / "estimate.csv"
    write_rows_csv([r.mortality_row() for r in results], out, ESTIMATE_COLUMNS)

    if gateaux_out is not None:
        rows = [
            {"t": r.t, "row_id": int(row_id), "gateaux": value}
            for r in results
            for row_id, value in zip(data.row_ids, r.gateaux_values)
        ]
        write_rows_csv(rows, gateaux_out, ["t", "row_id", "gateaux"])
    if dump_support is not None:
        support = support or build_support(data)
        dump_support.parent.mkdir(parents=True, exist_ok=True)
        support.to_frame().to_csv(dump_support, index=False, na_rep="NA")
    if dump_fits is not None:
        if fits is None:
            click.echo("warning: --dump-fits only applies to the deductive estimator", err=True)
        else:
            dump_fits.parent.mkdir(parents=True, exist_ok=True)
            dump_fits.write_text(RunMetadata(command="fits", version=VERSION, fits=fits).model_dump_json(indent=2))

    metadata = RunMetadata(
        command="estimate",
        version=VERSION,
        seed=settings.seed,
        settings=settings.model_dump(mode="json"),
        data=str(data_path),
        n=data.n,
        results=[r.model_copy(update={"gateaux_values": []}) for r in results],
        fits=fits,
    )
    write_json(metadata, sidecar_path(out))
    for r in results:
        click.echo(f"{r.estimator}\tt={r.t:g}\tmortality={r.mortality:.4f}")
    click.echo(f"Wrote {out}")


@cli.command()
@click.option("--gm", type=click.Choice(["1", "2", "GM1", "GM2"]), required=True)
@click.option("--n", "sizes", callback=_int_list, default="200", show_default=True, help="Comma-separated sample sizes.")
@click.option("--reps", type=click.IntRange(min=1), default=300, show_default=True)
@click.option("--estimators", callback=_estimators, default="de-cox,de-ln,km-s,km-c", show_default=True)
@click.option("--t", "t_eval", type=float, default=0.7, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Processes for replicates.")
@click.option("--n-boot", type=click.IntRange(min=1), default=None, help="KM.S bootstrap resamples per replicate.")
@click.option("--epsilon", type=float, default=None)
@click.option("--config", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@click.option("--jobs-out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Replicate job ledger.")
@pipeline
def simulate(gm, sizes, reps, estimators, t_eval, seed, workers, n_boot, epsilon, config, out, jobs_out):
    """Replicate a generative model and tabulate bias, coverage and SD."""
    settings = _settings(config, t=[t_eval], seed=seed, workers=workers, n_boot=n_boot, epsilon=epsilon)
    model = _gm(gm)
    summaries, jobs = [], []
    for n in sizes:
        rows, done = run_replicates(
            model, n, estimators, reps,
            seed=settings.seed, t=t_eval, workers=settings.workers,
            n_boot=settings.n_boot, epsilon=settings.epsilon,
        )
        summaries.extend(rows)
        jobs.extend(done)

    out = out or LOCAL_OUTPUT_DIR / f"simulate_{model.value}.csv"
    write_rows_csv([s.model_dump(include=set(SIMULATE_COLUMNS)) for s in summaries], out, SIMULATE_COLUMNS)
    save_jobs(jobs, jobs_out or LOCAL_JOBS_FILE)
    metadata = RunMetadata(
        command="simulate",
        version=VERSION,
        seed=settings.seed,
        settings={**settings.model_dump(mode="json"), "gm": model.value, "n": sizes, "reps": reps, "estimators": estimators},
        summaries=summaries,
    )
    write_json(metadata, sidecar_path(out))
    click.echo(f"Wrote {out}")


@cli.command()
@click.option("--gm", type=click.Choice(["1", "2", "GM1", "GM2"]), required=True)
@click.option("--n-mc", type=click.IntRange(min=100), default=1_000_000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--t", "t_eval", type=float, default=0.7, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
@pipeline
def describe(gm, n_mc, seed, t_eval, out):
    """Descriptive statistics of a generative model from one large draw."""
    row = descriptive_stats(_gm(gm), n_mc=n_mc, seed=seed, t=t_eval)
    for key, value in row.model_dump().items():
        click.echo(f"{key}\t{value}")
    if out is not None:
        write_rows_csv([row.model_dump()], out)
        write_json(RunMetadata(command="describe", version=VERSION, seed=seed, n=n_mc, settings={"gm": row.gm, "t": t_eval}), sidecar_path(out))


if __name__ == "__main__":
    cli()
