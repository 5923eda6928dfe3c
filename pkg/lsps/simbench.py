"""Synthetic benchmarks: pinpointability simulations, estimator sweeps, proxy removal."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .config import PipelineConfig, RidgeConfig, Sim1Config, Sim2Config, SweepConfig
from .engine.effect import estimate_unadjusted
from .engine.propensity import column_correlations
from .engine.solver import cross_validated_r_squared
from .exceptions import LspsError
from .models import (
    CohortDataset,
    ContinuousOutcome,
    EstimatorMethod,
    MethodSummary,
    ProxyRemovalResult,
    ReplicateRecord,
    SimDataset,
    SimResult,
    TimeToEventOutcome,
)
from .pipeline import run_analysis
from .utils.rng import stream

logger = logging.getLogger(__name__)

SimConfig = Union[Sim1Config, Sim2Config]

P_CLIP = 1e-10
_ROW_CHUNK = 1024


def _sparse_normal(
    rng: np.random.Generator, m: int, sd: float, sparsity: float
) -> np.ndarray:
    """Normal(0, sd) coefficients, all but round(m·(1−sparsity)) of them zeroed.

    At least one coefficient is kept.
    """
    values = rng.normal(0.0, 1.0, m) * sd
    keep = max(1, int(round(m * (1.0 - sparsity))))
    mask = np.zeros(m, dtype=bool)
    mask[rng.permutation(m)[:keep]] = True
    return np.where(mask, values, 0.0)


def _bernoulli_design(
    rng: np.random.Generator, v: np.ndarray, beta_x: np.ndarray
) -> np.ndarray:
    """x ~ Bernoulli(σ(vᵀβ_x)), drawn in row chunks, stored Fortran-ordered float32."""
    n, m = v.shape[0], beta_x.shape[1]
    x = np.empty((n, m), dtype=np.float32, order="F")
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        p = expit(v[start:stop] @ beta_x)
        x[start:stop] = rng.random(p.shape) < p
    return x


def _linear(x: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """x @ coef in float64 using only the non-zero coefficients."""
    idx = np.flatnonzero(coef)
    if idx.size == 0:
        return np.zeros(x.shape[0])
    return x[:, idx].astype(np.float64) @ coef[idx]


def generate_sim1(cfg: Sim1Config, replicate: int, point: int = 0) -> SimDataset:
    """
    Direct pinpointability: the confounder u is a sparse linear function of x
    plus Normal(0, σ²) noise.

    Coefficients are drawn per (master_seed, replicate); subject-level draws
    per (master_seed, point, replicate).
    """
    coef_rng = stream(cfg.master_seed, "sim1", "coefficients", replicate)
    beta_x = coef_rng.normal(0.0, cfg.beta_x_sd, (cfg.k_latent, cfg.m))
    beta_u = _sparse_normal(coef_rng, cfg.m, 1.0, cfg.sparsity_u)
    gamma_x = _sparse_normal(coef_rng, cfg.m, cfg.gamma_x_sd, cfg.sparsity_gamma)
    eta_x = np.where(gamma_x != 0.0, coef_rng.normal(0.0, 1.0, cfg.m) * cfg.eta_x_sd, 0.0)

    rng = stream(cfg.master_seed, "sim1", "subjects", point, replicate)
    v = (rng.random((cfg.n, cfg.k_latent)) < 0.5).astype(np.float64)
    x = _bernoulli_design(rng, v, beta_x)
    u = _linear(x, beta_u) + rng.normal(0.0, math.sqrt(cfg.sigma2), cfg.n)
    p_true = np.clip(expit(_linear(x, gamma_x) + cfg.gamma_u * u), P_CLIP, 1.0 - P_CLIP)
    t = (rng.random(cfg.n) < p_true).astype(np.int8)
    noise = rng.normal(0.0, math.sqrt(cfg.outcome_noise_var), cfg.n)
    y = _linear(x, eta_x) + cfg.eta_u * u + cfg.nu_true * t + noise
    return SimDataset(
        v=v, x=x, u=u, t=t, y=y, p_true=p_true, confounders=np.flatnonzero(gamma_x)
    )


def generate_sim2(cfg: Sim2Config, replicate: int, point: int = 0) -> SimDataset:
    """
    Pinpointability through a latent v: u and x both depend only on v.

    The first `n_confounders` covariates carry unit treatment and outcome
    coefficients; the outcome is noiseless.
    """
    coef_rng = stream(cfg.master_seed, "sim2", "coefficients", replicate)
    beta_u = coef_rng.normal(0.0, 1.0, cfg.k_latent)
    beta_x = coef_rng.normal(0.0, 1.0, (cfg.k_latent, cfg.m))
    gamma_x = np.zeros(cfg.m)
    gamma_x[: cfg.n_confounders] = 1.0

    rng = stream(cfg.master_seed, "sim2", "subjects", point, replicate)
    v = (rng.random((cfg.n, cfg.k_latent)) < 0.5).astype(np.float64)
    u = v @ beta_u
    x = _bernoulli_design(rng, v, beta_x)
    confounding = _linear(x, gamma_x)
    p_true = np.clip(expit(confounding + cfg.gamma_u * u), P_CLIP, 1.0 - P_CLIP)
    t = (rng.random(cfg.n) < p_true).astype(np.int8)
    y = confounding + cfg.eta_u * u + cfg.nu_true * t
    return SimDataset(
        v=v, x=x, u=u, t=t, y=y, p_true=p_true, confounders=np.arange(cfg.n_confounders)
    )


def _as_cohort(ds: SimDataset) -> CohortDataset:
    return CohortDataset(
        covariates=ds.x,
        covariate_names=[f"x{j}" for j in range(ds.x.shape[1])],
        treatment=ds.t,
        outcome=ContinuousOutcome(ds.y),
    )


def run_estimator(
    ds: SimDataset, method: EstimatorMethod, config: Optional[PipelineConfig] = None
) -> Tuple[float, Optional[np.ndarray], List[str]]:
    """
    Estimate ν on one simulated dataset.

    Returns:
        (estimate, propensity scores or None, pipeline warnings)
    """
    config = config or PipelineConfig()
    if method == EstimatorMethod.UNADJUSTED:
        effect = estimate_unadjusted(ContinuousOutcome(ds.y), ds.t)
        return effect.nu_hat, None, []
    data = _as_cohort(ds)
    if method == EstimatorMethod.ORACLE:
        data = data.with_covariate("u", ds.u)
    elif method == EstimatorMethod.MANUAL:
        data = data.keep_covariates([data.covariate_names[j] for j in ds.confounders])
    report = run_analysis(data, config)
    assert report.effect is not None
    return report.effect.nu_hat, report.propensity.scores, list(report.warnings)


def pinpointability_r2(
    ds: SimDataset, config: Optional[RidgeConfig] = None, seed: int = 0
) -> float:
    """Held-out ridge R² of u regressed on x."""
    return cross_validated_r_squared(ds.x, ds.u, config, seed)


def aggregate(
    method: EstimatorMethod,
    estimates: Sequence[float],
    nu_true: float,
    ps_rmses: Optional[Sequence[Optional[float]]] = None,
) -> MethodSummary:
    """
    Bias, variance (population denominator) and RMSE of replicate estimates.

    Failed replicates carry NaN; they are counted and left out. The propensity
    RMSE pools squared errors over replicates of equal size.
    """
    values = np.asarray(estimates, dtype=np.float64)
    if len(values) < 2:
        raise ValueError(f"aggregate requires >=2 replicates, got {len(values)}")
    ok = values[np.isfinite(values)]
    n_failed = len(values) - len(ok)
    if len(ok) == 0:
        mean = bias = variance = rmse = math.nan
    else:
        mean = float(ok.mean())
        bias = mean - nu_true
        variance = float(np.mean((ok - mean) ** 2))
        rmse = math.sqrt(variance + bias**2)

    rmse_propensity = None
    if ps_rmses is not None:
        available = [r for r in ps_rmses if r is not None and math.isfinite(r)]
        if available:
            rmse_propensity = float(math.sqrt(np.mean(np.square(available))))
    return MethodSummary(
        method=method,
        estimates=values,
        mean_estimate=mean,
        bias=bias,
        variance=variance,
        rmse=rmse,
        rmse_propensity=rmse_propensity,
        n_failed=n_failed,
    )


def _generate(cfg: SimConfig, replicate: int, point: int) -> SimDataset:
    if isinstance(cfg, Sim1Config):
        return generate_sim1(cfg, replicate, point)
    return generate_sim2(cfg, replicate, point)


def _replicate_task(
    args: Tuple[SimConfig, int, int, PipelineConfig, bool, RidgeConfig]
) -> List[ReplicateRecord]:
    cfg, point, replicate, pipeline, compute_r2, ridge = args
    ds = _generate(cfg, replicate, point)
    r2: Optional[float] = None
    if compute_r2:
        try:
            r2 = pinpointability_r2(ds, ridge, seed=cfg.master_seed)
        except LspsError as e:
            logger.warning(f"Point {point} replicate {replicate}: R² unavailable: {e}")

    records = []
    for method in cfg.methods:
        try:
            estimate, scores, warnings = run_estimator(ds, method, pipeline)
        except (LspsError, ValueError) as e:
            message = f"{method.value} failed on point {point} replicate {replicate}: {e}"
            logger.warning(message)
            estimate, scores, warnings = math.nan, None, [message]
        ps_rmse = None
        if scores is not None:
            ps_rmse = float(np.sqrt(np.mean((scores - ds.p_true) ** 2)))
        records.append(
            ReplicateRecord(
                point=point,
                replicate=replicate,
                method=method,
                estimate=float(estimate),
                ps_rmse=ps_rmse,
                r2=r2,
                warnings=warnings,
            )
        )
    return records


def format_point_value(value: Any) -> str:
    return f"{value:g}" if isinstance(value, float) else str(value)


def run_sweep(
    base: SimConfig,
    sweep: SweepConfig,
    pipeline: Optional[PipelineConfig] = None,
) -> List[SimResult]:
    """
    Run every method on every replicate of every grid point.

    Each point overrides fields of `base`. Work is spread over `sweep.threads`
    processes; the output depends only on the configuration.
    """
    pipeline = pipeline or PipelineConfig()
    if not sweep.points:
        raise ValueError("Sweep grid is empty")
    configs: List[SimConfig] = []
    for overrides in sweep.points:
        configs.append(base.with_overrides(overrides))

    tasks = [
        (cfg, point, replicate, pipeline, sweep.compute_r2, sweep.ridge)
        for point, cfg in enumerate(configs)
        for replicate in range(cfg.replicates)
    ]
    logger.info(
        f"Sweeping {sweep.param} over {len(configs)} point(s), {len(tasks)} replicate run(s)"
    )
    records: List[ReplicateRecord] = []
    if sweep.threads == 1:
        for task in tasks:
            records.extend(_replicate_task(task))
    else:
        with ProcessPoolExecutor(max_workers=sweep.threads) as pool:
            for batch in pool.map(_replicate_task, tasks):
                records.extend(batch)
    records.sort(key=lambda r: (r.point, r.replicate))

    results = []
    for point, (cfg, overrides) in enumerate(zip(configs, sweep.points)):
        point_records = [r for r in records if r.point == point]
        methods: Dict[EstimatorMethod, MethodSummary] = {}
        for method in cfg.methods:
            chosen = [r for r in point_records if r.method == method]
            methods[method] = aggregate(
                method, [r.estimate for r in chosen], cfg.nu_true, [r.ps_rmse for r in chosen]
            )
        r2_values = [r.r2 for r in point_records if r.r2 is not None and r.method == cfg.methods[0]]
        result = SimResult(
            param=sweep.param,
            value=",".join(format_point_value(getattr(cfg, key)) for key in overrides),
            methods=methods,
            r2_pinpoint=float(np.mean(r2_values)) if r2_values else None,
            records=point_records,
        )
        logger.info(
            f"✓ {result.param}={result.value}: "
            + ", ".join(f"{m.value} rmse={s.rmse:.4f}" for m, s in methods.items())
        )
        results.append(result)
    return results


def generate_proxy_study(
    n: int = 4000,
    m: int = 500,
    n_strong: int = 10,
    n_moderate: int = 200,
    log_hr: float = 0.0,
    seed: int = 0,
) -> Tuple[CohortDataset, np.ndarray, List[str]]:
    """
    Survival cohort whose confounder u is pinpointed by many binary covariates.

    `n_strong` covariates track u closely, `n_moderate` weakly, the rest are
    noise. Returns the cohort, u, and a manual adjustment list made of the
    strong proxies plus five moderate ones.
    """
    if n_strong + n_moderate > m:
        raise ValueError("n_strong + n_moderate cannot exceed m")
    rng = stream(seed, "proxy-study")
    u = rng.normal(0.0, 1.0, n)
    loadings = np.zeros(m)
    loadings[:n_strong] = 3.0
    loadings[n_strong : n_strong + n_moderate] = 0.5
    offsets = rng.normal(-1.0, 0.5, m)
    x = (rng.random((n, m)) < expit(np.outer(u, loadings) + offsets)).astype(np.float32)
    x = np.asfortranarray(x)

    t = (rng.random(n) < expit(0.8 * u)).astype(np.int8)
    hazard = 0.1 * np.exp(log_hr * t + 0.8 * u)
    event_time = rng.exponential(1.0 / hazard)
    censor_time = rng.uniform(1.0, 30.0, n)
    time = np.minimum(event_time, censor_time)
    event = (event_time <= censor_time).astype(np.int8)

    names = [f"x{j}" for j in range(m)]
    data = CohortDataset(
        covariates=x,
        covariate_names=names,
        treatment=t,
        outcome=TimeToEventOutcome(time, event),
    )
    manual = names[:n_strong] + names[n_strong : n_strong + min(5, n_moderate)]
    return data, u, manual


def run_proxy_removal(
    data: CohortDataset,
    u: np.ndarray,
    manual: Sequence[str],
    n_remove: int = 10,
    config: Optional[PipelineConfig] = None,
) -> ProxyRemovalResult:
    """
    Hazard ratios from LSPS and a manual model, with and without the
    `n_remove` covariates most correlated with u.
    """
    config = config or PipelineConfig()
    corr = np.abs(np.nan_to_num(column_correlations(data.covariates, u)))
    order = np.argsort(-corr, kind="stable")[:n_remove]
    removed = [data.covariate_names[j] for j in order]
    reduced = data.drop_covariates(removed)

    def hazard_ratio(cohort: CohortDataset, include: Optional[List[str]]) -> float:
        if include is not None and not include:
            effect = estimate_unadjusted(cohort.outcome, cohort.treatment)
        else:
            effect = run_analysis(cohort, replace(config, include=include)).effect
        assert effect is not None
        return float(effect.hr)

    manual_kept = [name for name in manual if name not in set(removed)]
    result = ProxyRemovalResult(
        lsps_with=hazard_ratio(data, None),
        lsps_without=hazard_ratio(reduced, None),
        manual_with=hazard_ratio(data, list(manual)),
        manual_without=hazard_ratio(reduced, manual_kept),
        removed=removed,
    )
    logger.info(
        f"✓ Removing {len(removed)} proxies shifted the HR by {result.lsps_shift:.3f} (LSPS) "
        f"and {result.manual_shift:.3f} (manual)"
    )
    return result
