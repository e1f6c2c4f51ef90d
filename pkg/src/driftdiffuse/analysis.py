"""Post-processing: diffusivity curves, convergence fits, mixing decay,
and the small-diffusivity (residual) sweep."""

from __future__ import annotations

import math
import multiprocessing
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .ensemble import (LABEL_KICKS, LABEL_MODES, LABEL_OU_INIT,
                       LABEL_OU_NOISE, ExperimentConfig, MomentAccumulator,
                       SeedPolicy, collect_final_positions,
                       estimate_mean_drift, run_ensemble)
from .errors import ConfigurationError, NonConvergenceError
from .field import sample_modes

__all__ = [
    "DiffusivityCurve",
    "SlopeFit",
    "DecayCurve",
    "effective_diffusivity",
    "convergence_study",
    "decay_diagnostic",
    "residual_sweep",
    "fit_loglog_slope",
]


@dataclass(frozen=True)
class DiffusivityCurve:
    """Estimated effective diffusivity matrix per record time."""

    times: np.ndarray        # (n_rec,)
    matrix: np.ndarray       # (n_rec, d, d)
    stderr: np.ndarray       # (n_rec, d); diagonal entries only
    count: int
    variant: str             # "raw" | "drift-corrected"


@dataclass(frozen=True)
class SlopeFit:
    """Ordinary least squares fit in transformed coordinates."""

    abscissae: np.ndarray
    ordinates: np.ndarray
    slope: float
    intercept: float
    residual_rms: float


@dataclass(frozen=True)
class DecayCurve:
    """Across-realization variance of the inner-averaged velocity per step."""

    steps: np.ndarray
    times: np.ndarray
    variance: np.ndarray
    floor: float
    rate: float | None       # decay rate of the variance; None if unfit
    fit_window: np.ndarray   # boolean mask of points used in the fit


def effective_diffusivity(acc: MomentAccumulator,
                          variant: str = "raw") -> DiffusivityCurve:
    """D(t) = <X (x) X> / (2t), optionally with the mean drift removed.

    The drift-corrected variant replaces X by X - n * B_hat where B_hat is
    the estimated mean deterministic increment per step.  Standard errors
    of the diagonal entries come from the sample variance of X_i^2 across
    paths (fourth-power sums kept by the accumulator).
    """
    if variant not in ("raw", "drift-corrected"):
        raise ConfigurationError(f"unknown estimator variant {variant!r}")
    if acc.count < 2:
        raise ConfigurationError(
            "need at least 2 successful paths for a diffusivity estimate")

    t = acc.times[:, None, None]
    mean_xx = acc.sum_xx / acc.count
    if variant == "drift-corrected":
        b_hat = estimate_mean_drift(acc)
        steps = np.round(acc.times / acc.dt)
        shift = steps[:, None] * b_hat[None, :]          # (n_rec, d)
        mean_x = acc.sum_x / acc.count
        cross = mean_x[:, :, None] * shift[:, None, :]
        mean_xx = (mean_xx - cross - cross.transpose(0, 2, 1)
                   + shift[:, :, None] * shift[:, None, :])
    matrix = mean_xx / (2.0 * t)

    # Var(X_i^2) across paths, from second and fourth power sums.
    mean_x2 = np.einsum("rii->ri", acc.sum_xx) / acc.count
    var_x2 = np.maximum(acc.sum_x4 / acc.count - mean_x2 ** 2, 0.0)
    stderr = np.sqrt(var_x2 / acc.count) / (2.0 * acc.times[:, None])
    return DiffusivityCurve(times=acc.times.copy(), matrix=matrix,
                            stderr=stderr, count=acc.count, variant=variant)


def fit_loglog_slope(x, y) -> SlopeFit:
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise ConfigurationError("need at least 2 matched (x, y) points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigurationError("log-log fit requires positive data")
    return _fit_line(np.log(x), np.log(y))


def _fit_line(a: np.ndarray, b: np.ndarray) -> SlopeFit:
    design = np.column_stack([a, np.ones_like(a)])
    coef, *_ = np.linalg.lstsq(design, b, rcond=None)
    resid = b - design @ coef
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return SlopeFit(abscissae=a, ordinates=b, slope=float(coef[0]),
                    intercept=float(coef[1]), residual_rms=rms)


def fit_convergence(dts, errors, stderrs) -> tuple[SlopeFit, np.ndarray]:
    """Log-log slope of error vs dt, excluding noise-dominated points.

    A point whose error is below twice its Monte Carlo standard error
    cannot be attributed to discretization and is dropped with a warning.
    Returns the fit and the inclusion mask.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    include = errors >= 2.0 * stderrs
    if not np.all(include):
        warnings.warn(
            f"{int((~include).sum())} convergence point(s) are MC-noise-"
            "dominated and excluded from the slope fit")
    if include.sum() < 2:
        raise ConfigurationError(
            "fewer than 2 usable points for the convergence fit")
    fit = fit_loglog_slope(dts[include], errors[include])
    return fit, include


def convergence_study(config: ExperimentConfig, dt_list,
                      reference: float | ExperimentConfig | None = None,
                      threads: int = 1):
    """Errors |D11(T; dt) - D11(T; ref)| and their log-log slope.

    When the reference is a simulated run (the default, at dt = min/4),
    every run is driven by the same fine-grid noise paths (see
    noise_substeps) and the error is estimated from per-path differences
    of X1(T)^2, which removes the shared Monte Carlo variance.  With a
    known reference value, runs are independent and standard errors
    combine in quadrature.  Returns (fit, rows) with rows of
    (dt, error, stderr, included).
    """
    dt_list = sorted(dt_list, reverse=True)
    if len(dt_list) < 3:
        raise ConfigurationError("need at least 3 dt values")

    if isinstance(reference, (int, float)):
        ref_value, ref_se = float(reference), 0.0
        errors, ses = [], []
        for dt in dt_list:
            stride = max(1, int(round(config.stride * config.dt / dt)))
            curve = effective_diffusivity(
                run_ensemble(replace(config, dt=dt, stride=stride), threads))
            errors.append(abs(float(curve.matrix[-1, 0, 0]) - ref_value))
            ses.append(math.hypot(float(curve.stderr[-1, 0]), ref_se))
        fit, include = fit_convergence(dt_list, errors, ses)
        return fit, list(zip(dt_list, errors, ses, include.tolist()))

    ref_config = reference if isinstance(reference, ExperimentConfig) \
        else replace(config, dt=min(dt_list) / 4.0)
    dt_ref = ref_config.dt
    for dt in dt_list:
        ratio = dt / dt_ref
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigurationError(
                f"dt {dt} is not an integer multiple of the reference "
                f"dt {dt_ref}; coupled noise paths require one")

    ref_run = replace(ref_config, stride=ref_config.n_steps,
                      noise_substeps=1)
    finals_ref = collect_final_positions(ref_run, threads)

    horizon = config.horizon
    errors, ses = [], []
    for dt in dt_list:
        sub = int(round(dt / dt_ref))
        run = replace(config, dt=dt, noise_substeps=sub)
        run = replace(run, stride=run.n_steps)
        finals = collect_final_positions(run, threads)
        ok = np.isfinite(finals[:, 0]) & np.isfinite(finals_ref[:, 0])
        if ok.sum() < 2:
            raise ConfigurationError("not enough converged paired paths")
        diff = finals[ok, 0] ** 2 - finals_ref[ok, 0] ** 2
        errors.append(abs(float(diff.mean())) / (2.0 * horizon))
        ses.append(float(diff.std(ddof=1)) / math.sqrt(ok.sum())
                   / (2.0 * horizon))

    fit, include = fit_convergence(dt_list, errors, ses)
    return fit, list(zip(dt_list, errors, ses, include.tolist()))


def _decay_one_state(args):
    """Inner Monte Carlo for one frozen initial field state."""
    config, state_index, n_paths, horizon_steps = args
    policy = SeedPolicy(config.seed)
    d, M = config.dim, config.modes
    c = 1 if d == 2 else 3
    dt = config.dt
    coef = 1.0 / np.sqrt(M)

    modes = sample_modes(d, M, config.cutoff_k, config.alpha,
                         policy.stream(state_index, LABEL_MODES))
    rng_init = policy.stream(state_index, LABEL_OU_INIT)
    xi0 = rng_init.standard_normal((M, c))
    eta0 = rng_init.standard_normal((M, c))
    rng_noise = policy.stream(state_index, LABEL_OU_NOISE)
    rng_kicks = policy.stream(state_index, LABEL_KICKS)

    k = modes.wavevectors
    frames = modes.frames
    decay = np.exp(-config.theta * dt)
    amp = np.sqrt(max(0.0, 1.0 - decay * decay))

    # All inner paths share the initial state but have independent OU
    # continuations and Brownian kicks; everything is vectorized over paths.
    xi = np.broadcast_to(xi0, (n_paths, M, c)).copy()
    eta = np.broadcast_to(eta0, (n_paths, M, c)).copy()
    x = np.zeros((n_paths, d))

    def amps(xi_arr, eta_arr):
        if d == 2:
            return xi_arr[:, :, 0:1] * frames, eta_arr[:, :, 0:1] * frames
        return np.cross(xi_arr, frames), np.cross(eta_arr, frames)

    def velocity(xpos, u, v):
        phase = xpos @ k.T                       # (P, M)
        return coef * (np.einsum("pm,pmi->pi", np.cos(phase), u)
                       + np.einsum("pm,pmi->pi", np.sin(phase), v))

    b1_means = np.empty(horizon_steps + 1)
    for n in range(horizon_steps + 1):
        u, v = amps(xi, eta)
        b1_means[n] = velocity(x, u, v)[:, 0].mean()
        if n == horizon_steps:
            break
        if config.scheme.kind == "midpoint2d":
            y = x.copy()
            converged = False
            for _ in range(config.scheme.max_iterations):
                mid = 0.5 * (x + y)
                y_new = x + dt * velocity(mid, u, v)
                shift = float(np.max(np.linalg.norm(y_new - y, axis=1)))
                y = y_new
                if shift <= config.scheme.tol:
                    converged = True
                    break
            if not converged:
                raise NonConvergenceError(step=n, residual=shift,
                                          iterations=config.scheme.max_iterations)
        elif config.scheme.kind == "modesplit":
            y = x.copy()
            for m in range(M):
                phase = y @ k[m]
                y = y + dt * coef * (np.cos(phase)[:, None] * u[:, m]
                                     + np.sin(phase)[:, None] * v[:, m])
        else:
            y = x + dt * velocity(x, u, v)
        kick = rng_kicks.standard_normal((n_paths, d)) * np.sqrt(dt)
        x = y + config.sigma * kick
        xi = decay * xi + amp * rng_noise.standard_normal((n_paths, M, c))
        eta = decay * eta + amp * rng_noise.standard_normal((n_paths, M, c))
    return b1_means


def decay_diagnostic(config: ExperimentConfig, n_states: int, n_paths: int,
                     horizon_steps: int, threads: int = 1) -> DecayCurve:
    """Mixing diagnostic: variance decay of inner-averaged velocity.

    Draws ``n_states`` frozen initial field states; for each, averages the
    first velocity component along ``n_paths`` independent continuations,
    then takes the across-state sample variance per step and fits its
    exponential decay rate over the window where the variance stays above
    ten times the estimation floor 1/n_paths.
    """
    if n_states < 2 or n_paths < 2:
        raise ConfigurationError("need n_states >= 2 and n_paths >= 2")
    jobs = [(config, i, n_paths, horizon_steps) for i in range(n_states)]
    if threads <= 1:
        results = [_decay_one_state(j) for j in jobs]
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=threads) as pool:
            results = pool.map(_decay_one_state, jobs)

    samples = np.vstack(results)                     # (n_states, steps+1)
    variance = samples.var(axis=0, ddof=1)
    steps = np.arange(horizon_steps + 1)
    times = steps * config.dt
    floor = 1.0 / n_paths

    window = np.zeros_like(variance, dtype=bool)
    for n in range(1, variance.size):
        if variance[n] <= 10.0 * floor:
            break
        window[n] = True

    rate = None
    if window.sum() >= 2:
        fit = _fit_line(times[window], np.log(variance[window]))
        rate = -fit.slope
    return DecayCurve(steps=steps, times=times, variance=variance,
                      floor=floor, rate=rate, fit_window=window)


def residual_sweep(config: ExperimentConfig, sigma_list, threads: int = 1):
    """D11(T) for a descending list of molecular diffusivities.

    Returns (rows, plateau): rows of (kappa, D11, stderr) ordered as given,
    and the small-kappa plateau (mean of the two smallest-kappa values).
    """
    sigma_list = list(sigma_list)
    if sorted(sigma_list, reverse=True) != sigma_list:
        raise ConfigurationError("sigma list must be descending")
    rows = []
    for sigma in sigma_list:
        curve = effective_diffusivity(
            run_ensemble(replace(config, sigma=sigma), threads))
        rows.append((sigma ** 2 / 2.0, float(curve.matrix[-1, 0, 0]),
                     float(curve.stderr[-1, 0])))
    smallest = sorted(rows, key=lambda r: r[0])[:2]
    plateau = float(np.mean([r[1] for r in smallest]))
    return rows, plateau
