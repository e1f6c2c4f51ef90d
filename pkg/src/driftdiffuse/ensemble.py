"""Monte Carlo path ensembles with deterministic seeding and reduction.

Every path owns four independent random streams (mode sampling, OU initial
state, OU innovations, Brownian kicks), all derived from the master seed and
the path index.  Paths are simulated in fixed-size chunks; chunk results are
folded in ascending chunk order, so the result is bit-identical for any
worker count.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, EnsembleAbortError, NonConvergenceError
from .field import OuAmplitudeState, VelocityField, sample_modes
from .integrators import SchemeConfig

CHUNK_SIZE = 256

# Stream labels; fixed so that e.g. changing the integrator never shifts
# the Brownian draws (paired-seed scheme comparisons rely on this).
LABEL_MODES = 0
LABEL_OU_INIT = 1
LABEL_OU_NOISE = 2
LABEL_KICKS = 3

__all__ = [
    "ExperimentConfig",
    "SeedPolicy",
    "MomentAccumulator",
    "run_path",
    "run_ensemble",
    "merge",
    "estimate_mean_drift",
]


@dataclass(frozen=True)
class ExperimentConfig:
    """Full parameter record for one ensemble experiment."""

    dim: int = 2
    modes: int = 1000
    cutoff_k: float = 10.0
    alpha: float = 0.75
    theta: float = 10.0
    sigma: float = 0.1
    dt: float = 0.01
    horizon: float = 22.0
    paths: int = 10000
    scheme: SchemeConfig = dataclass_field(default_factory=SchemeConfig)
    seed: int = 1
    stride: int = 20
    drift_correct: bool = False
    # Test hook: zero out all mode amplitudes so b == 0 identically.
    zero_velocity: bool = False
    # Noise is drawn on a grid of dt/noise_substeps and aggregated exactly
    # to dt resolution.  Runs with the same seed and the same fine grid
    # (dt/noise_substeps) then share one Brownian path and one OU amplitude
    # path, which makes time-step comparisons strongly coupled.
    noise_substeps: int = 1

    def validate(self) -> None:
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        if self.modes < 1:
            raise ConfigurationError(f"modes must be >= 1, got {self.modes}")
        if self.cutoff_k <= 0:
            raise ConfigurationError(
                f"cutoff_k must be > 0, got {self.cutoff_k}")
        if self.alpha >= 1:
            raise ConfigurationError(
                f"alpha must be < 1 for an integrable spectrum, got {self.alpha}")
        if self.theta <= 0:
            raise ConfigurationError(f"theta must be > 0, got {self.theta}")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if self.horizon <= 0:
            raise ConfigurationError(
                f"horizon must be > 0, got {self.horizon}")
        ratio = self.horizon / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigurationError(
                f"horizon/dt must be a positive integer, got {ratio}")
        if self.paths < 1:
            raise ConfigurationError(f"paths must be >= 1, got {self.paths}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.noise_substeps < 1:
            raise ConfigurationError(
                f"noise_substeps must be >= 1, got {self.noise_substeps}")
        self.scheme.validate(self.dim)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def n_records(self) -> int:
        return self.n_steps // self.stride

    @property
    def record_times(self) -> np.ndarray:
        return self.dt * self.stride * np.arange(1, self.n_records + 1)


@dataclass(frozen=True)
class SeedPolicy:
    """Derives per-path, per-purpose random streams from the master seed."""

    master_seed: int

    def stream(self, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence(self.master_seed, spawn_key=tuple(key))
        return np.random.default_rng(seq)


@dataclass
class MomentAccumulator:
    """Running ensemble sums at each record time.

    ``sum_x4`` holds the per-component fourth powers needed for the
    standard error of the second moment without a second pass.
    """

    times: np.ndarray
    dt: float
    count: int
    failed: int
    sum_x: np.ndarray    # (n_rec, d)
    sum_xx: np.ndarray   # (n_rec, d, d)
    sum_x4: np.ndarray   # (n_rec, d)
    sum_b: np.ndarray    # (n_rec, d); cumulative deterministic increments

    @classmethod
    def zeros(cls, config: ExperimentConfig) -> "MomentAccumulator":
        n_rec, d = config.n_records, config.dim
        return cls(times=config.record_times, dt=config.dt, count=0, failed=0,
                   sum_x=np.zeros((n_rec, d)), sum_xx=np.zeros((n_rec, d, d)),
                   sum_x4=np.zeros((n_rec, d)), sum_b=np.zeros((n_rec, d)))

    def add_path(self, positions: np.ndarray, b_cumulative: np.ndarray) -> None:
        self.count += 1
        self.sum_x += positions
        self.sum_xx += positions[:, :, None] * positions[:, None, :]
        self.sum_x4 += positions ** 4
        self.sum_b += b_cumulative


def merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Field-wise sum of two accumulators over the same record grid."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times) \
            or a.dt != b.dt:
        raise ConfigurationError("cannot merge accumulators on different grids")
    return MomentAccumulator(
        times=a.times, dt=a.dt, count=a.count + b.count,
        failed=a.failed + b.failed,
        sum_x=a.sum_x + b.sum_x, sum_xx=a.sum_xx + b.sum_xx,
        sum_x4=a.sum_x4 + b.sum_x4, sum_b=a.sum_b + b.sum_b)


def estimate_mean_drift(acc: MomentAccumulator) -> np.ndarray:
    """Mean deterministic increment per step, from the last record time."""
    if acc.count < 1:
        raise ConfigurationError("accumulator holds no successful paths")
    steps = int(round(acc.times[-1] / acc.dt))
    return acc.sum_b[-1] / (acc.count * steps)


def _aggregate_ou_innovations(z_fine: np.ndarray, theta: float,
                              dt_fine: float, sub: int) -> np.ndarray:
    """Exact coarse-grid OU innovations from fine-grid ones.

    If the fine recursion uses decay df = exp(-theta*dt_fine), subsampling
    every ``sub`` steps is again an exact OU recursion with decay df**sub,
    and its unit-variance innovation is the df-weighted sum of the fine
    innovations, rescaled from variance (1-df^2sub... )/(...) to one.
    """
    df = np.exp(-theta * dt_fine)
    af = np.sqrt(max(0.0, 1.0 - df * df))
    dc = df ** sub
    ac = np.sqrt(max(0.0, 1.0 - dc * dc))
    n_fine = z_fine.shape[0]
    grouped = z_fine.reshape(n_fine // sub, sub, *z_fine.shape[1:])
    weights = df ** np.arange(sub - 1, -1, -1, dtype=float)
    out = np.einsum("s,ns...->n...", weights, grouped)
    return out * (af / ac) if ac > 0 else out * 0.0


def _path_inputs(config: ExperimentConfig, p: int):
    """Pre-generate all per-path arrays from the path's labeled streams.

    With noise_substeps > 1 the raw draws happen on the fine grid
    dt/noise_substeps and are aggregated exactly: Brownian increments by
    summation, OU innovations by decay-weighted summation.  Two runs that
    share the master seed and the fine grid therefore drive the kernel
    with the same underlying noise paths regardless of their dt.
    """
    policy = SeedPolicy(config.seed)
    d, M, n = config.dim, config.modes, config.n_steps
    c = 1 if d == 2 else 3
    sub = config.noise_substeps
    dt_fine = config.dt / sub

    modes = sample_modes(d, M, config.cutoff_k, config.alpha,
                         policy.stream(p, LABEL_MODES))

    rng_init = policy.stream(p, LABEL_OU_INIT)
    xi0 = rng_init.standard_normal((M, c))
    eta0 = rng_init.standard_normal((M, c))

    rng_noise = policy.stream(p, LABEL_OU_NOISE)
    z_xi = rng_noise.standard_normal((n * sub, M, c))
    z_eta = rng_noise.standard_normal((n * sub, M, c))
    if sub > 1:
        z_xi = _aggregate_ou_innovations(z_xi, config.theta, dt_fine, sub)
        z_eta = _aggregate_ou_innovations(z_eta, config.theta, dt_fine, sub)

    rng_kicks = policy.stream(p, LABEL_KICKS)
    kicks = rng_kicks.standard_normal((n * sub, d)) * np.sqrt(dt_fine)
    if sub > 1:
        kicks = kicks.reshape(n, sub, d).sum(axis=1)

    if config.zero_velocity:
        xi0[:] = 0.0
        eta0[:] = 0.0
        z_xi[:] = 0.0
        z_eta[:] = 0.0

    return modes, xi0, eta0, np.ascontiguousarray(z_xi), \
        np.ascontiguousarray(z_eta), np.ascontiguousarray(kicks)


def run_path(config: ExperimentConfig, p: int):
    """Simulate path p; returns (positions, cumulative B) at record times.

    Raises NonConvergenceError if the implicit solve fails at any step.
    """
    modes, xi0, eta0, z_xi, z_eta, kicks = _path_inputs(config, p)
    decay = np.exp(-config.theta * config.dt)
    amp = np.sqrt(max(0.0, 1.0 - decay * decay))

    x_rec = np.empty((config.n_records, config.dim))
    b_rec = np.empty((config.n_records, config.dim))
    status = _kernels.run_path_kernel(
        _kernels.SCHEME_IDS[config.scheme.kind],
        modes.wavevectors, modes.frames, xi0.copy(), eta0.copy(),
        decay, amp, z_xi, z_eta, kicks,
        config.sigma, config.dt, config.stride,
        config.scheme.tol, config.scheme.max_iterations, x_rec, b_rec)
    if status >= 0:
        raise NonConvergenceError(step=status, residual=np.nan,
                                  iterations=config.scheme.max_iterations)
    return x_rec, b_rec


def run_path_reference(config: ExperimentConfig, p: int):
    """Step-by-step runner built on the one-step maps; slow.

    Consumes the identical pre-generated noise as run_path and exists as an
    independent implementation route for validating the compiled kernel.
    """
    modes, xi0, eta0, z_xi, z_eta, kicks = _path_inputs(config, p)
    decay = np.exp(-config.theta * config.dt)
    amp = np.sqrt(max(0.0, 1.0 - decay * decay))

    from .field import eval_velocity
    from .integrators import step_midpoint2d, step_modesplit

    xi, eta = xi0.copy(), eta0.copy()
    x = np.zeros(config.dim)
    sb = np.zeros(config.dim)
    x_rec = np.empty((config.n_records, config.dim))
    b_rec = np.empty((config.n_records, config.dim))
    rec = 0
    for n in range(config.n_steps):
        ou = OuAmplitudeState(xi=xi, eta=eta, theta=config.theta,
                              dt=config.dt, step=n)
        fld = VelocityField(modes, ou)
        if config.scheme.kind == "midpoint2d":
            y = step_midpoint2d(fld, x, config.dt, config.scheme).x_after
        elif config.scheme.kind == "modesplit":
            y = step_modesplit(fld, x, config.dt).x_after
        else:
            y = x + config.dt * eval_velocity(fld, x)
        sb += y - x
        x = y + config.sigma * kicks[n]
        xi = decay * xi + amp * z_xi[n]
        eta = decay * eta + amp * z_eta[n]
        if (n + 1) % config.stride == 0:
            x_rec[rec] = x
            b_rec[rec] = sb
            rec += 1
    return x_rec, b_rec


def _finals_chunk(args):
    config, start, stop = args
    out = np.full((stop - start, config.dim), np.nan)
    for p in range(start, stop):
        try:
            x_rec, _ = run_path(config, p)
        except NonConvergenceError:
            continue
        out[p - start] = x_rec[-1]
    return out


def collect_final_positions(config: ExperimentConfig,
                            threads: int = 1) -> np.ndarray:
    """(paths, dim) positions at the horizon; NaN rows mark failed paths.

    Used for paired path-by-path comparisons between runs that share the
    master seed (and, via noise_substeps, the same noise paths).
    """
    config.validate()
    chunks = [(config, s, min(s + CHUNK_SIZE, config.paths))
              for s in range(0, config.paths, CHUNK_SIZE)]
    if threads <= 1 or len(chunks) == 1:
        parts = [_finals_chunk(c) for c in chunks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=threads) as pool:
            parts = pool.map(_finals_chunk, chunks)
    finals = np.vstack(parts)
    failed = int(np.isnan(finals[:, 0]).sum())
    if failed > 0.01 * config.paths:
        raise EnsembleAbortError(
            f"{failed}/{config.paths} paths failed to converge; reduce dt")
    return finals


def _simulate_chunk(args):
    config, start, stop = args
    acc = MomentAccumulator.zeros(config)
    for p in range(start, stop):
        try:
            x_rec, b_rec = run_path(config, p)
        except NonConvergenceError:
            acc.failed += 1
            continue
        acc.add_path(x_rec, b_rec)
    return acc


def run_ensemble(config: ExperimentConfig,
                 threads: int = 1) -> MomentAccumulator:
    """Run all paths and fold chunk accumulators in fixed ascending order.

    Aborts with EnsembleAbortError when more than 1% of paths fail to
    converge (the time step is too large for this regime).
    """
    config.validate()
    chunks = [(config, s, min(s + CHUNK_SIZE, config.paths))
              for s in range(0, config.paths, CHUNK_SIZE)]

    if threads <= 1 or len(chunks) == 1:
        results = map(_simulate_chunk, chunks)
        total = None
        for part in results:
            total = part if total is None else merge(total, part)
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=threads) as pool:
            parts = pool.map(_simulate_chunk, chunks)
        total = parts[0]
        for part in parts[1:]:
            total = merge(total, part)

    if total.failed > 0.01 * config.paths:
        raise EnsembleAbortError(
            f"{total.failed}/{config.paths} paths failed to converge; "
            "reduce dt")
    return total
