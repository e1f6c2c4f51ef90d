"""One-step maps for the tracer SDE.

The deterministic sub-step is either the 2D implicit midpoint rule or the
explicit per-mode splitting (valid in 2D and 3D); both have unit Jacobian
determinant.  The Brownian kick is exact.  A full step composes the
deterministic map with the kick (Lie-Trotter).  Euler-Maruyama is kept as
the non-volume-preserving baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NonConvergenceError
from .field import (VelocityField, amplitude_vectors, eval_velocity,
                    eval_velocity_jacobian)

SCHEME_KINDS = ("midpoint2d", "modesplit", "euler")

__all__ = [
    "SchemeConfig",
    "StepRecord",
    "step_midpoint2d",
    "step_modesplit",
    "step_euler",
    "add_brownian_kick",
    "step_full",
    "jacobian_det_fd",
]


@dataclass(frozen=True)
class SchemeConfig:
    """Integrator selection plus implicit-solver settings."""

    kind: str = "midpoint2d"
    tol: float = 1e-12
    max_iterations: int = 50
    fd_step: float = 1e-5

    def validate(self, dim: int | None = None) -> None:
        if self.kind not in SCHEME_KINDS:
            raise ConfigurationError(
                f"scheme must be one of {SCHEME_KINDS}, got {self.kind!r}")
        if self.tol <= 0:
            raise ConfigurationError(f"solver tol must be > 0, got {self.tol}")
        if self.max_iterations < 1:
            raise ConfigurationError(
                f"max iterations must be >= 1, got {self.max_iterations}")
        if dim is not None and self.kind == "midpoint2d" and dim != 2:
            raise ConfigurationError("midpoint2d is only valid in dimension 2")


@dataclass(frozen=True)
class StepRecord:
    """Outcome of one step: positions, deterministic increment, solver stats."""

    x_before: np.ndarray
    x_after: np.ndarray
    increment: np.ndarray  # deterministic part only: Phi(x) - x
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True


def _as_eval(field):
    """Velocity evaluation and Jacobian callables for a field or a stub."""
    if isinstance(field, VelocityField):
        return (lambda x: eval_velocity(field, x),
                lambda x: eval_velocity_jacobian(field, x))
    if callable(field):
        return field, None
    raise TypeError(f"expected VelocityField or callable, got {type(field)}")


def _fd_jacobian(evaluate, x, h):
    d = x.size
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, j] = (evaluate(x + e) - evaluate(x - e)) / (2.0 * h)
    return jac


def step_midpoint2d(field, x: np.ndarray, dt: float,
                    cfg: SchemeConfig) -> StepRecord:
    """Implicit midpoint step: solve y = x + dt * b((x + y) / 2).

    Newton iteration warm-started at x; the Jacobian of the velocity is
    analytic for spectral fields and finite-difference for stub callables.
    Raises NonConvergenceError when the residual does not reach tolerance.
    """
    evaluate, jacobian = _as_eval(field)
    x = np.asarray(x, dtype=float)
    d = x.size
    y = x.copy()
    iterations = 0
    for _ in range(cfg.max_iterations):
        mid = 0.5 * (x + y)
        residual_vec = y - x - dt * evaluate(mid)
        residual = float(np.linalg.norm(residual_vec))
        iterations += 1
        if residual <= cfg.tol:
            return StepRecord(x, y, y - x, iterations, residual, True)
        if jacobian is not None:
            jac_b = jacobian(mid)
        else:
            jac_b = _fd_jacobian(evaluate, mid, cfg.fd_step)
        jac_f = np.eye(d) - 0.5 * dt * jac_b
        y = y - np.linalg.solve(jac_f, residual_vec)
    raise NonConvergenceError(step=-1, residual=residual,
                              iterations=iterations)


def step_modesplit(field: VelocityField, x: np.ndarray,
                   dt: float) -> StepRecord:
    """Compose the exact flows of the individual frozen mode fields.

    Each mode's velocity is constant along its own trajectories (its
    amplitude is transverse to its wavevector), so x + dt * b_m(x) is the
    exact mode flow and each sub-map has unit Jacobian determinant.
    """
    x = np.asarray(x, dtype=float)
    u, v = amplitude_vectors(field)
    k = field.modes.wavevectors
    coef = 1.0 / np.sqrt(field.modes.count)
    y = x.copy()
    for m in range(field.modes.count):
        phase = k[m] @ y
        y = y + dt * coef * (np.cos(phase) * u[m] + np.sin(phase) * v[m])
    return StepRecord(x, y, y - x)


def add_brownian_kick(x: np.ndarray, sigma: float, dt: float,
                      rng: np.random.Generator) -> np.ndarray:
    """x + sigma * xi with xi ~ N(0, dt * I).  Draws even when sigma = 0
    so the stream position is scheme- and sigma-independent."""
    x = np.asarray(x, dtype=float)
    xi = rng.standard_normal(x.shape) * np.sqrt(dt)
    return x + sigma * xi


def step_euler(field, x: np.ndarray, dt: float, sigma: float,
               rng: np.random.Generator) -> StepRecord:
    """Euler-Maruyama baseline: y = x + dt * b(x) + sigma * xi."""
    evaluate, _ = _as_eval(field)
    x = np.asarray(x, dtype=float)
    drift = dt * evaluate(x)
    y = add_brownian_kick(x + drift, sigma, dt, rng)
    return StepRecord(x, y, drift)


def step_full(field, x: np.ndarray, dt: float, sigma: float,
              cfg: SchemeConfig, rng: np.random.Generator) -> StepRecord:
    """Deterministic sub-step for cfg.kind followed by the Brownian kick.

    The kick is drawn after the deterministic solve, so the sequence of
    Gaussian draws does not depend on the scheme.
    """
    if cfg.kind == "midpoint2d":
        det = step_midpoint2d(field, x, dt, cfg)
    elif cfg.kind == "modesplit":
        det = step_modesplit(field, x, dt)
    elif cfg.kind == "euler":
        evaluate, _ = _as_eval(field)
        x = np.asarray(x, dtype=float)
        det = StepRecord(x, x + dt * evaluate(x), dt * evaluate(x))
    else:
        raise ConfigurationError(f"unknown scheme kind {cfg.kind!r}")
    y = add_brownian_kick(det.x_after, sigma, dt, rng)
    return StepRecord(det.x_before, y, det.increment, det.iterations,
                      det.residual, det.converged)


def jacobian_det_fd(step_map, x: np.ndarray, h: float = 1e-5) -> float:
    """Determinant of the central-difference Jacobian of a deterministic map."""
    if h <= 0:
        raise ConfigurationError(f"finite-difference step must be > 0, got {h}")
    x = np.asarray(x, dtype=float)
    d = x.size
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, j] = (np.asarray(step_map(x + e)) -
                     np.asarray(step_map(x - e))) / (2.0 * h)
    return float(np.linalg.det(jac))
