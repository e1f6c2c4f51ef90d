"""Divergence-free random velocity fields built from random Fourier modes.

A field is a 1/sqrt(M)-normalized sum of M cosine/sine modes.  Wavevectors
are drawn isotropically with a power-law radial density cut off at radius K;
mode amplitudes are Ornstein-Uhlenbeck processes in time so the field
decorrelates at rate theta.  Amplitudes are always transverse to their
wavevector, so every realization is analytically divergence-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "SpectralModeSet",
    "OuAmplitudeState",
    "VelocityField",
    "sample_modes",
    "init_ou",
    "advance_ou",
    "eval_velocity",
    "mode_velocity",
    "check_divergence",
]


@dataclass(frozen=True)
class SpectralModeSet:
    """Wavevectors and per-mode unit frames of a sampled spectrum.

    In 2D the frame vector is the normalized perpendicular of the
    wavevector; in 3D it is the wavevector direction itself (amplitudes are
    built from cross products against it).
    """

    dimension: int
    wavevectors: np.ndarray  # (M, d)
    frames: np.ndarray       # (M, d); unit s_perp in 2D, unit k_hat in 3D

    @property
    def count(self) -> int:
        return self.wavevectors.shape[0]


@dataclass(frozen=True)
class OuAmplitudeState:
    """Per-mode OU amplitude values at one time step.

    ``xi`` and ``eta`` have shape (M, c) with c = 1 in 2D and c = 3 in 3D.
    """

    xi: np.ndarray
    eta: np.ndarray
    theta: float
    dt: float
    step: int = 0

    @property
    def components_per_mode(self) -> int:
        return 2 * self.xi.shape[1]


@dataclass(frozen=True)
class VelocityField:
    modes: SpectralModeSet
    amplitudes: OuAmplitudeState

    @property
    def dimension(self) -> int:
        return self.modes.dimension


def sample_modes(d: int, M: int, K: float, alpha: float,
                 rng: np.random.Generator) -> SpectralModeSet:
    """Draw M wavevectors with isotropic directions and power-law radii.

    The radial density is proportional to r**(1 - 2*alpha) on (0, K], which
    has the closed-form inverse CDF r = K * U**(1 / (2 - 2*alpha)).
    Integrability requires alpha < 1.
    """
    if d not in (2, 3):
        raise ConfigurationError(f"dimension must be 2 or 3, got {d}")
    if M < 1:
        raise ConfigurationError(f"mode count must be >= 1, got {M}")
    if K <= 0:
        raise ConfigurationError(f"spectral cutoff must be > 0, got {K}")
    if alpha >= 1:
        raise ConfigurationError(
            f"spectral exponent must satisfy alpha < 1, got {alpha}")

    if d == 2:
        angles = rng.uniform(0.0, 2.0 * np.pi, size=M)
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        directions = rng.standard_normal((M, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    u = rng.uniform(0.0, 1.0, size=M)
    radii = K * u ** (1.0 / (2.0 - 2.0 * alpha))
    wavevectors = radii[:, None] * directions

    if d == 2:
        perp = np.column_stack([-wavevectors[:, 1], wavevectors[:, 0]])
        frames = perp / np.linalg.norm(perp, axis=1, keepdims=True)
    else:
        frames = directions

    return SpectralModeSet(d, wavevectors, frames)


def init_ou(mode_set: SpectralModeSet, theta: float, dt: float,
            rng: np.random.Generator) -> OuAmplitudeState:
    """Draw the stationary (standard normal) initial amplitude state."""
    c = 1 if mode_set.dimension == 2 else 3
    xi = rng.standard_normal((mode_set.count, c))
    eta = rng.standard_normal((mode_set.count, c))
    return OuAmplitudeState(xi=xi, eta=eta, theta=theta, dt=dt, step=0)


def advance_ou(state: OuAmplitudeState,
               rng: np.random.Generator) -> OuAmplitudeState:
    """Advance every amplitude one step by the exact OU recursion.

    x_new = exp(-theta*dt) * x + sqrt(1 - exp(-2*theta*dt)) * zeta with
    zeta ~ N(0, 1), which preserves the standard-normal marginal and gives
    lag-l autocovariance exp(-theta * l * dt).
    """
    decay = np.exp(-state.theta * state.dt)
    amp = np.sqrt(max(0.0, 1.0 - decay * decay))
    xi = decay * state.xi + amp * rng.standard_normal(state.xi.shape)
    eta = decay * state.eta + amp * rng.standard_normal(state.eta.shape)
    return OuAmplitudeState(xi=xi, eta=eta, theta=state.theta, dt=state.dt,
                            step=state.step + 1)


def amplitude_vectors(field: VelocityField) -> tuple[np.ndarray, np.ndarray]:
    """(M, d) cosine and sine amplitude vectors for the current OU state."""
    modes, amps = field.modes, field.amplitudes
    if modes.dimension == 2:
        u = amps.xi[:, 0:1] * modes.frames
        v = amps.eta[:, 0:1] * modes.frames
    else:
        u = np.cross(amps.xi, modes.frames)
        v = np.cross(amps.eta, modes.frames)
    return u, v


def eval_velocity(field: VelocityField, x: np.ndarray) -> np.ndarray:
    """Evaluate the field at position(s) x.

    ``x`` may be a single point of shape (d,) or a batch of shape (n, d);
    the result has the same leading shape.
    """
    x = np.asarray(x, dtype=float)
    u, v = amplitude_vectors(field)
    k = field.modes.wavevectors
    phase = x @ k.T  # (..., M)
    coef = 1.0 / np.sqrt(field.modes.count)
    return coef * (np.cos(phase) @ u + np.sin(phase) @ v)


def eval_velocity_jacobian(field: VelocityField, x: np.ndarray) -> np.ndarray:
    """Spatial Jacobian d(b_i)/d(x_j) of the field at a single point."""
    x = np.asarray(x, dtype=float)
    u, v = amplitude_vectors(field)
    k = field.modes.wavevectors
    phase = k @ x
    coef = 1.0 / np.sqrt(field.modes.count)
    terms = -np.sin(phase)[:, None] * u + np.cos(phase)[:, None] * v
    return coef * np.einsum("mi,mj->ij", terms, k)


def mode_velocity(field: VelocityField, m: int, x: np.ndarray) -> np.ndarray:
    """Contribution of a single mode, including the 1/sqrt(M) factor."""
    x = np.asarray(x, dtype=float)
    u, v = amplitude_vectors(field)
    phase = x @ field.modes.wavevectors[m]
    coef = 1.0 / np.sqrt(field.modes.count)
    return coef * (np.cos(phase) * u[m] + np.sin(phase) * v[m])


def check_divergence(field, points: np.ndarray, h: float = 1e-5) -> float:
    """Max relative central-difference divergence of the field over points.

    Accepts a VelocityField or any callable x -> b(x).  The result is the
    maximum over points of |div b| / (|b| + 1e-30).
    """
    if h <= 0:
        raise ConfigurationError(f"finite-difference step must be > 0, got {h}")
    if callable(field):
        evaluate = field
    else:
        evaluate = lambda x: eval_velocity(field, x)

    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    worst = 0.0
    for x in points:
        div = 0.0
        for i in range(d):
            e = np.zeros(d)
            e[i] = h
            div += (evaluate(x + e)[i] - evaluate(x - e)[i]) / (2.0 * h)
        rel = abs(div) / (np.linalg.norm(evaluate(x)) + 1e-30)
        worst = max(worst, rel)
    return worst
