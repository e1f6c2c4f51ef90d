"""Numba-compiled whole-trajectory kernels used by the ensemble runner.

The step semantics here mirror the step functions in ``integrators``; an
equivalence test keeps the two in sync.  All randomness (OU innovations and
Brownian kicks) is pre-generated by the caller so that trajectories are a
pure function of their input arrays.
"""

import numpy as np
from numba import njit

SCHEME_MIDPOINT2D = 0
SCHEME_MODESPLIT = 1
SCHEME_EULER = 2

SCHEME_IDS = {
    "midpoint2d": SCHEME_MIDPOINT2D,
    "modesplit": SCHEME_MODESPLIT,
    "euler": SCHEME_EULER,
}


@njit(cache=True)
def _build_amps(d, frames, xi, eta, u, v):
    M = frames.shape[0]
    if d == 2:
        for m in range(M):
            u[m, 0] = xi[m, 0] * frames[m, 0]
            u[m, 1] = xi[m, 0] * frames[m, 1]
            v[m, 0] = eta[m, 0] * frames[m, 0]
            v[m, 1] = eta[m, 0] * frames[m, 1]
    else:
        for m in range(M):
            u[m, 0] = xi[m, 1] * frames[m, 2] - xi[m, 2] * frames[m, 1]
            u[m, 1] = xi[m, 2] * frames[m, 0] - xi[m, 0] * frames[m, 2]
            u[m, 2] = xi[m, 0] * frames[m, 1] - xi[m, 1] * frames[m, 0]
            v[m, 0] = eta[m, 1] * frames[m, 2] - eta[m, 2] * frames[m, 1]
            v[m, 1] = eta[m, 2] * frames[m, 0] - eta[m, 0] * frames[m, 2]
            v[m, 2] = eta[m, 0] * frames[m, 1] - eta[m, 1] * frames[m, 0]


@njit(cache=True)
def _eval_b(k, u, v, coef, x, out):
    d = x.shape[0]
    for i in range(d):
        out[i] = 0.0
    for m in range(k.shape[0]):
        ph = 0.0
        for i in range(d):
            ph += k[m, i] * x[i]
        c = np.cos(ph)
        s = np.sin(ph)
        for i in range(d):
            out[i] += c * u[m, i] + s * v[m, i]
    for i in range(d):
        out[i] *= coef


@njit(cache=True)
def run_path_kernel(scheme, k, frames, xi, eta, ou_decay, ou_amp,
                    z_xi, z_eta, kicks, sigma, dt, stride, tol, max_iter,
                    x_rec, b_rec):
    """Advance one tracer path over all steps, recording every ``stride``.

    ``xi``/``eta`` are mutated in place (pass copies).  Returns -1 on
    success or the index of the step where the implicit solve failed.
    """
    n_steps = kicks.shape[0]
    M = k.shape[0]
    d = k.shape[1]
    c = xi.shape[1]
    coef = 1.0 / np.sqrt(M)

    u = np.empty((M, d))
    v = np.empty((M, d))
    x = np.zeros(d)
    y = np.empty(d)
    mid = np.empty(d)
    b = np.empty(d)
    sb = np.zeros(d)
    rec = 0

    for n in range(n_steps):
        _build_amps(d, frames, xi, eta, u, v)

        if scheme == SCHEME_MIDPOINT2D:
            # Newton on F(y) = y - x - dt*b((x+y)/2), warm start at x.
            y[0] = x[0]
            y[1] = x[1]
            ok = False
            for _ in range(max_iter):
                mid[0] = 0.5 * (x[0] + y[0])
                mid[1] = 0.5 * (x[1] + y[1])
                b0 = 0.0
                b1 = 0.0
                j00 = 0.0
                j01 = 0.0
                j10 = 0.0
                j11 = 0.0
                for m in range(M):
                    ph = k[m, 0] * mid[0] + k[m, 1] * mid[1]
                    cp = np.cos(ph)
                    sp = np.sin(ph)
                    t0 = -sp * u[m, 0] + cp * v[m, 0]
                    t1 = -sp * u[m, 1] + cp * v[m, 1]
                    b0 += cp * u[m, 0] + sp * v[m, 0]
                    b1 += cp * u[m, 1] + sp * v[m, 1]
                    j00 += t0 * k[m, 0]
                    j01 += t0 * k[m, 1]
                    j10 += t1 * k[m, 0]
                    j11 += t1 * k[m, 1]
                f0 = y[0] - x[0] - dt * coef * b0
                f1 = y[1] - x[1] - dt * coef * b1
                if np.sqrt(f0 * f0 + f1 * f1) <= tol:
                    ok = True
                    break
                a00 = 1.0 - 0.5 * dt * coef * j00
                a01 = -0.5 * dt * coef * j01
                a10 = -0.5 * dt * coef * j10
                a11 = 1.0 - 0.5 * dt * coef * j11
                det = a00 * a11 - a01 * a10
                y[0] -= (a11 * f0 - a01 * f1) / det
                y[1] -= (-a10 * f0 + a00 * f1) / det
            if not ok:
                return n
        elif scheme == SCHEME_MODESPLIT:
            for i in range(d):
                y[i] = x[i]
            for m in range(M):
                ph = 0.0
                for i in range(d):
                    ph += k[m, i] * y[i]
                cp = np.cos(ph)
                sp = np.sin(ph)
                for i in range(d):
                    y[i] += dt * coef * (cp * u[m, i] + sp * v[m, i])
        else:
            _eval_b(k, u, v, coef, x, b)
            for i in range(d):
                y[i] = x[i] + dt * b[i]

        for i in range(d):
            sb[i] += y[i] - x[i]
            x[i] = y[i] + sigma * kicks[n, i]

        for m in range(M):
            for j in range(c):
                xi[m, j] = ou_decay * xi[m, j] + ou_amp * z_xi[n, m, j]
                eta[m, j] = ou_decay * eta[m, j] + ou_amp * z_eta[n, m, j]

        if (n + 1) % stride == 0:
            for i in range(d):
                x_rec[rec, i] = x[i]
                b_rec[rec, i] = sb[i]
            rec += 1

    return -1
