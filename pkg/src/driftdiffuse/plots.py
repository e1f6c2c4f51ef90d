"""Figure rendering for the CLI report path (Agg backend, files only)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_diffusivity(curve, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    d = curve.matrix.shape[1]
    for i in range(d):
        ax.errorbar(curve.times, curve.matrix[:, i, i],
                    yerr=3 * curve.stderr[:, i], label=f"D{i + 1}{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("effective diffusivity")
    ax.set_title(f"{curve.variant} estimator, {curve.count} paths")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_convergence(rows, fit, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    dts = [r[0] for r in rows]
    errs = [r[1] for r in rows]
    included = [r[3] for r in rows]
    ax.loglog([d for d, inc in zip(dts, included) if inc],
              [e for e, inc in zip(errs, included) if inc], "o",
              label="included")
    excl = [(d, e) for d, e, inc in zip(dts, errs, included) if not inc]
    if excl:
        ax.loglog(*zip(*excl), "x", label="noise-dominated")
    import numpy as np
    grid = np.array(sorted(dts))
    ax.loglog(grid, np.exp(fit.intercept) * grid ** fit.slope, "--",
              label=f"slope {fit.slope:.2f}")
    ax.set_xlabel("dt")
    ax.set_ylabel("|D11(dt) - D11(ref)|")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_decay(curve, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(curve.times, curve.variance, "o-", label="variance")
    ax.axhline(curve.floor, color="gray", ls=":", label="1/n_paths floor")
    if curve.rate is not None:
        label = f"variance rate {curve.rate:.2f} (amplitude {curve.rate / 2:.2f})"
        ax.set_title(label)
    ax.set_xlabel("t")
    ax.set_ylabel("across-state variance of mean b1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_residual(rows, plateau, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    kappas = [r[0] for r in rows]
    values = [r[1] for r in rows]
    errs = [3 * r[2] for r in rows]
    ax.errorbar(kappas, values, yerr=errs, fmt="o-")
    ax.axhline(plateau, color="gray", ls="--",
               label=f"small-kappa plateau {plateau:.4f}")
    ax.set_xscale("log")
    ax.set_xlabel("kappa = sigma^2 / 2")
    ax.set_ylabel("D11(T)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
