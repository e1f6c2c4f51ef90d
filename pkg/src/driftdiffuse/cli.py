"""Command-line frontend: config parsing, experiment dispatch, CSV and
figure output, and reproducibility manifests.

Subcommands: simulate | convergence | decay | residual | fieldcheck.
Exit codes: 0 success, 1 configuration error, 2 numerical abort,
3 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from . import __version__
from .analysis import (convergence_study, decay_diagnostic,
                       effective_diffusivity, residual_sweep)
from .ensemble import (ExperimentConfig, SeedPolicy, LABEL_MODES,
                       LABEL_OU_INIT, run_ensemble)
from .errors import (ConfigurationError, EnsembleAbortError,
                     NonConvergenceError)
from .field import (OuAmplitudeState, VelocityField, advance_ou,
                    check_divergence, eval_velocity, init_ou, mode_velocity,
                    sample_modes)
from .integrators import SCHEME_KINDS, SchemeConfig

CONFIG_KEYS = ("dim", "modes", "cutoff_k", "alpha", "theta", "sigma", "dt",
               "horizon", "paths", "scheme", "seed", "stride",
               "drift_correct", "solver_tol", "solver_max_iter")

_BOOL_WORDS = {"true": True, "yes": True, "1": True,
               "false": False, "no": False, "0": False}


def _fmt(value) -> str:
    """Full round-trip precision for CSV/manifest numeric fields."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _parse_bool(key: str, raw: str) -> bool:
    try:
        return _BOOL_WORDS[raw.strip().lower()]
    except KeyError:
        raise ConfigurationError(
            f"key {key!r}: expected a boolean, got {raw!r}") from None


def _coerce(key: str, raw: str):
    try:
        if key in ("dim", "modes", "paths", "seed", "stride",
                   "solver_max_iter"):
            return int(raw)
        if key in ("cutoff_k", "alpha", "theta", "sigma", "dt", "horizon",
                   "solver_tol"):
            return float(raw)
    except ValueError:
        raise ConfigurationError(
            f"key {key!r}: cannot parse {raw!r}") from None
    if key == "drift_correct":
        return _parse_bool(key, raw)
    if key == "scheme":
        if raw not in SCHEME_KINDS:
            raise ConfigurationError(
                f"key 'scheme': must be one of {SCHEME_KINDS}, got {raw!r}")
        return raw
    return raw


def parse_config(path: str | None = None,
                 overrides: dict | None = None) -> ExperimentConfig:
    """Build a validated config from a `key = value` file plus overrides.

    CLI flag overrides win over file entries; unset keys take the defaults
    of the reference 2D experiment.  Comment lines start with '#'.
    """
    values: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}")
        for lineno, line in enumerate(lines, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected 'key = value', got {text!r}")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw.strip())
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = value

    scheme = SchemeConfig(
        kind=values.pop("scheme", "midpoint2d"),
        tol=values.pop("solver_tol", 1e-12),
        max_iterations=values.pop("solver_max_iter", 50))
    config = ExperimentConfig(scheme=scheme, **values)
    config.validate()
    return config


def config_to_lines(config: ExperimentConfig) -> list[str]:
    pairs = [
        ("dim", config.dim), ("modes", config.modes),
        ("cutoff_k", config.cutoff_k), ("alpha", config.alpha),
        ("theta", config.theta), ("sigma", config.sigma),
        ("dt", config.dt), ("horizon", config.horizon),
        ("paths", config.paths), ("scheme", config.scheme.kind),
        ("seed", config.seed), ("stride", config.stride),
        ("drift_correct", config.drift_correct),
        ("solver_tol", config.scheme.tol),
        ("solver_max_iter", config.scheme.max_iterations),
    ]
    return [f"{key} = {_fmt(value)}" for key, value in pairs]


@dataclass
class RunManifest:
    """Everything needed to reproduce a run and audit its outputs."""

    command: str
    config: ExperimentConfig
    duration_s: float = 0.0
    failed_paths: int = 0
    outputs: list = dataclass_field(default_factory=list)

    def write(self, path: str) -> None:
        lines = ["# driftdiffuse run manifest",
                 f"# version: {__version__}",
                 f"# command: {self.command}",
                 f"# duration_s: {self.duration_s:.3f}",
                 f"# failed_paths: {self.failed_paths}"]
        lines += [f"# output: {name}" for name in self.outputs]
        lines += config_to_lines(self.config)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _diffusivity_rows(curve):
    d = curve.matrix.shape[1]
    header = ["t"]
    for i in range(d):
        header += [f"D{i + 1}{i + 1}", f"D{i + 1}{i + 1}_se"]
    header += ["D12", "count"]
    rows = []
    for r, t in enumerate(curve.times):
        row = [float(t)]
        for i in range(d):
            row += [float(curve.matrix[r, i, i]), float(curve.stderr[r, i])]
        row += [float(curve.matrix[r, 0, 1]), curve.count]
        rows.append(row)
    return header, rows


def _raw_moment_rows(acc):
    d = acc.sum_x.shape[1]
    header = (["t", "count"] + [f"sumX_{i + 1}" for i in range(d)]
              + [f"sumXX_{i + 1}{j + 1}" for i in range(d)
                 for j in range(i, d)]
              + [f"sumB_{i + 1}" for i in range(d)] + ["failed"])
    rows = []
    for r, t in enumerate(acc.times):
        row = [float(t), acc.count]
        row += [float(v) for v in acc.sum_x[r]]
        row += [float(acc.sum_xx[r, i, j]) for i in range(d)
                for j in range(i, d)]
        row += [float(v) for v in acc.sum_b[r]]
        row.append(acc.failed)
        rows.append(row)
    return header, rows


def cmd_simulate(args) -> int:
    config = parse_config(args.config, _overrides(args))
    started = time.monotonic()
    acc = run_ensemble(config, threads=args.threads)
    variant = "drift-corrected" if config.drift_correct else "raw"
    curve = effective_diffusivity(acc, variant)

    out = args.out
    header, rows = _diffusivity_rows(curve)
    write_csv(f"{out}.csv", header, rows)
    outputs = [f"{out}.csv"]
    if args.raw_moments:
        raw_header, raw_rows = _raw_moment_rows(acc)
        write_csv(args.raw_moments, raw_header, raw_rows)
        outputs.append(args.raw_moments)
    from .plots import plot_diffusivity
    plot_diffusivity(curve, f"{out}.png")
    outputs.append(f"{out}.png")

    manifest = RunManifest("simulate", config,
                           duration_s=time.monotonic() - started,
                           failed_paths=acc.failed, outputs=outputs)
    manifest.write(f"{out}.manifest.txt")
    print(f"D11(T={config.horizon:g}) = {curve.matrix[-1, 0, 0]:.6g} "
          f"+/- {curve.stderr[-1, 0]:.2g} ({variant}, {acc.count} paths, "
          f"{acc.failed} failed)")
    return 0


def cmd_convergence(args) -> int:
    config = parse_config(args.config, _overrides(args))
    dts = _parse_float_list(args.dts, "--dts")
    started = time.monotonic()
    reference = float(args.reference) if args.reference is not None else None
    fit, rows = convergence_study(config, dts, reference=reference,
                                  threads=args.threads)
    out = args.out
    write_csv(f"{out}.csv", ["dt", "abs_error", "stderr", "included_in_fit"],
              rows)
    from .plots import plot_convergence
    plot_convergence(rows, fit, f"{out}.png")
    manifest = RunManifest("convergence", config,
                           duration_s=time.monotonic() - started,
                           outputs=[f"{out}.csv", f"{out}.png"])
    manifest.write(f"{out}.manifest.txt")
    print(f"fitted slope = {fit.slope:.4f} (residual rms {fit.residual_rms:.3g})")
    return 0


def cmd_decay(args) -> int:
    config = parse_config(args.config, _overrides(args))
    started = time.monotonic()
    curve = decay_diagnostic(config, args.states, args.inner_paths,
                             args.steps, threads=args.threads)
    out = args.out
    rows = [(int(n), float(t), float(v), curve.floor)
            for n, t, v in zip(curve.steps, curve.times, curve.variance)]
    write_csv(f"{out}.csv", ["n", "t", "variance", "floor"], rows)
    from .plots import plot_decay
    plot_decay(curve, f"{out}.png")
    manifest = RunManifest("decay", config,
                           duration_s=time.monotonic() - started,
                           outputs=[f"{out}.csv", f"{out}.png"])
    manifest.write(f"{out}.manifest.txt")
    if curve.rate is None:
        print("decay rate: unfit (variance below estimation floor)")
    else:
        # The variance statistic estimates a squared norm, so the
        # amplitude-decay rate is half the fitted variance rate.
        print(f"variance decay rate = {curve.rate:.4f} "
              f"(amplitude rate {curve.rate / 2:.4f})")
    return 0


def cmd_residual(args) -> int:
    config = parse_config(args.config, _overrides(args))
    sigmas = _parse_float_list(args.sigmas, "--sigmas")
    started = time.monotonic()
    rows, plateau = residual_sweep(config, sigmas, threads=args.threads)
    out = args.out
    write_csv(f"{out}.csv", ["kappa", "D11", "D11_se"], rows)
    from .plots import plot_residual
    plot_residual(rows, plateau, f"{out}.png")
    manifest = RunManifest("residual", config,
                           duration_s=time.monotonic() - started,
                           outputs=[f"{out}.csv", f"{out}.png"])
    manifest.write(f"{out}.manifest.txt")
    print(f"small-kappa plateau = {plateau:.6g}")
    return 0


def cmd_fieldcheck(args) -> int:
    config = parse_config(args.config, _overrides(args))
    policy = SeedPolicy(config.seed)
    checks: list[tuple[str, bool, str]] = []

    modes = sample_modes(config.dim, config.modes, config.cutoff_k,
                         config.alpha, policy.stream(0, LABEL_MODES))
    ou = init_ou(modes, config.theta, config.dt,
                 policy.stream(0, LABEL_OU_INIT))
    fld = VelocityField(modes, ou)

    rng = np.random.default_rng(policy.stream(0, 7).integers(2 ** 32))
    points = rng.uniform(0, 2 * np.pi, size=(100, config.dim))
    div = check_divergence(fld, points, h=1e-5)
    checks.append(("divergence-free", div <= 1e-6, f"max rel div {div:.2e}"))

    radii = np.sort(np.linalg.norm(modes.wavevectors, axis=1))
    cdf = (radii / config.cutoff_k) ** (2.0 - 2.0 * config.alpha)
    empirical = np.arange(1, radii.size + 1) / radii.size
    ks = float(np.max(np.abs(cdf - empirical)))
    ks_crit = 1.63 / math.sqrt(radii.size)
    checks.append(("spectrum radius law", ks < ks_crit,
                   f"KS {ks:.4f} < {ks_crit:.4f}"))

    n_chains = 20000
    lag_rng = policy.stream(1, LABEL_OU_INIT)
    chain_modes = sample_modes(config.dim, n_chains, config.cutoff_k,
                               config.alpha, policy.stream(1, LABEL_MODES))
    state = init_ou(chain_modes, config.theta, config.dt, lag_rng)
    history = [state.xi[:, 0].copy()]
    for _ in range(5):
        state = advance_ou(state, lag_rng)
        history.append(state.xi[:, 0].copy())
    ok = True
    details = []
    for lag in range(6):
        cov = float(np.mean(history[0] * history[lag]))
        expected = math.exp(-config.theta * lag * config.dt)
        tol = 4.0 / math.sqrt(n_chains)
        ok = ok and abs(cov - expected) < tol
        details.append(f"lag{lag} {cov:+.3f}~{expected:+.3f}")
    checks.append(("OU autocovariance", ok, " ".join(details[:3]) + " ..."))

    b_modes = np.array([mode_velocity(fld, m, points[0])
                        for m in range(min(modes.count, 200))])
    dots = np.abs(np.einsum("md,md->m",
                            modes.wavevectors[:b_modes.shape[0]], b_modes))
    transversal = float(dots.max())
    checks.append(("per-mode transversality", transversal < 1e-12,
                   f"max |k.b_m| {transversal:.1e}"))

    if config.dim == 2:
        angles = np.arctan2(modes.wavevectors[:, 1], modes.wavevectors[:, 0])
        counts, _ = np.histogram(angles, bins=36, range=(-np.pi, np.pi))
        expected = modes.count / 36.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # chi-square critical value, 35 dof at the 1% level
        checks.append(("isotropy (chi-square, 36 bins)", chi2 < 57.34,
                       f"chi2 {chi2:.1f} < 57.34"))

    if args.dump_modes:
        d = config.dim
        c = ou.xi.shape[1]
        header = (["m"] + [f"k_{i + 1}" for i in range(d)]
                  + [f"xi_{j + 1}" for j in range(c)]
                  + [f"eta_{j + 1}" for j in range(c)])
        rows = [[m] + [float(v) for v in modes.wavevectors[m]]
                + [float(v) for v in ou.xi[m]]
                + [float(v) for v in ou.eta[m]]
                for m in range(modes.count)]
        write_csv(args.dump_modes, header, rows)
        print(f"modes dumped to {args.dump_modes}")

    all_ok = True
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        all_ok = all_ok and ok
    return 0 if all_ok else 2


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(f"{flag}: expected comma-separated floats, "
                                 f"got {raw!r}") from None


def _overrides(args) -> dict:
    picked = {}
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            picked[key] = value
    if "drift_correct" in picked and isinstance(picked["drift_correct"], str):
        picked["drift_correct"] = _parse_bool("drift_correct",
                                              picked["drift_correct"])
    return picked


def _add_common(parser: argparse.ArgumentParser, default_out: str) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--out", default=default_out,
                        help="output file prefix")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("DRIFTDIFFUSE_THREADS", "1")),
                        help="worker count; results are identical for any value")
    parser.add_argument("--dim", type=int)
    parser.add_argument("--modes", type=int)
    parser.add_argument("--cutoff-k", dest="cutoff_k", type=float)
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--sigma", type=float)
    parser.add_argument("--dt", type=float)
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--paths", type=int)
    parser.add_argument("--scheme", choices=SCHEME_KINDS)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--stride", type=int)
    parser.add_argument("--drift-correct", dest="drift_correct",
                        choices=sorted(_BOOL_WORDS))
    parser.add_argument("--solver-tol", dest="solver_tol", type=float)
    parser.add_argument("--solver-max-iter", dest="solver_max_iter", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftdiffuse",
        description="Effective diffusivity of passive tracers in random "
                    "incompressible flows")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one ensemble and report D(t)")
    _add_common(p, "simulate")
    p.add_argument("--raw-moments", help="also write raw moment sums CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("convergence", help="error vs dt slope study")
    _add_common(p, "convergence")
    p.add_argument("--dts", required=True,
                   help="comma-separated dt values, e.g. 0.0125,0.025,0.05")
    p.add_argument("--reference", type=float,
                   help="known reference D11; computed at min(dt)/4 if omitted")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("decay", help="mixing (variance decay) diagnostic")
    _add_common(p, "decay")
    p.add_argument("--states", type=int, default=100,
                   help="outer frozen field states")
    p.add_argument("--inner-paths", type=int, default=2000,
                   help="inner continuations per state")
    p.add_argument("--steps", type=int, default=100, help="horizon steps")
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("residual", help="small-sigma diffusivity sweep")
    _add_common(p, "residual")
    p.add_argument("--sigmas", required=True,
                   help="descending comma-separated sigma values")
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("fieldcheck", help="field synthesis diagnostics")
    _add_common(p, "fieldcheck")
    p.add_argument("--dump-modes", help="write the sampled modes to CSV")
    p.set_defaults(func=cmd_fieldcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (EnsembleAbortError, NonConvergenceError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
