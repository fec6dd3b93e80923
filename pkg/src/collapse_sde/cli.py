"""Command-line entry point: ``collapse-sde <command> [options]``.

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure,
3 a ``compare`` (or ``spectrum --check-*``) check did not pass.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, metrics, nsa, oracles, regimes
from .errors import CollapseError, ConfigInvalid
from .records import atomic_write, content_hash, fmt
from .state import GaussianState, GridSpec, PhysicalParams, WaveFunction, normalize, render_gaussian

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# flags that map one-to-one onto config keys
RUN_FLAGS = [
    ("--scheme", "scheme", str),
    ("--dt", "dt", float),
    ("--t-end", "t_end", float),
    ("--stride", "record_stride", int),
    ("--seed", "seed", int),
    ("--n-trajectories", "n_trajectories", int),
    ("--hbar", "params.hbar", float),
    ("--mass", "params.mass", float),
    ("--lambda", "params.lambda", float),
    ("--half-width", "grid.half_width", float),
    ("--points", "grid.n_points", int),
    ("--init", "init.kind", str),
]


def _add_output(p):
    p.add_argument("--out", type=Path, default=None,
                   help=f"output directory (default ${harness.OUT_ENV} or ./runs)")
    p.add_argument("--emit-plot-data", action="store_true", help="write plot-ready CSVs with a manifest")


def _add_run_options(p):
    p.add_argument("--config", type=Path, help="key = value run configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key, e.g. --set init.n=1 (repeatable)")
    for flag, key, kind in RUN_FLAGS:
        p.add_argument(flag, dest=key.replace(".", "__"), type=kind, default=None, help=f"sets {key}")
    p.add_argument("--diagnostics", default=None, help="comma-separated: gaussian_distance,delta_A2")
    p.add_argument("--recenter", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--noise", action=argparse.BooleanOptionalAction, default=None)
    _add_output(p)


def _config_from_args(args, base: harness.RunConfig | None = None, **forced) -> harness.RunConfig:
    overrides = harness.parse_overrides(args.set)
    for _, key, _ in RUN_FLAGS:
        value = getattr(args, key.replace(".", "__"))
        if value is not None:
            overrides[key] = value
    if args.diagnostics is not None:
        overrides["diagnostics"] = [d for d in args.diagnostics.split(",") if d]
    for name in ("recenter", "noise"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    overrides.update(forced)
    return harness.load_config(args.config, overrides, base).validate()


def _out_dir(args, name: str) -> Path:
    root = args.out if args.out is not None else harness.default_out_dir()
    out = Path(root) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _plot_manifest(out: Path, files: list[str], extra: dict) -> None:
    man = {"files": sorted(files), **extra}
    man["content_hash"] = content_hash(man)
    atomic_write(out / "plot_manifest.json", json.dumps(man, sort_keys=True, indent=2) + "\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    atomic_write(path, "\n".join(lines) + "\n")


# -- commands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _config_from_args(args, n_trajectories=1)
    rec = harness.run_chunk(config, [0])[0]
    out = _out_dir(args, "simulate")
    atomic_write(out / "config.toml", harness.dump_config(config))
    rec.write(out / "trajectory")
    if rec.final_state is not None:
        rec.final_state.save(out / "final_state.wfn", config.params.unit_system)
    if args.emit_plot_data:
        files = ["trajectory.csv"]
        if rec.final_state is not None:
            rec.final_state.to_csv(out / "final_state.csv")
            files.append("final_state.csv")
        _plot_manifest(out, files, {"command": "simulate", "config_hash": config.config_hash()})
    if rec.failure:
        print(f"trajectory failed: {rec.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    last = {name: rec[name][-1] for name in rec.column_names()}
    print(f"t = {rec.times[-1]:.6g}  " + "  ".join(f"{k} = {v:.6g}" for k, v in last.items()))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    config = _config_from_args(args)
    out = _out_dir(args, "ensemble")
    summary = harness.run_ensemble(config, out, workers=args.workers)
    if args.emit_plot_data:
        names = sorted(summary.mean)
        rows = []
        for j, t in enumerate(summary.times):
            row = [t]
            for name in names:
                m, v = summary.mean[name][j], summary.variance[name][j]
                row += [np.nan if m is None else m, np.nan if v is None else v]
            rows.append(row)
        header = ["t"] + [f"{n}_{s}" for n in names for s in ("mean", "var")]
        _write_csv(out / "ensemble_moments.csv", header, rows)
        _plot_manifest(out, ["ensemble_moments.csv"], {"command": "ensemble",
                                                       "config_hash": summary.config_hash})
    print(f"{summary.n_trajectories} trajectories, {summary.n_failed} failed")
    for name, value in sorted(summary.final_median.items()):
        if value is not None:
            print(f"  median final {name} = {value:.6g}")
    if summary.collapse:
        print("  collapse fractions:", summary.collapse["fractions"], "stderr:", summary.collapse["stderr"])
    print(f"wrote {out / 'summary.json'}")
    return EXIT_OK


def cmd_gaussian(args) -> int:
    base = harness.RunConfig(scheme="gaussian_flow")
    overrides = {"scheme": "gaussian_flow", "init.kind": "gaussian"}
    for flag, key in (("alpha_re", "init.alpha_re"), ("alpha_im", "init.alpha_im"),
                      ("x", "init.x"), ("k", "init.k")):
        if getattr(args, flag) is not None:
            overrides[key] = getattr(args, flag)
    config = _config_from_args(args, base, **overrides)
    rec = harness.run_chunk(config, [0])[0]
    out = _out_dir(args, "gaussian")
    rec.write(out / "gaussian_trajectory")
    if args.emit_plot_data:
        _plot_manifest(out, ["gaussian_trajectory.csv"], {"command": "gaussian",
                                                          "config_hash": config.config_hash()})
    if rec.failure:
        print(f"reduced flow failed: {rec.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    a = complex(rec["alpha_re"][-1], rec["alpha_im"][-1])
    print(f"t = {rec.times[-1]:.6g}  alpha = {a.real:.10g}{a.imag:+.10g}i  "
          f"x_mean = {rec['x_mean'][-1]:.10g}  k_mean = {rec['k_mean'][-1]:.10g}")
    print(f"fixed point z^2/2 = {config.params.alpha_star.real:.10g}{config.params.alpha_star.imag:+.10g}i")
    return EXIT_OK


def _params_from(args) -> PhysicalParams:
    return PhysicalParams(hbar=args.hbar, mass=args.mass, lam=args.lam)


def cmd_spectrum(args) -> int:
    params = _params_from(args)
    grid = GridSpec.centered(args.half_width, args.points)
    mode = nsa.eigenmode(args.mode, params, grid)
    ev = mode.eigenvalue
    res = nsa.spectral_residual(mode, params)
    print(f"mode {args.mode}: eigenvalue {ev.real:.10g}{ev.imag:+.10g}i  spectral residual {res:.3e}")
    status = EXIT_OK
    out = _out_dir(args, "spectrum") if (args.emit_plot_data or args.project) else None
    files = []
    if args.check_stationary:
        u = normalize(mode.profile)
        v = nsa.evolve_nsa_grid(u, args.t, args.dt, params)
        drift = float(np.max(np.abs(np.abs(v.amplitudes) - np.abs(u.amplitudes)))) / args.t
        ok = drift < args.tol
        print(f"{'PASS' if ok else 'FAIL'} stationarity: sup-drift of |psi| = {drift:.3e} per unit time "
              f"(tolerance {args.tol:.0e})")
        status = status if ok else EXIT_CHECK
    if args.check_pairing is not None:
        G = nsa.pairing_matrix(args.check_pairing, params, grid)
        err = float(np.max(np.abs(G - np.eye(len(G)))))
        ok = err < 1e-8
        print(f"{'PASS' if ok else 'FAIL'} pairing: max |G - I| = {err:.3e} for n, m <= {args.check_pairing}")
        status = status if ok else EXIT_CHECK
    if args.project:
        psi = WaveFunction.load(args.project)
        proj = nsa.bilinear_project(psi, args.n_max, params)
        print(f"projection residual {proj.residual:.3e}")
        _write_csv(out / "coefficients.csv", ["n", "re_c", "im_c"],
                   [(n, c.real, c.imag) for n, c in enumerate(proj.coefficients)])
        files.append("coefficients.csv")
    if args.emit_plot_data:
        table = nsa.mode_table(args.mode, params, grid)
        header = ["x"] + [f"{part}_u{n}" for n in range(len(table)) for part in ("re", "im")]
        rows = [[x] + [v for n in range(len(table)) for v in (table[n, j].real, table[n, j].imag)]
                for j, x in enumerate(grid.x)]
        _write_csv(out / "modes.csv", header, rows)
        files.append("modes.csv")
        mode.profile.save(out / f"mode_{args.mode}.wfn")
        _plot_manifest(out, files, {"command": "spectrum", "params": params.to_dict(),
                                    "grid": grid.to_dict()})
    return status


def cmd_variance(args) -> int:
    if args.counterexample is not None:
        spec = (lambda k: float(k)) if args.spectrum == "linear" else (lambda k: float(np.sqrt(k)))
        rows = []
        for n in range(args.counterexample + 1):
            d, ov = metrics.counterexample_sequence(n, args.a, args.b, spec)
            rows.append((n, d, ov))
            print(f"n = {n:4d}  dA^2 = {d:.6e}  max overlap = {ov:.6g}")
        if args.emit_plot_data:
            out = _out_dir(args, "variance")
            _write_csv(out / "counterexample.csv", ["n", "delta_A2", "max_overlap"], rows)
            _plot_manifest(out, ["counterexample.csv"], {"command": "variance", "spectrum": args.spectrum})
        return EXIT_OK
    params = _params_from(args)
    grid = GridSpec.centered(args.half_width, args.points)
    if args.state:
        psi = normalize(WaveFunction.load(args.state))
    else:
        psi = normalize(render_gaussian(GaussianState(complex(args.alpha_re, args.alpha_im),
                                                      args.x, args.k), grid))
    av = metrics.operator_A_variance(psi, params)
    fit = metrics.gaussian_distance(psi, params)
    print(f"dA^2 = {av.delta_A2:.6e}  <A> = {av.mean_A.real:.6g}{av.mean_A.imag:+.6g}i")
    print(f"gaussian distance = {fit.distance:.6e} at x = {fit.x_mean:.6g}, k = {fit.k_mean:.6g}"
          f" (converged: {fit.converged})")
    return EXIT_OK


def cmd_regimes(args) -> int:
    rep = regimes.build_report(args.mass, c=args.c, T_perception=args.T, length_unit=args.length_unit)
    if args.json:
        print(rep.to_json())
    else:
        print(rep.table())
        print(f"(quoted reference value for sqrt(lambda) hbar/m at 1 g: {rep.quoted_drift_coeff_1g:.2e},"
              " not derived)")
    if args.emit_plot_data:
        out = _out_dir(args, "regimes")
        atomic_write(out / "regimes.json", rep.to_json() + "\n")
        _plot_manifest(out, ["regimes.json"], {"command": "regimes"})
    return EXIT_OK


def cmd_compare(args) -> int:
    results = []
    if args.routes == "girsanov":
        results.append(oracles.girsanov_route(args.dt or 1e-4, t=args.t, seed=args.seed, rule=args.rule,
                                              tol=args.tol or 5e-3))
    elif args.routes == "gaussian-flow":
        results.append(oracles.gaussian_flow_route(args.dt or 1e-4, t=args.t, seed=args.seed,
                                                   tol=args.tol or 1e-3))
    elif args.routes == "nsa-modes":
        results.append(oracles.nsa_mode_route(t=args.t, dt=args.dt or 1e-3, seed=args.seed,
                                              tol=args.tol or 1e-5))
    elif args.routes == "finite-born":
        w = args.weight
        b = oracles.finite_born((w, 1 - w), n_paths=args.n, seed=args.seed, dt=args.dt or 0.01)
        z = b.z_scores
        for j, (f, s, wj) in enumerate(zip(b.fractions, b.stderr, b.weights)):
            print(f"  eigenstate {j}: fraction {f:.4f} +- {s:.4f} (weight {wj:.4f}, z = {z[j]:+.2f})")
        print(f"{'PASS' if b.ok else 'FAIL'} finite-dimensional Born weights within 3 standard errors "
              f"({b.n_used} decided, {b.n_undecided} undecided)")
        return EXIT_OK if b.ok else EXIT_CHECK
    for r in results:
        print(r.line())
        for k, v in sorted(r.detail.items()):
            print(f"  {k} = {v}")
    if args.emit_plot_data:
        out = _out_dir(args, "compare")
        atomic_write(out / "compare.json", json.dumps(
            [{"name": r.name, "value": r.value, "tol": r.tol, "ok": r.ok, **r.detail} for r in results],
            sort_keys=True, indent=2) + "\n")
        _plot_manifest(out, ["compare.json"], {"command": "compare", "routes": args.routes})
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


def cmd_config(args) -> int:
    config = _config_from_args(args)
    sys.stdout.write(harness.dump_config(config))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_physics(p, half_width=12.0, points=256):
    p.add_argument("--hbar", type=float, default=1.0)
    p.add_argument("--mass", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--half-width", type=float, default=half_width)
    p.add_argument("--points", type=int, default=points)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="collapse-sde", description="Collapse-model trajectory simulations and checks.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate one trajectory")
    _add_run_options(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ensemble", help="run a seeded ensemble of trajectories")
    _add_run_options(p)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("gaussian", help="integrate the reduced Gaussian flow")
    _add_run_options(p)
    p.add_argument("--alpha-re", type=float, default=None)
    p.add_argument("--alpha-im", type=float, default=None)
    p.add_argument("--x", type=float, default=None)
    p.add_argument("--k", type=float, default=None)
    p.set_defaults(func=cmd_gaussian)

    p = sub.add_parser("spectrum", help="non-self-adjoint oscillator modes and projections")
    _add_physics(p)
    p.add_argument("--mode", type=int, default=0)
    p.add_argument("--n-max", type=int, default=nsa.N_MAX_DEFAULT)
    p.add_argument("--check-stationary", action="store_true")
    p.add_argument("--check-pairing", type=int, default=None, metavar="N")
    p.add_argument("--project", type=Path, default=None, metavar="WFN_FILE")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-6)
    _add_output(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("variance", help="operator-A variance and the counterexample sequence")
    _add_physics(p)
    p.add_argument("--state", type=Path, default=None, metavar="WFN_FILE")
    p.add_argument("--alpha-re", type=float, default=0.5)
    p.add_argument("--alpha-im", type=float, default=-0.5)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--k", type=float, default=0.0)
    p.add_argument("--counterexample", type=int, default=None, metavar="N_MAX")
    p.add_argument("--spectrum", choices=("linear", "sqrt"), default="sqrt")
    p.add_argument("--a", type=float, default=float(np.sqrt(0.5)))
    p.add_argument("--b", type=float, default=float(np.sqrt(0.5)))
    _add_output(p)
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("regimes", help="time-regime numbers in SI units")
    p.add_argument("--mass", type=float, default=1e-3, help="kg")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--T", type=float, default=1e-3, help="perception time, s")
    p.add_argument("--length-unit", type=float, default=regimes.ANGSTROM, help="m")
    p.add_argument("--json", action="store_true")
    _add_output(p)
    p.set_defaults(func=cmd_regimes)

    p = sub.add_parser("compare", help="oracle comparisons between independent routes")
    p.add_argument("--routes", choices=("girsanov", "gaussian-flow", "nsa-modes", "finite-born"),
                   required=True)
    p.add_argument("--dt", type=float, default=None)
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--rule", choices=("trapezoid", "left"), default="trapezoid")
    p.add_argument("--weight", type=float, default=0.7, help="finite-born: |alpha|^2")
    p.add_argument("--n", type=int, default=10_000, help="finite-born: number of paths")
    _add_output(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("config", help="print the resolved configuration")
    _add_run_options(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CollapseError, ValueError, ArithmeticError, OSError) as exc:
        idx = getattr(exc, "time_index", None)
        where = f" (time index {idx})" if idx is not None else ""
        print(f"error: {type(exc).__name__}: {exc}{where}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
