"""Cross-checks between independent routes to the same quantity.

Each function returns a small result object with the measured discrepancy,
so the same code backs the ``compare`` command, the test-suite and the
experiment scripts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import finite, gaussian_flow, nsa
from .engine import evolve, girsanov_transform
from .noise import NoisePath, trajectory_rng
from .state import GaussianState, GridSpec, PhysicalParams, normalize, render_gaussian

NATURAL = PhysicalParams()


@dataclass(frozen=True)
class RouteResult:
    name: str
    value: float
    tol: float
    detail: dict

    @property
    def ok(self) -> bool:
        return bool(self.value < self.tol)

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (tolerance {self.tol:.1e})"


def _gaussian_start(grid: GridSpec):
    return render_gaussian(GaussianState(1.0 + 0.2j, 0.5, 0.3), grid)


def girsanov_route(dt: float, t: float = 1.0, seed: int = 1, rule: str = "trapezoid",
                   params: PhysicalParams = NATURAL, grid: GridSpec | None = None,
                   fine_dt: float = 1e-4, tol: float = 5e-3) -> RouteResult:
    """Linear solve + normalize + noise transform against a direct nonlinear solve.

    The driving path is drawn at ``fine_dt`` and summed into blocks, so runs at
    different ``dt`` share one Brownian path. The transform evaluates <q> by
    ``rule``: with "left" the two routes coincide step by step (the distance
    is round-off), with "trapezoid" they differ at O(dt).
    """
    grid = grid or GridSpec.centered(10.0, 256)
    n_fine = int(round(t / fine_dt))
    factor = int(round(dt / fine_dt))
    if factor < 1 or abs(factor * fine_dt - dt) > 1e-12:
        raise ValueError("dt must be a whole multiple of fine_dt")
    xi = NoisePath.generate(n_fine, fine_dt, seed).coarsen(factor)
    psi0 = _gaussian_start(grid)
    lin = evolve(psi0, xi, params, "linear", stride=len(xi), track_means=True, max_exponent=None)
    means = lin.step_q_means if rule == "trapezoid" else lin.step_q_means[:-1]
    w = girsanov_transform(xi, means, params, rule=rule)
    non = evolve(psi0, w, params, "nonlinear", stride=len(w), max_exponent=None)
    a = normalize(lin.final_state)
    b = non.final_state
    q_gap = float(np.max(np.abs(lin["q_mean"] - non["q_mean"])))
    return RouteResult(f"girsanov route (dt={dt:g}, rule={rule})", a.distance(b), tol,
                       {"dt": dt, "t": t, "seed": seed, "rule": rule, "q_gap": q_gap})


def gaussian_flow_route(dt: float = 1e-4, t: float = 1.0, seed: int = 1,
                        params: PhysicalParams = NATURAL, grid: GridSpec | None = None,
                        tol: float = 1e-3) -> RouteResult:
    """Reduced Gaussian SDE against the grid integrator of the linear equation."""
    grid = grid or GridSpec.centered(12.0, 256)
    g0 = GaussianState(1.0 + 0.2j, 0.5, 0.3)
    n = int(round(t / dt))
    xi = NoisePath.generate(n, dt, seed)
    rec = evolve(render_gaussian(g0, grid), xi, params, "linear", stride=n)
    _, states = gaussian_flow.gaussian_trajectory(g0, xi, params, stride=n)
    a = normalize(rec.final_state)
    b = normalize(render_gaussian(states[-1], grid, None))
    norm_rel = abs(rec.final_state.norm2 / states[-1].norm2 - 1)
    return RouteResult(f"gaussian flow vs grid (dt={dt:g})", a.distance(b), tol,
                       {"dt": dt, "t": t, "seed": seed, "norm2_rel_gap": norm_rel})


def nsa_mode_route(t: float = 1.0, dt: float = 1e-3, n_max: int = 20, seed: int = 1,
                   params: PhysicalParams = NATURAL, grid: GridSpec | None = None,
                   tol: float = 1e-5) -> RouteResult:
    """Grid semigroup against project -> evolve modes -> reconstruct."""
    grid = grid or GridSpec.centered(16.0, 512)
    rng = trajectory_rng(seed)
    c = (rng.normal(size=n_max + 1) + 1j * rng.normal(size=n_max + 1)) * 0.5 ** np.arange(n_max + 1)
    psi = normalize(nsa.WaveFunction(grid, nsa.reconstruct(c, params, grid)))
    grid_out = nsa.evolve_nsa_grid(psi, t, dt, params)
    proj = nsa.bilinear_project(psi, n_max, params)
    mode_out = normalize(nsa.WaveFunction(grid, nsa.reconstruct(
        nsa.evolve_modes(proj.coefficients, t, params), params, grid)))
    return RouteResult(f"nsa grid vs mode map (t={t:g})", grid_out.distance(mode_out), tol,
                       {"t": t, "dt": dt, "n_max": n_max, "projection_residual": proj.residual})


@dataclass(frozen=True)
class BornCheck:
    weights: tuple
    fractions: tuple
    stderr: tuple
    n_used: int
    n_undecided: int

    @property
    def z_scores(self) -> tuple:
        return tuple((f - w) / s if s > 0 else (0.0 if f == w else np.inf)
                     for f, w, s in zip(self.fractions, self.weights, self.stderr))

    @property
    def ok(self) -> bool:
        return all(abs(z) < 3 for z in self.z_scores)


def finite_born(weights=(0.7, 0.3), spectrum=(0.0, 1.0), n_paths: int = 10_000, t: float = 20.0,
                dt: float = 0.01, lam: float = 1.0, seed: int = 1, threshold: float = 0.99) -> BornCheck:
    """Finite-dimensional collapse testbed with H = 0: share of paths ending in each eigenstate."""
    spec = np.asarray(spectrum, dtype=float)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(spec):
        raise ValueError("one weight per eigenvalue")
    amps = np.sqrt(w / w.sum())
    L = np.diag(spec)
    n = int(round(t / dt))
    rng = trajectory_rng(seed)
    final, _ = finite.evolve_finite_batch(np.tile(amps, (n_paths, 1)), np.zeros_like(L), [L],
                                          dt, n, lam, rng)
    pops = finite.populations(final, L)
    winner = pops.argmax(axis=1)
    decided = pops.max(axis=1) > threshold
    n_used = int(decided.sum())
    fr = tuple(float(np.mean(winner[decided] == j)) for j in range(len(spec)))
    se = tuple(float(np.sqrt(f * (1 - f) / n_used)) for f in fr)
    return BornCheck(tuple(float(x) for x in w / w.sum()), fr, se, n_used, n_paths - n_used)
