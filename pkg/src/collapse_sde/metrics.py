"""Diagnostics for what a trajectory has converged to."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import BadWeights, ZeroNorm
from .records import TrajectoryRecord
from .state import MIN_NORM2, PhysicalParams, WaveFunction, apply_momentum, observables

GRAD_TOL = 1e-9


@dataclass(frozen=True)
class GaussianFit:
    x_mean: float
    k_mean: float
    distance: float
    converged: bool
    overlap: float = float("nan")
    gradient: float = float("nan")


class _Family:
    """Normalized fixed-spread coherent states exp[-(z^2/2)(x-a)^2 + i b x] on a grid.

    Parameters are handled in units of the family's own position and
    wavenumber spreads so tolerances are dimensionless.
    """

    def __init__(self, psi: WaveFunction, params: PhysicalParams):
        self.psi = psi.amplitudes
        self.x = psi.x
        self.dx = psi.grid.dx
        self.half_z2 = params.z2 / 2
        ar = self.half_z2.real
        self.sx = np.sqrt(1 / (4 * ar))
        self.sk = np.sqrt(abs(self.half_z2) ** 2 / ar)
        # norm is independent of (a, b); take it from the grid for consistency
        g0 = np.exp(-self.half_z2 * (self.x - self.x.mean()) ** 2)
        self.inv_norm = 1 / np.sqrt(np.sum(np.abs(g0) ** 2) * self.dx)

    def conj_member(self, a, b):
        return np.conj(np.exp(-self.half_z2 * (self.x - a) ** 2 + 1j * b * self.x)) * self.inv_norm

    def overlap(self, u):
        a, b = u[0] * self.sx, u[1] * self.sk
        return np.sum(self.conj_member(a, b) * self.psi) * self.dx

    def objective(self, u):
        return 1.0 - abs(self.overlap(u))

    def value_and_grad(self, u):
        a, b = u[0] * self.sx, u[1] * self.sk
        w = self.conj_member(a, b) * self.psi
        F = np.sum(w) * self.dx
        dFa = np.sum(np.conj(2 * self.half_z2) * (self.x - a) * w) * self.dx
        dFb = np.sum(-1j * self.x * w) * self.dx
        mag = abs(F)
        if mag == 0:
            return 1.0, np.zeros(2)
        grad = -np.array([(np.conj(F) * dFa).real * self.sx, (np.conj(F) * dFb).real * self.sk]) / mag
        return 1.0 - mag, grad


def gaussian_distance(psi: WaveFunction, params: PhysicalParams, polish: bool = True) -> GaussianFit:
    """Distance from a normalized state to the fixed-spread Gaussian family.

    The global phase is optimized analytically (distance^2 = 2 - 2|<G|psi>|);
    centre and wavenumber start from the state's moments and are refined by
    Nelder-Mead from a few nearby starts, then polished with the analytic
    gradient. ``converged`` is False when the final gradient exceeds 1e-9.
    """
    if not psi.norm2 > MIN_NORM2:
        raise ZeroNorm("cannot fit the zero state")
    fam = _Family(psi, params)
    obs = observables(psi, params)
    u0 = np.array([obs.q_mean / fam.sx, obs.p_mean / params.hbar / fam.sk])
    starts = [u0] + [u0 + d for d in ([1, 0], [-1, 0], [0, 1], [0, -1])]
    best = None
    for s in starts:
        res = minimize(fam.objective, s, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 2000})
        if best is None or res.fun < best.fun:
            best = res
    u = best.x
    if polish:
        ref = minimize(fam.value_and_grad, u, jac=True, method="BFGS", options={"gtol": 1e-12})
        if ref.fun <= best.fun:
            u = ref.x
    f, grad = fam.value_and_grad(u)
    mag = 1.0 - f
    distance = float(np.sqrt(max(0.0, 2.0 - 2.0 * min(mag, 1.0))))
    gnorm = float(np.linalg.norm(grad))
    return GaussianFit(float(u[0] * fam.sx), float(u[1] * fam.sk), distance,
                       bool(gnorm < GRAD_TOL), float(mag), gnorm)


def coherent_state(a: float, b: float, params: PhysicalParams, psi_grid) -> WaveFunction:
    """Normalized member of the attractor family centred at (a, b)."""
    x = psi_grid.x
    amps = np.exp(-params.z2 / 2 * (x - a) ** 2 + 1j * b * x)
    return WaveFunction(psi_grid, amps / np.sqrt(np.sum(np.abs(amps) ** 2) * psi_grid.dx))


@dataclass(frozen=True)
class AVariance:
    delta_A2: float
    mean_A: complex


def apply_A(psi: WaveFunction, params: PhysicalParams) -> np.ndarray:
    """(q - z^2/(2 lam m) p) psi, with p applied spectrally."""
    coeff = params.z2 / (2 * params.lam * params.mass)
    return psi.x * psi.amplitudes - coeff * apply_momentum(psi.amplitudes, psi.grid, params.hbar)


def operator_A_variance(psi: WaveFunction, params: PhysicalParams) -> AVariance:
    """||(A - <A>) psi||^2 with the complex mean <A> = <psi|A psi>."""
    n2 = psi.norm2
    if not n2 > MIN_NORM2:
        raise ZeroNorm("cannot evaluate on the zero state")
    amps = psi.amplitudes / np.sqrt(n2)
    unit = psi.with_amplitudes(amps)
    Apsi = apply_A(unit, params)
    mean = complex(np.vdot(amps, Apsi) * psi.grid.dx)
    delta = float(np.sum(np.abs(Apsi - mean * amps) ** 2) * psi.grid.dx)
    return AVariance(delta, mean)


def counterexample_sequence(n: int, alpha: complex, beta: complex,
                            spectrum: Callable[[int], float] | Sequence[float]) -> tuple[float, float]:
    """(Delta A^2, max eigenstate overlap) for alpha phi_n + beta phi_{n+1}."""
    pa, pb = abs(alpha) ** 2, abs(beta) ** 2
    if abs(pa + pb - 1) > 1e-12:
        raise BadWeights(f"|alpha|^2 + |beta|^2 = {pa + pb!r}, expected 1")
    a = spectrum if callable(spectrum) else (lambda j: spectrum[j])
    lo, hi = a(n), a(n + 1)
    if not hi > lo:
        raise BadWeights("spectrum must be strictly increasing")
    return pa * pb * (hi - lo) ** 2, max(pa, pb)


def collapse_threshold(params: PhysicalParams, factor: float = 4.0) -> float:
    """Var(q) below which a state counts as collapsed: factor x the attractor variance."""
    return factor * params.asymptotic_var_q


@dataclass
class BornStatistics:
    regions: list
    counts: list
    fractions: list
    stderr: list
    n_used: int
    n_not_collapsed: int
    n_outside: int = 0
    collapse_times: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "regions": self.regions, "counts": self.counts, "fractions": self.fractions,
            "stderr": self.stderr, "n_used": self.n_used,
            "n_not_collapsed": self.n_not_collapsed, "n_outside": self.n_outside,
        }, sort_keys=True, indent=2)


def collapse_index(record: TrajectoryRecord, threshold: float) -> int | None:
    below = np.flatnonzero(record["var_q"] < threshold)
    return int(below[0]) if len(below) else None


def born_statistics(records: Sequence[TrajectoryRecord], regions: Sequence[tuple[float, float]],
                    params: PhysicalParams, threshold: float | None = None,
                    at: str = "collapse") -> BornStatistics:
    """Share of collapsed trajectories whose <q> lies in each region.

    ``at="collapse"`` reads <q> at the first record where Var(q) drops below
    the threshold; ``at="final"`` uses the last record (still requiring
    collapse there). Trajectories that never collapse are excluded and
    counted.
    """
    threshold = collapse_threshold(params) if threshold is None else threshold
    regions = [tuple(map(float, r)) for r in regions]
    counts = [0] * len(regions)
    used = not_collapsed = outside = 0
    times = []
    for rec in records:
        if rec.failure is not None or len(rec) == 0:
            not_collapsed += 1
            continue
        if at == "final":
            j = len(rec) - 1 if rec["var_q"][-1] < threshold else None
        else:
            j = collapse_index(rec, threshold)
        if j is None:
            not_collapsed += 1
            continue
        used += 1
        times.append(float(rec.times[j]))
        q = rec["q_mean"][j]
        for r, (lo, hi) in enumerate(regions):
            if lo <= q < hi:
                counts[r] += 1
                break
        else:
            outside += 1
    fr = [c / used if used else float("nan") for c in counts]
    se = [np.sqrt(p * (1 - p) / used) if used else float("nan") for p in fr]
    return BornStatistics([list(r) for r in regions], counts, fr, [float(s) for s in se],
                          used, not_collapsed, outside, times)
