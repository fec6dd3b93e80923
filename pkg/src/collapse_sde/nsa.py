"""Eigensystem of the non-self-adjoint oscillator H = p^2/2m - i hbar lam q^2.

The eigenfunctions are complex-scaled Hermite functions
``u_n(x) = sqrt(z) exp(-z^2 x^2 / 2) Hbar_n(z x)`` with eigenvalues
``(1 - i)/2 hbar (n + 1/2) omega``. They are orthonormal under the
*bilinear* pairing ``int u_n u_m dx`` (no complex conjugate); projections in
this module use that pairing throughout.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .engine import kinetic_half, split_step
from .errors import GridEscape, IllConditioned, RecurrenceOverflow, ZeroNorm
from .state import (BOUNDARY_TOL, MIN_NORM2, GridSpec, PhysicalParams, WaveFunction,
                    apply_momentum, normalize, observables)

N_MAX_DEFAULT = 40
SHIFTED_N_MAX = 20
N_MAX_LIMIT = 60
TRUNCATION_TOL = 1e-8
ILL_CONDITIONED = 1e-2


def eigenvalue(n: int, params: PhysicalParams) -> complex:
    return (1 - 1j) / 2 * params.hbar * (n + 0.5) * params.omega


def mode_frequencies(n_max: int, params: PhysicalParams) -> np.ndarray:
    return (np.arange(n_max + 1) + 0.5) * params.omega


def hermite_functions(n_max: int, y: np.ndarray, log_gauss: np.ndarray | None = None,
                      precise: bool = True) -> np.ndarray:
    """Normalized Hermite functions h_n(y), n = 0..n_max, at complex arguments.

    Upward three-term recurrence on the polynomial part with per-step
    rescaling; the accumulated log scale is folded back together with the
    Gaussian factor at the end, so large |y| neither overflows nor loses
    the polynomial growth to premature underflow.

    ``log_gauss`` overrides ``-y**2/2``. Callers with y = z x pass
    ``-z2 x**2 / 2`` built from the exact z^2: the phase of the Gaussian
    reaches tens of radians on wide grids, and squaring a rounded z would
    put a relative error of ~1e-14 into every sample.

    With ``precise`` the recurrence runs in extended precision (where the
    platform has it) and the result is rounded once to complex128. The
    modes are far from normal (||u_20|| is in the thousands), so their
    bilinear pairings cancel heavily and need samples accurate to the
    last bit.
    """
    if n_max > N_MAX_LIMIT:
        raise RecurrenceOverflow(f"n_max = {n_max} exceeds the supported limit {N_MAX_LIMIT}")
    ctype, rtype = (np.clongdouble, np.longdouble) if precise else (np.complex128, np.float64)
    y = np.asarray(y).astype(ctype)
    log_gauss = -y**2 / 2 if log_gauss is None else np.asarray(log_gauss).astype(ctype)
    out = np.empty((n_max + 1,) + y.shape, dtype=complex)
    prev = np.zeros_like(y)
    cur = np.full_like(y, rtype(np.pi) ** rtype(-0.25))
    log_scale = np.zeros(y.shape, dtype=rtype)
    out[0] = cur * np.exp(log_gauss)
    for n in range(n_max):
        nxt = np.sqrt(rtype(2) / (n + 1)) * y * cur - np.sqrt(rtype(n) / (n + 1)) * prev
        s = np.maximum(np.abs(nxt), 1)
        prev, cur = cur / s, nxt / s
        log_scale += np.log(s)
        out[n + 1] = cur * np.exp(log_gauss + log_scale)
    if not np.all(np.isfinite(out)):
        raise RecurrenceOverflow("Hermite recurrence produced non-finite values")
    return out


def _sampled_modes(n_max: int, params: PhysicalParams, x: np.ndarray) -> np.ndarray:
    z2 = np.clongdouble(params.z2)
    z = np.sqrt(z2)
    xl = np.asarray(x).astype(np.longdouble)
    return (z ** 0.5 * hermite_functions(n_max, z * xl, -z2 * xl * xl / 2)).astype(complex)


@lru_cache(maxsize=32)
def _mode_table(n_max: int, params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    table = _sampled_modes(n_max, params, grid.x)
    table.setflags(write=False)
    return table


def mode_table(n_max: int, params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    """Rows u_0..u_{n_max} sampled on ``grid`` (cached, read-only)."""
    return _mode_table(int(n_max), params, grid)


@dataclass(frozen=True, eq=False)
class NsaMode:
    n: int
    eigenvalue: complex
    profile: WaveFunction


def eigenmode(n: int, params: PhysicalParams, grid: GridSpec) -> NsaMode:
    if n < 0:
        raise ValueError("mode index must be nonnegative")
    profile = WaveFunction(grid, mode_table(n, params, grid)[n])
    return NsaMode(n, eigenvalue(n, params), profile)


def apply_hamiltonian(psi: WaveFunction, params: PhysicalParams) -> np.ndarray:
    """H psi with the kinetic term applied spectrally."""
    kinetic = apply_momentum(psi.amplitudes, psi.grid, params.hbar, power=2) / (2 * params.mass)
    return kinetic - 1j * params.hbar * params.lam * psi.x**2 * psi.amplitudes


def spectral_residual(mode: NsaMode, params: PhysicalParams) -> float:
    u = mode.profile
    r = apply_hamiltonian(u, params) - mode.eigenvalue * u.amplitudes
    return float(np.linalg.norm(r) / np.linalg.norm(u.amplitudes))


def pairing_matrix(n_max: int, params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    """Bilinear Gram matrix int u_n u_m dx."""
    table = mode_table(n_max, params, grid)
    return table @ table.T * grid.dx


@dataclass(frozen=True)
class Projection:
    coefficients: np.ndarray
    residual: float


def reconstruct(coefficients, params: PhysicalParams, grid: GridSpec) -> np.ndarray:
    c = np.asarray(coefficients)
    return c @ mode_table(len(c) - 1, params, grid)


def bilinear_project(psi: WaveFunction, n_max: int, params: PhysicalParams,
                     limit: float | None = ILL_CONDITIONED) -> Projection:
    """c_n = int u_n psi dx; ``residual`` is the relative reconstruction error."""
    table = mode_table(n_max, params, psi.grid)
    c = table @ psi.amplitudes * psi.grid.dx
    approx = c @ table
    scale = np.linalg.norm(psi.amplitudes)
    if scale == 0:
        raise ZeroNorm("cannot project the zero state")
    residual = float(np.linalg.norm(psi.amplitudes - approx) / scale)
    if limit is not None and residual > limit:
        raise IllConditioned(residual, limit)
    return Projection(c, residual)


def evolve_modes(coefficients, t: float, params: PhysicalParams) -> np.ndarray:
    """Exact evolution of mode amplitudes: c_n exp[-(1+i)/2 omega_n t]."""
    c = np.asarray(coefficients, dtype=complex)
    w = mode_frequencies(len(c) - 1, params)
    return c * np.exp(-(1 + 1j) / 2 * w * t)


# Yoshida weights: three Strang substeps compose to fourth order
_CBRT2 = 2 ** (1 / 3)
YOSHIDA = (1 / (2 - _CBRT2), -_CBRT2 / (2 - _CBRT2), 1 / (2 - _CBRT2))


def evolve_nsa_grid(psi: WaveFunction, t: float, dt: float, params: PhysicalParams,
                    boundary_tol: float | None = BOUNDARY_TOL, order: int = 4) -> WaveFunction:
    """Normalized deterministic oscillator evolution by split-step.

    ``order=2`` is the stochastic engine's Strang kernel with zero noise
    (real-space factor exp(-lam q^2 dt)). ``order=4`` composes three Strang
    substeps with Yoshida weights. The higher order matters for excited
    modes: u_n is an unstable fixed point of the normalized flow, and the
    O(dt^2) splitting error seeds lower modes that then grow like
    exp((omega_n - omega_0) t / 2).
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    n_steps = int(round(t / dt))
    if n_steps and abs(n_steps * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError("t must be a multiple of dt")
    grid = psi.grid
    weights = (1.0,) if order == 2 else YOSHIDA
    kins = [kinetic_half(grid, params, w * dt) for w in weights]
    amps = psi.amplitudes[None, :].astype(complex)
    zero = np.zeros(1)
    for _ in range(n_steps):
        for w, kin in zip(weights, kins):
            amps = split_step(amps, grid.x, kin, zero, w * dt, params.lam)
        n2 = np.sum(np.abs(amps) ** 2) * grid.dx
        if not n2 > MIN_NORM2:
            raise ZeroNorm("state decayed to zero norm")
        amps /= np.sqrt(n2)
    out = normalize(WaveFunction(grid, amps[0]))
    if boundary_tol is not None:
        frac = out.boundary_mass()
        if not frac <= boundary_tol:
            raise GridEscape(frac, boundary_tol, n_steps)
    return out


@dataclass(frozen=True)
class ModeExpansion:
    coefficients: np.ndarray
    x_shift: float
    k_shift: float
    log_prefactor: complex
    residual: float

    def reconstruct(self, params: PhysicalParams, grid: GridSpec) -> np.ndarray:
        """Samples of exp(log_prefactor + i k_shift x) sum c_n u_n(x - x_shift)."""
        table = _sampled_modes(len(self.coefficients) - 1, params, grid.x - self.x_shift)
        return np.exp(self.log_prefactor + 1j * self.k_shift * grid.x) * (self.coefficients @ table)


def shifted_expand(phi: WaveFunction, params: PhysicalParams, n_max: int = SHIFTED_N_MAX,
                   limit: float | None = ILL_CONDITIONED) -> ModeExpansion:
    """Expand around the state's own mean position and wavenumber.

    phi(x) = exp(log_prefactor + i k_shift x) sum_n c_n u_n(x - x_shift)

    The shifts are the first moments of the normalized state and
    ``log_prefactor = log||phi||``. The modes are evaluated at the shifted
    sample points directly, so no interpolation noise enters the pairing.
    High modes reach |u_n| ~ 1e7 by n = 40, which amplifies the round-off
    floor of any simulated state; the default order keeps that harmless.
    """
    obs = observables(phi, params)
    x_shift = obs.q_mean
    k_shift = obs.p_mean / params.hbar
    grid = phi.grid
    log_pref = 0.5 * np.log(phi.norm2)
    stripped = phi.amplitudes * np.exp(-1j * k_shift * grid.x - log_pref)
    table = _sampled_modes(n_max, params, grid.x - x_shift)
    c = table @ stripped * grid.dx
    scale = np.linalg.norm(stripped)
    residual = float(np.linalg.norm(stripped - c @ table) / scale)
    if limit is not None and residual > limit:
        raise IllConditioned(residual, limit)
    return ModeExpansion(c, x_shift, k_shift, complex(log_pref), residual)


def ground_dominance(expansion: ModeExpansion) -> float:
    c = np.abs(expansion.coefficients)
    return float(c[0] / c[1:].max())
