"""Reduced dynamics on the Gaussian manifold.

A Gaussian ``exp[-alpha (x - x_m)^2 + i k_m x + gamma]`` stays Gaussian under
both the linear stochastic equation and the deterministic non-self-adjoint
oscillator flow. The width obeys the Riccati equation

    d alpha/dt = lam - (2 i hbar / m) alpha^2,

with attractor z^2/2. Deterministically (oscillator flow)

    dx_m/dt  = (hbar/m) k_m - (lam/alpha_R) x_m
    dk_m/dt  = 2 lam (alpha_I/alpha_R) x_m
    dgamma/dt = lam (1 - 2 alpha/alpha_R) x_m^2 - (i hbar/2m) k_m^2 - (i hbar/m) alpha.

Under the linear stochastic equation (noise dxi, Ito) the same drift holds
with extra terms, obtained by inserting the ansatz into d log(phi) and
matching powers of x:

    dx_m  += sqrt(lam) / (2 alpha_R) dxi
    dk_m  += -sqrt(lam) (alpha_I/alpha_R) dxi
    dgamma += sqrt(lam) (alpha/alpha_R) x_m dxi + lam alpha / (4 alpha_R^2) dt.

The Ito correction in dgamma is the x^0 remnant of (dx_m)^2.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BlowUp, InsufficientSpan
from .noise import NoisePath
from .records import TrajectoryRecord
from .state import GaussianState, PhysicalParams


def riccati_rhs(alpha, params: PhysicalParams):
    return params.lam - (2j * params.hbar / params.mass) * alpha**2


def riccati_step(alpha, dt: float, params: PhysicalParams):
    """Classical RK4 step; works elementwise on arrays."""
    k1 = riccati_rhs(alpha, params)
    k2 = riccati_rhs(alpha + 0.5 * dt * k1, params)
    k3 = riccati_rhs(alpha + 0.5 * dt * k2, params)
    k4 = riccati_rhs(alpha + dt * k3, params)
    return alpha + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def riccati_solve(alpha0, t_grid, params: PhysicalParams, substeps: int = 1) -> np.ndarray:
    """Width series on ``t_grid``; ``alpha0`` may be an array (one series per entry).

    The returned array has shape ``(len(t_grid),) + shape(alpha0)``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    alpha = np.array(alpha0, dtype=complex)
    if np.any(alpha.real <= 0):
        raise BlowUp("Re(alpha0) must be positive", 0)
    out = np.empty((len(t_grid),) + alpha.shape, dtype=complex)
    out[0] = alpha
    for j in range(1, len(t_grid)):
        h = (t_grid[j] - t_grid[j - 1]) / substeps
        for _ in range(substeps):
            alpha = riccati_step(alpha, h, params)
        if np.any(~(alpha.real > 0)):
            raise BlowUp(f"Re(alpha) left the right half-plane at time index {j}", j)
        out[j] = alpha
    return out


def _drift(y, params: PhysicalParams):
    alpha, x, k, _gamma = y
    lam, hm = params.lam, params.hbar / params.mass
    ar, ai = alpha.real, alpha.imag
    return (
        riccati_rhs(alpha, params),
        hm * k - lam / ar * x,
        2 * lam * ai / ar * x,
        lam * (1 - 2 * alpha / ar) * x**2 - 0.5j * hm * k**2 - 1j * hm * alpha,
    )


def _rk4(y, dt, params):
    def add(a, b, h):
        return tuple(ai + h * bi for ai, bi in zip(a, b))

    k1 = _drift(y, params)
    k2 = _drift(add(y, k1, dt / 2), params)
    k3 = _drift(add(y, k2, dt / 2), params)
    k4 = _drift(add(y, k3, dt), params)
    return tuple(yi + dt / 6 * (a + 2 * b + 2 * c + d) for yi, a, b, c, d in zip(y, k1, k2, k3, k4))


def _unpack(g: GaussianState):
    return (g.alpha, g.x_mean, g.k_mean, g.gamma)


def _pack(y) -> GaussianState:
    alpha, x, k, gamma = y
    if not alpha.real > 0:
        raise BlowUp(f"Re(alpha) = {alpha.real:.3e} is not positive")
    return GaussianState(alpha, x.real, k.real, gamma)


def mean_flow_det(g: GaussianState, dt: float, params: PhysicalParams) -> GaussianState:
    """RK4 step of the coupled width/mean/phase ODEs of the oscillator flow."""
    if not g.alpha.real > 0:
        raise BlowUp("Re(alpha) must be positive")
    y = (g.alpha, complex(g.x_mean), complex(g.k_mean), g.gamma)
    return _pack(_rk4(y, dt, params))


def mean_flow_stoch(g: GaussianState, dxi: float, dt: float, params: PhysicalParams) -> GaussianState:
    """One Ito step of the linear stochastic equation restricted to Gaussians.

    Deterministic part by RK4, then the noise increments evaluated at step
    start. The Ito drift correction of gamma and the Milstein term combine
    into ``lam alpha dxi^2 / (4 alpha_R^2)``, so ``dxi = 0`` reproduces
    :func:`mean_flow_det` exactly.
    """
    det = mean_flow_det(g, dt, params)
    if dxi == 0:
        return det
    sl = np.sqrt(params.lam)
    a, ar, ai = g.alpha, g.alpha.real, g.alpha.imag
    x = g.x_mean
    return GaussianState(
        det.alpha,
        det.x_mean + sl / (2 * ar) * dxi,
        det.k_mean - sl * ai / ar * dxi,
        det.gamma + sl * a / ar * x * dxi + params.lam * a / (4 * ar**2) * dxi**2,
    )


def gaussian_trajectory(g0: GaussianState, path: NoisePath | None, params: PhysicalParams,
                        dt: float | None = None, n_steps: int | None = None,
                        stride: int = 1) -> tuple[np.ndarray, list[GaussianState]]:
    """States at every ``stride`` steps; ``path=None`` runs the deterministic flow."""
    if path is not None:
        dt, n_steps, incs = path.dt, len(path), path.increments
    else:
        incs = np.zeros(int(n_steps))
    g = g0
    times, states = [0.0], [g0]
    for j in range(len(incs)):
        try:
            g = mean_flow_stoch(g, float(incs[j]), dt, params) if path is not None \
                else mean_flow_det(g, dt, params)
        except BlowUp as exc:
            exc.time_index = j + 1
            raise
        if (j + 1) % stride == 0 or j + 1 == len(incs):
            times.append((j + 1) * dt)
            states.append(g)
    return np.array(times), states


def gaussian_record(times, states: list[GaussianState], params: PhysicalParams,
                    manifest: dict | None = None) -> TrajectoryRecord:
    """Trajectory CSV columns for a Gaussian run, from analytic moments."""
    alpha = np.array([s.alpha for s in states])
    x = np.array([s.x_mean for s in states])
    k = np.array([s.k_mean for s in states])
    gamma = np.array([s.gamma for s in states])
    ar = alpha.real
    var_q = 1 / (4 * ar)
    var_k = np.abs(alpha) ** 2 / ar
    norm2 = np.sqrt(np.pi / (2 * ar)) * np.exp(2 * gamma.real)
    cols = {
        "norm2": norm2,
        "q_mean": x,
        "p_mean": params.hbar * k,
        "var_q": var_q,
        "var_p": params.hbar**2 * var_k,
        "gaussian_distance": np.full(len(x), np.nan),
        "alpha_re": alpha.real,
        "alpha_im": alpha.imag,
        "x_mean": x,
        "k_mean": k,
    }
    return TrajectoryRecord(np.asarray(times), cols, manifest=dict(manifest or {}))


@dataclass(frozen=True)
class AsymptoticLaw:
    X: float
    K: float
    omega: float


def brownian_integral(path: NoisePath) -> tuple[np.ndarray, np.ndarray]:
    """(W_t, int_0^t W_s ds) on the path nodes, the integral by trapezoid."""
    W = path.cumulative()
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (W[1:] + W[:-1]) * path.dt)])
    return W, integral


def asymptotic_paths(law: AsymptoticLaw, path: NoisePath, params: PhysicalParams):
    """Leading-order mean processes driven by the physical noise W.

    xbar_t = X + (hbar/m) K t + sqrt(lam) (hbar/m) int W ds + sqrt(hbar/m) W_t
    kbar_t = K + sqrt(lam) W_t
    """
    W, IW = brownian_integral(path)
    t = path.times
    hm = params.hbar / params.mass
    sl = np.sqrt(params.lam)
    xbar = law.X + hm * law.K * t + sl * hm * IW + np.sqrt(hm) * W
    kbar = law.K + sl * W
    return xbar, kbar


def xbar_variance(t, params: PhysicalParams):
    """Var of sqrt(lam)(hbar/m) int_0^t W ds + sqrt(hbar/m) W_t, by Ito isometry."""
    hm = params.hbar / params.mass
    lam = params.lam
    return hm**2 * lam * t**3 / 3 + hm * t + 2 * np.sqrt(lam) * hm**1.5 * t**2 / 2


@dataclass(frozen=True)
class LongTimeFit:
    law: AsymptoticLaw
    times: np.ndarray
    residual_x: np.ndarray
    residual_k: np.ndarray
    residual_norm: float
    envelope_C: float

    @property
    def residual(self) -> np.ndarray:
        return np.maximum(np.abs(self.residual_x), np.abs(self.residual_k))


def fit_long_time(trajectory: TrajectoryRecord, params: PhysicalParams, path: NoisePath | None = None,
                  window: tuple[float, float] | None = None, min_span: float = 10.0) -> LongTimeFit:
    """Estimate X, K by least squares after removing the known Brownian terms.

    ``window`` is a range of omega*t used for the regression (default: the
    last half of the run). Residuals are returned on every recorded time, and
    ``envelope_C`` is the smallest C with residual <= C exp(-omega t / 2)
    over the window.
    """
    path = path if path is not None else trajectory.noise
    if path is None:
        raise ValueError("fit_long_time needs the driving noise path")
    omega = params.omega
    t = trajectory.times
    if omega * t[-1] < min_span:
        raise InsufficientSpan(f"run covers omega*t = {omega * t[-1]:.3g} < {min_span}")
    idx = np.rint(t / path.dt).astype(int)
    W, IW = brownian_integral(path)
    W, IW = W[idx], IW[idx]
    hm = params.hbar / params.mass
    sl = np.sqrt(params.lam)
    x_obs = trajectory["q_mean"]
    k_obs = trajectory["p_mean"] / params.hbar
    yx = x_obs - sl * hm * IW - np.sqrt(hm) * W  # = X + hm K t
    yk = k_obs - sl * W  # = K
    lo, hi = window if window is not None else (0.5 * omega * t[-1], omega * t[-1])
    sel = (omega * t >= lo) & (omega * t <= hi)
    if sel.sum() < 3:
        raise InsufficientSpan("fewer than three samples in the regression window")
    ns = int(sel.sum())
    design = np.zeros((2 * ns, 2))
    design[:ns, 0] = 1.0
    design[:ns, 1] = hm * t[sel]
    design[ns:, 1] = 1.0
    rhs = np.concatenate([yx[sel], yk[sel]])
    (X, K), *_ = np.linalg.lstsq(design, rhs, rcond=None)
    rx = yx - X - hm * K * t
    rk = yk - K
    res = np.maximum(np.abs(rx), np.abs(rk))
    C = float(np.max(res[sel] * np.exp(omega * t[sel] / 2)))
    return LongTimeFit(AsymptoticLaw(float(X), float(K), omega), t, rx, rk,
                       float(np.sqrt(np.mean(rx[sel] ** 2 + rk[sel] ** 2))), C)
