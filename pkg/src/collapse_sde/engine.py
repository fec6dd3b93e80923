"""Split-step integration of the linear and nonlinear collapse equations.

One Strang step is: half kinetic propagator in Fourier space, the exact
multiplicative noise factor ``exp(sqrt(lam) q dW - lam q^2 dt)`` in real
space, half kinetic propagator. The exponent carries the full ``-lam q^2 dt``:
half of it is the Ito drift, the other half cancels the Ito correction of
exponentiating ``sqrt(lam) q dW``. For the nonlinear equation ``q`` is
replaced by ``q - <q>`` (frozen at step start) and the result renormalized.

Everything runs on (batch, n_points) arrays so that an ensemble advances in
lockstep; the single-state functions are the batch-of-one case.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import (CorruptIncrement, GridEscape, LengthMismatch, StepTooLarge,
                     ZeroNorm)
from .noise import NoisePath
from .records import TrajectoryRecord, content_hash
from .state import (BOUNDARY_TOL, MIN_NORM2, GridSpec, PhysicalParams, WaveFunction,
                    edge_mask, moments)

MAX_EXPONENT = 0.1
CORRUPT_SIGMAS = 10.0
SCHEMES = ("linear", "nonlinear")


def kinetic_half(grid: GridSpec, params: PhysicalParams, dt: float) -> np.ndarray:
    """exp(-(i/hbar) p^2/(2m) dt/2) on the FFT wavenumbers."""
    return np.exp(-0.25j * params.hbar * grid.k**2 * dt / params.mass)


def check_increments(dxi, dt: float) -> None:
    # written as a negated <= so that NaN counts as corrupt
    bad = ~(np.abs(np.asarray(dxi)) <= CORRUPT_SIGMAS * np.sqrt(dt))
    if np.any(bad):
        raise CorruptIncrement(f"increment exceeds {CORRUPT_SIGMAS:g} sqrt(dt); noise input looks corrupted")


def exponent_size(params: PhysicalParams, x_extent: float, dt: float) -> float:
    return params.lam * x_extent**2 * dt


def _kinetic(amps, kin):
    return np.fft.ifft(np.fft.fft(amps, axis=-1) * kin, axis=-1)


def _noise_factor(xr, dW, dt, lam):
    return np.exp(np.sqrt(lam) * xr * dW[:, None] - lam * xr**2 * dt)


def split_step(amps: np.ndarray, x: np.ndarray, kin: np.ndarray, dW: np.ndarray, dt: float,
               lam: float, center: np.ndarray | None = None) -> np.ndarray:
    """One Strang step on a (batch, n) array; ``center`` switches on the nonlinear form."""
    amps = _kinetic(amps, kin)
    xr = x if center is None else x - center[:, None]
    amps = amps * _noise_factor(xr, dW, dt, lam)
    return _kinetic(amps, kin)


def _density_stats(amps, x):
    dens = np.abs(amps) ** 2
    total = dens.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = (dens * x).sum(axis=-1) / total
    return dens, total, q


def _single(psi: WaveFunction, dxi: float, dt: float, params: PhysicalParams, nonlinear: bool,
            max_exponent, boundary_tol) -> WaveFunction:
    if not dt > 0:
        raise ValueError("dt must be positive")
    check_increments(dxi, dt)
    x = psi.x
    amps = psi.amplitudes[None, :]
    center = None
    if nonlinear:
        dens, total, q = _density_stats(amps, x)
        if not total[0] * psi.grid.dx > MIN_NORM2:
            raise ZeroNorm("state has zero norm")
        center = q
        extent = max(abs(x[0] - q[0]), abs(x[-1] - q[0]))
    else:
        extent = max(abs(x[0]), abs(x[-1]))
    if max_exponent is not None and exponent_size(params, extent, dt) > max_exponent:
        raise StepTooLarge(f"lam*x_max^2*dt = {exponent_size(params, extent, dt):.6g} > {max_exponent}")
    out = split_step(amps, x, kinetic_half(psi.grid, params, dt), np.array([dxi], float), dt,
                     params.lam, center)[0]
    if nonlinear:
        n2 = np.sum(np.abs(out) ** 2) * psi.grid.dx
        if not n2 > MIN_NORM2:
            raise ZeroNorm("state collapsed to zero norm")
        out = out / np.sqrt(n2)
    result = WaveFunction(psi.grid, out)
    if boundary_tol is not None:
        result.check_boundary(boundary_tol)
    return result


def step_linear(phi: WaveFunction, dxi: float, dt: float, params: PhysicalParams,
                max_exponent: float | None = MAX_EXPONENT,
                boundary_tol: float | None = BOUNDARY_TOL) -> WaveFunction:
    """One step of the linear equation; the norm is left as the Radon-Nikodym weight."""
    return _single(phi, dxi, dt, params, False, max_exponent, boundary_tol)


def step_nonlinear(psi: WaveFunction, dW: float, dt: float, params: PhysicalParams,
                   max_exponent: float | None = MAX_EXPONENT,
                   boundary_tol: float | None = BOUNDARY_TOL) -> WaveFunction:
    """One step of the norm-preserving collapse equation, renormalized explicitly."""
    return _single(psi, dW, dt, params, True, max_exponent, boundary_tol)


def girsanov_transform(xi_path: NoisePath, q_means, params: PhysicalParams,
                       rule: str = "left") -> NoisePath:
    """dW = dxi - 2 sqrt(lam) <q> dt.

    ``rule="left"`` takes one mean per increment (the value at step start).
    ``rule="trapezoid"`` takes the n+1 node values and averages neighbours.
    """
    q = np.asarray(q_means, dtype=float)
    n = len(xi_path)
    if rule == "left":
        if len(q) != n:
            raise LengthMismatch(f"{len(q)} means for {n} increments")
        drift = q
    elif rule == "trapezoid":
        if len(q) != n + 1:
            raise LengthMismatch(f"trapezoid rule needs {n + 1} means, got {len(q)}")
        drift = 0.5 * (q[:-1] + q[1:])
    else:
        raise ValueError(f"unknown rule {rule!r}")
    inc = xi_path.increments - 2 * np.sqrt(params.lam) * drift * xi_path.dt
    prov = dict(xi_path.provenance)
    prov.update({"transform": "girsanov", "rule": rule, "source_kind": xi_path.kind,
                 "source_seed": xi_path.seed, "source_index": xi_path.index})
    return NoisePath(xi_path.dt, inc, seed=xi_path.seed, kind="w", index=xi_path.index,
                     provenance=prov)


def _diagnostic_columns(amps, grid, shifts, params, names):
    from . import metrics

    out = {name: np.empty(len(amps)) for name in names}
    for i, row in enumerate(amps):
        psi = WaveFunction(grid.shifted(int(shifts[i])), row)
        n2 = psi.norm2
        if not n2 > MIN_NORM2:
            for name in names:
                out[name][i] = np.nan
            continue
        psi = psi * (1 / np.sqrt(n2))
        if "gaussian_distance" in names:
            out["gaussian_distance"][i] = metrics.gaussian_distance(psi, params).distance
        if "delta_A2" in names:
            out["delta_A2"][i] = metrics.operator_A_variance(psi, params).delta_A2
    return out


def evolve_batch(initial: WaveFunction | Sequence[WaveFunction], paths: Sequence[NoisePath],
                 params: PhysicalParams, scheme: str = "nonlinear", stride: int = 1,
                 diagnostics: Sequence[str] = (), recenter: bool = False,
                 max_exponent: float | None = MAX_EXPONENT,
                 boundary_tol: float | None = BOUNDARY_TOL,
                 track_means: bool = False, keep_noise: bool = True,
                 manifest: dict | None = None) -> list[TrajectoryRecord]:
    """Advance one state per noise path in lockstep.

    A row that fails (grid escape, oversized step, corrupt noise, zero norm)
    is frozen and its record carries ``failure``; the other rows continue.
    ``recenter`` keeps each row's grid following its ``<q>`` by integer-cell
    translations, which is exact on the periodic grid. With ``track_means``
    each record gets ``step_q_means``: ``<q>`` of the normalized state at all
    n+1 time nodes (what the Girsanov transform consumes).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")
    paths = list(paths)
    if not paths:
        return []
    inits = list(initial) if isinstance(initial, (list, tuple)) else [initial] * len(paths)
    if len(inits) != len(paths):
        raise LengthMismatch("need one initial state per path")
    grid = inits[0].grid
    if any(p.grid != grid for p in inits):
        raise ValueError("all initial states must share a grid")
    dt, n_steps = paths[0].dt, len(paths[0])
    if any(p.dt != dt or len(p) != n_steps for p in paths):
        raise LengthMismatch("all paths must share dt and length")
    stride = max(1, int(stride))
    nonlinear = scheme == "nonlinear"
    B, N = len(paths), grid.n_points
    dx = grid.dx
    base_x = grid.x
    k = grid.k
    kin = kinetic_half(grid, params, dt)
    incs = np.stack([p.increments for p in paths], axis=1)  # (n_steps, B)

    amps = np.stack([p.amplitudes for p in inits]).astype(complex)
    if nonlinear:
        n2 = (np.abs(amps) ** 2).sum(axis=1) * dx
        amps /= np.sqrt(n2)[:, None]
    shifts = np.zeros(B, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    failures: list[Exception | None] = [None] * B
    fail_step = np.full(B, -1)
    log_scale = np.zeros(B)
    standin = amps.copy()

    for i in range(B):
        try:
            check_increments(incs[:, i], dt)
        except CorruptIncrement as exc:
            exc.time_index = int(np.argmax(~(np.abs(incs[:, i]) <= CORRUPT_SIGMAS * np.sqrt(dt))))
            failures[i], alive[i], fail_step[i] = exc, False, exc.time_index

    rec_steps = list(range(0, n_steps + 1, stride))
    if rec_steps[-1] != n_steps:
        rec_steps.append(n_steps)
    rec_index = {s: j for j, s in enumerate(rec_steps)}
    base_cols = ("norm2", "q_mean", "p_mean", "var_q", "var_p")
    diag = tuple(d for d in diagnostics if d in ("gaussian_distance", "delta_A2"))
    cols = {name: np.full((len(rec_steps), B), np.nan) for name in base_cols + diag}
    step_means = np.full((n_steps + 1, B), np.nan) if track_means else None
    mask = edge_mask(N)
    last_good = [None] * B

    def fail(i, exc, step):
        exc.time_index = step
        failures[i], alive[i], fail_step[i] = exc, False, step
        amps[i] = standin[i]
        shifts[i] = 0

    def record(step):
        xr = base_x[None, :] + (shifts * dx)[:, None]
        m = moments(amps, xr, dx, k, params.hbar)
        j = rec_index[step]
        live = alive.copy()
        for name in base_cols:
            cols[name][j, live] = m[name][live]
        cols["norm2"][j, live] *= np.exp(2 * log_scale[live])
        if diag:
            d = _diagnostic_columns(amps, grid, shifts, params, diag)
            for name in diag:
                cols[name][j, live] = d[name][live]
        for i in np.flatnonzero(live):
            last_good[i] = (step, amps[i].copy(), int(shifts[i]), log_scale[i])

    for step in range(n_steps + 1):
        xr = base_x[None, :] + (shifts * dx)[:, None]
        dens = np.abs(amps) ** 2
        total = dens.sum(axis=1)
        q = (dens * xr).sum(axis=1) / np.where(total > 0, total, 1.0)
        # boundary and norm checks at every node
        scaled = total * dx * np.exp(2 * log_scale)
        bad_norm = alive & ~(np.isfinite(total) & (scaled > MIN_NORM2))
        for i in np.flatnonzero(bad_norm):
            fail(i, ZeroNorm(f"norm underflow at time index {step}"), step)
        if boundary_tol is not None:
            with np.errstate(invalid="ignore", divide="ignore"):
                frac = dens[:, mask].sum(axis=1) / total
            for i in np.flatnonzero(alive & ~(frac <= boundary_tol)):
                fail(i, GridEscape(frac[i], boundary_tol, step), step)
        if recenter and step < n_steps:
            cells = np.rint((q - (grid.center + shifts * dx)) / dx).astype(np.int64)
            move = alive & (np.abs(cells) >= max(1, N // 32))
            for i in np.flatnonzero(move):
                amps[i] = np.roll(amps[i], -cells[i])
                shifts[i] += cells[i]
            if move.any():
                xr = base_x[None, :] + (shifts * dx)[:, None]
        if track_means:
            step_means[step, alive] = q[alive]
        if step in rec_index:
            record(step)
        if step == n_steps or not alive.any():
            break
        dW = np.where(alive, incs[step], 0.0)
        x_lo, x_hi = xr[:, 0], xr[:, -1]
        if nonlinear:
            center = np.where(alive, q, 0.0)
            extent = np.maximum(np.abs(x_lo - center), np.abs(x_hi - center))
        else:
            center = None
            extent = np.maximum(np.abs(x_lo), np.abs(x_hi))
        if max_exponent is not None:
            size = params.lam * extent**2 * dt
            for i in np.flatnonzero(alive & (size > max_exponent)):
                fail(i, StepTooLarge(f"lam*x_max^2*dt = {size[i]:.6g} > {max_exponent} "
                                     f"at time index {step}"), step)
            if nonlinear:
                center = np.where(alive, center, 0.0)
        amps = split_step(amps, xr, kin, dW, dt, params.lam, center)
        if nonlinear:
            n2 = (np.abs(amps) ** 2).sum(axis=1) * dx
            with np.errstate(divide="ignore", invalid="ignore"):
                amps /= np.sqrt(np.where(n2 > 0, n2, 1.0))[:, None]
        else:
            n2 = (np.abs(amps) ** 2).sum(axis=1) * dx
            big = (n2 > 1e100) | ((n2 < 1e-100) & (n2 > 0))
            if big.any():
                s = np.sqrt(n2[big])
                amps[big] /= s[:, None]
                log_scale[big] += np.log(s)

    records = []
    base_manifest = {
        "scheme": scheme,
        "params": params.to_dict(),
        "grid": grid.to_dict(),
        "dt": dt,
        "n_steps": n_steps,
        "stride": stride,
        "recenter": recenter,
    }
    if manifest:
        base_manifest.update(manifest)
    for i, path in enumerate(paths):
        man = dict(base_manifest)
        man.update({"seed": int(path.seed), "trajectory_index": int(path.index),
                    "noise_kind": path.kind})
        man["config_hash"] = content_hash({k_: v for k_, v in man.items() if k_ != "config_hash"})
        if failures[i] is None:
            n_rec = len(rec_steps)
            final_amps = amps[i] * np.exp(log_scale[i])
            final = WaveFunction(grid.shifted(int(shifts[i])), final_amps)
            fail_msg = None
        else:
            n_rec = sum(1 for s in rec_steps if s <= fail_step[i] and not np.isnan(cols["q_mean"][rec_index[s], i]))
            final = None
            if last_good[i] is not None:
                _, a, s_, ls = last_good[i]
                final = WaveFunction(grid.shifted(s_), a * np.exp(ls))
            fail_msg = f"{type(failures[i]).__name__} at time index {fail_step[i]}: {failures[i]}"
        rec = TrajectoryRecord(
            times=np.array(rec_steps[:n_rec], dtype=float) * dt,
            columns={name: cols[name][:n_rec, i].copy() for name in cols},
            final_state=final,
            manifest=man,
            noise=path if keep_noise else None,
            failure=fail_msg,
            step_q_means=None if step_means is None else step_means[:, i].copy(),
            error=failures[i],
        )
        records.append(rec)
    return records


def evolve(initial: WaveFunction, path: NoisePath, params: PhysicalParams,
           scheme: str = "nonlinear", stride: int = 1, diagnostics: Sequence[str] = (),
           **kwargs) -> TrajectoryRecord:
    """Single trajectory; step errors propagate with ``time_index`` set."""
    rec = evolve_batch(initial, [path], params, scheme=scheme, stride=stride,
                       diagnostics=diagnostics, **kwargs)[0]
    if rec.error is not None:
        raise rec.error
    return rec
