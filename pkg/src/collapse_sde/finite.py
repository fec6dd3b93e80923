"""Finite-dimensional collapse equation with commuting self-adjoint operators.

    d psi = [-(i/hbar) H dt + sqrt(lam) sum_n (L_n - <L_n>) dW_n
             - (lam/2) sum_n (L_n - <L_n>)^2 dt] psi

Integrated by Euler-Maruyama followed by renormalization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonCommuting, ZeroNorm

COMMUTE_TOL = 1e-12
MAX_DIM = 64


@dataclass(frozen=True, eq=False)
class FiniteState:
    vector: np.ndarray
    hamiltonian: np.ndarray
    collapse_ops: tuple

    def __post_init__(self):
        v = np.array(self.vector, dtype=complex)
        d = len(v)
        if d > MAX_DIM:
            raise ValueError(f"dimension {d} exceeds the testbed limit {MAX_DIM}")
        H = np.array(self.hamiltonian, dtype=complex).reshape(d, d)
        ops = tuple(np.array(L, dtype=complex).reshape(d, d) for L in self.collapse_ops)
        for M in (H,) + ops:
            if np.linalg.norm(M - M.conj().T, 2) > COMMUTE_TOL * max(1.0, np.linalg.norm(M, 2)):
                raise ValueError("operators must be Hermitian")
        for i, A in enumerate(ops):
            for B in ops[i + 1:]:
                if np.linalg.norm(A @ B - B @ A, 2) > COMMUTE_TOL:
                    raise NonCommuting("collapse operators do not commute")
        for arr in (v, H) + ops:
            arr.setflags(write=False)
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "collapse_ops", ops)

    @property
    def dim(self) -> int:
        return len(self.vector)

    def with_vector(self, v) -> "FiniteState":
        return FiniteState(v, self.hamiltonian, self.collapse_ops)

    def expectation(self, L) -> float:
        v = self.vector
        return float(np.vdot(v, L @ v).real / np.vdot(v, v).real)

    def variance(self, L) -> float:
        """||(L - <L>) psi||^2 for a unit vector."""
        v = self.vector / np.linalg.norm(self.vector)
        r = L @ v - self.expectation(L) * v
        return float(np.vdot(r, r).real)


def _em_batch(vecs, H, ops, dW, dt, lam, hbar):
    """One Euler-Maruyama + renormalize step for a (batch, dim) array.

    ``dW`` has shape (batch, n_ops).
    """
    out = vecs - 1j / hbar * dt * vecs @ H.T
    sl = np.sqrt(lam)
    for n, L in enumerate(ops):
        Lv = vecs @ L.T
        mean = np.einsum("bi,bi->b", vecs.conj(), Lv).real / np.einsum("bi,bi->b", vecs.conj(), vecs).real
        shifted = Lv - mean[:, None] * vecs
        shifted2 = shifted @ L.T - mean[:, None] * shifted
        out = out + sl * dW[:, n, None] * shifted - 0.5 * lam * dt * shifted2
    norms = np.linalg.norm(out, axis=1)
    if np.any(~(norms > 0)):
        raise ZeroNorm("finite-dimensional state vanished")
    return out / norms[:, None]


def step_finite(state: FiniteState, dW_vec, dt: float, lam: float, hbar: float = 1.0) -> FiniteState:
    dW = np.atleast_1d(np.asarray(dW_vec, dtype=float))
    if len(dW) != len(state.collapse_ops):
        raise ValueError("need one increment per collapse operator")
    out = _em_batch(state.vector[None, :], state.hamiltonian, state.collapse_ops,
                    dW[None, :], dt, lam, hbar)
    return state.with_vector(out[0])


def evolve_finite_batch(vectors, hamiltonian, collapse_ops, dt: float, n_steps: int, lam: float,
                        rng: np.random.Generator | None = None, hbar: float = 1.0,
                        record_every: int = 0, increments: np.ndarray | None = None):
    """Run many independent trajectories from the given initial vectors.

    Noise comes either from ``rng`` or from explicit ``increments`` of shape
    (batch, n_steps, n_ops). Returns the final (batch, dim) array and, if
    ``record_every`` > 0, the list of snapshots taken every that many steps
    (including t=0).
    """
    vecs = np.array(vectors, dtype=complex)
    vecs /= np.linalg.norm(vecs, axis=1)[:, None]
    H = np.asarray(hamiltonian, dtype=complex)
    ops = [np.asarray(L, dtype=complex) for L in collapse_ops]
    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (len(vecs), n_steps, len(ops)):
            raise ValueError(f"increments must have shape {(len(vecs), n_steps, len(ops))}")
    elif rng is None:
        raise ValueError("need either rng or increments")
    snaps = [vecs.copy()] if record_every else []
    for j in range(n_steps):
        if increments is None:
            dW = rng.normal(0.0, np.sqrt(dt), size=(len(vecs), len(ops)))
        else:
            dW = increments[:, j, :]
        vecs = _em_batch(vecs, H, ops, dW, dt, lam, hbar)
        if record_every and (j + 1) % record_every == 0:
            snaps.append(vecs.copy())
    return vecs, snaps


def populations(vecs: np.ndarray, collapse_op) -> np.ndarray:
    """|c_n|^2 in the eigenbasis of a collapse operator, for (batch, dim) vectors."""
    _, basis = np.linalg.eigh(np.asarray(collapse_op, dtype=complex))
    return np.abs(vecs @ basis.conj()) ** 2
