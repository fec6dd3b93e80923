"""Wave functions on a uniform periodic grid, Gaussian states and observables.

Position moments use real-space quadrature; momentum moments use the
discrete Fourier transform of the same samples. The grid is periodic, so
every state carries a boundary-mass monitor that turns silent wrap-around
into a :class:`~collapse_sde.errors.GridEscape`.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GridEscape, NonNormalizable, ZeroNorm

BOUNDARY_TOL = 1e-8
BOUNDARY_FRACTION = 0.05
MIN_NORM2 = 1e-30


@dataclass(frozen=True)
class PhysicalParams:
    """Model constants. ``lam`` is the collapse strength lambda.

    ``lambda0`` and ``mass0`` are the reference pair in lambda = lambda0 * m / m0;
    they default to ``lam`` and ``mass``.
    """

    hbar: float = 1.0
    mass: float = 1.0
    lam: float = 1.0
    lambda0: float | None = None
    mass0: float | None = None
    unit_system: str = "natural"

    def __post_init__(self):
        if self.lambda0 is None:
            object.__setattr__(self, "lambda0", self.lam)
        if self.mass0 is None:
            object.__setattr__(self, "mass0", self.mass)
        for name in ("hbar", "mass", "mass0"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive, got {value!r}")
        # lam = 0 is the free Schroedinger limit; quantities of the attractor
        # (z, omega, mode tables) degenerate there
        for name in ("lam", "lambda0"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be nonnegative, got {value!r}")
        if self.unit_system not in ("natural", "SI"):
            raise ValueError(f"unknown unit system {self.unit_system!r}")

    @classmethod
    def natural(cls, lam: float = 1.0, mass: float = 1.0) -> "PhysicalParams":
        return cls(hbar=1.0, mass=mass, lam=lam)

    @classmethod
    def scaled(cls, mass: float, lambda0: float = 1.0, mass0: float = 1.0,
               hbar: float = 1.0, unit_system: str = "natural") -> "PhysicalParams":
        """Collapse strength proportional to mass: lam = lambda0 * mass / mass0."""
        return cls(hbar=hbar, mass=mass, lam=lambda0 * mass / mass0,
                   lambda0=lambda0, mass0=mass0, unit_system=unit_system)

    @property
    def z2(self) -> complex:
        return (1 - 1j) * np.sqrt(self.lam * self.mass / self.hbar)

    @property
    def z(self) -> complex:
        # principal branch, arg(z) = -pi/8
        return complex(np.sqrt(complex(self.z2)))

    @property
    def omega(self) -> float:
        return 2.0 * np.sqrt(self.hbar * self.lam / self.mass)

    @property
    def alpha_star(self) -> complex:
        """Fixed point z^2/2 of the width flow."""
        return complex(self.z2 / 2)

    @property
    def asymptotic_var_q(self) -> float:
        if self.lam == 0:
            return float("inf")
        return 0.5 * np.sqrt(self.hbar / (self.lam * self.mass))

    def to_dict(self) -> dict:
        return {"hbar": self.hbar, "mass": self.mass, "lambda": self.lam,
                "lambda0": self.lambda0, "mass0": self.mass0,
                "unit_system": self.unit_system}


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        n = int(self.n_points)
        if n < 16 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 16, got {self.n_points}")

    @classmethod
    def centered(cls, half_width: float, n_points: int, center: float = 0.0) -> "GridSpec":
        return cls(center - half_width, center + half_width, n_points)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    @property
    def center(self) -> float:
        return 0.5 * (self.x_min + self.x_max)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def shifted(self, cells: int) -> "GridSpec":
        """Same grid translated by an integer number of cells."""
        offset = cells * self.dx
        return GridSpec(self.x_min + offset, self.x_max + offset, self.n_points)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": self.n_points}


def edge_mask(n_points: int, fraction: float = BOUNDARY_FRACTION) -> np.ndarray:
    """Nodes within ``fraction`` of the grid length from either edge."""
    width = max(1, int(np.ceil(fraction * n_points)))
    mask = np.zeros(n_points, dtype=bool)
    mask[:width] = True
    mask[-width:] = True
    return mask


def boundary_fraction(amplitudes: np.ndarray) -> np.ndarray:
    """Share of |psi|^2 in the outer band; works row-wise on 2-D input."""
    dens = np.abs(amplitudes) ** 2
    mask = edge_mask(dens.shape[-1])
    total = dens.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return dens[..., mask].sum(axis=-1) / total


@dataclass(frozen=True, eq=False)
class WaveFunction:
    grid: GridSpec
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} amplitudes, got shape {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    @cached_property
    def norm2(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.dx)

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.norm2))

    def boundary_mass(self) -> float:
        return float(boundary_fraction(self.amplitudes))

    def check_boundary(self, tol: float = BOUNDARY_TOL) -> "WaveFunction":
        frac = self.boundary_mass()
        if not frac <= tol:
            raise GridEscape(frac, tol)
        return self

    def escaped(self, tol: float = BOUNDARY_TOL) -> bool:
        return not self.boundary_mass() <= tol

    def with_amplitudes(self, amplitudes) -> "WaveFunction":
        return WaveFunction(self.grid, amplitudes)

    def __mul__(self, factor):
        return self.with_amplitudes(self.amplitudes * factor)

    __rmul__ = __mul__

    def inner(self, other: "WaveFunction") -> complex:
        """Hermitian inner product <self|other>."""
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)

    def distance(self, other: "WaveFunction") -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes - other.amplitudes) ** 2) * self.grid.dx))

    # -- persistence -------------------------------------------------------
    _MAGIC = b"WFN1"

    def save(self, path, unit_system: str = "natural") -> None:
        """Binary columnar file: header then x, Re psi, Im psi as little-endian doubles."""
        header = json.dumps({"grid": self.grid.to_dict(), "unit_system": unit_system}).encode()
        cols = np.stack([self.x, self.amplitudes.real, self.amplitudes.imag]).astype("<f8")
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(cols.tobytes())

    @classmethod
    def load(cls, path) -> "WaveFunction":
        data = Path(path).read_bytes()
        if data[:4] != cls._MAGIC:
            raise ValueError(f"{path}: not a wave-function file")
        (hlen,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8:8 + hlen])
        grid = GridSpec(**header["grid"])
        cols = np.frombuffer(data[8 + hlen:], dtype="<f8").reshape(3, grid.n_points)
        return cls(grid, cols[1] + 1j * cols[2])

    def to_csv(self, path) -> None:
        cols = np.column_stack([self.x, self.amplitudes.real, self.amplitudes.imag])
        np.savetxt(path, cols, delimiter=",", header="x,re_psi,im_psi", comments="", fmt="%.17g")


@dataclass(frozen=True)
class GaussianState:
    """exp[-alpha (x - x_mean)^2 + i k_mean x + gamma]."""

    alpha: complex
    x_mean: float = 0.0
    k_mean: float = 0.0
    gamma: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", complex(self.alpha))
        object.__setattr__(self, "gamma", complex(self.gamma))
        object.__setattr__(self, "x_mean", float(self.x_mean))
        object.__setattr__(self, "k_mean", float(self.k_mean))

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return np.exp(-self.alpha * (x - self.x_mean) ** 2 + 1j * self.k_mean * x + self.gamma)

    @property
    def norm2(self) -> float:
        """Analytic squared norm on the real line."""
        a = self.alpha.real
        return float(np.sqrt(np.pi / (2 * a)) * np.exp(2 * self.gamma.real))


def render_gaussian(g: GaussianState, grid: GridSpec, boundary_tol: float | None = BOUNDARY_TOL) -> WaveFunction:
    if not g.alpha.real > 0:
        raise NonNormalizable(f"Re(alpha) must be positive, got {g.alpha}")
    psi = WaveFunction(grid, g.evaluate(grid.x))
    if boundary_tol is not None:
        psi.check_boundary(boundary_tol)
    return psi


@dataclass(frozen=True)
class Observables:
    norm2: float
    q_mean: float
    q2_mean: float
    p_mean: float
    p2_mean: float
    var_q: float
    var_p: float

    @property
    def uncertainty_product(self) -> float:
        return self.var_q * self.var_p


def moments(amplitudes: np.ndarray, x: np.ndarray, dx: float, k: np.ndarray, hbar: float = 1.0) -> dict:
    """Row-wise moments of (batched) grid amplitudes.

    ``x`` broadcasts against ``amplitudes``; returns arrays keyed like
    :class:`Observables`.
    """
    dens = np.abs(amplitudes) ** 2
    total = dens.sum(axis=-1)
    norm2 = total * dx
    q_mean = (dens * x).sum(axis=-1) / total
    q2_mean = (dens * x**2).sum(axis=-1) / total
    var_q = ((dens * (x - q_mean[..., None]) ** 2).sum(axis=-1) / total)
    spec = np.abs(np.fft.fft(amplitudes, axis=-1)) ** 2
    stotal = spec.sum(axis=-1)
    k_mean = (spec * k).sum(axis=-1) / stotal
    k2_mean = (spec * k**2).sum(axis=-1) / stotal
    var_k = (spec * (k - k_mean[..., None]) ** 2).sum(axis=-1) / stotal
    return {
        "norm2": norm2,
        "q_mean": q_mean,
        "q2_mean": q2_mean,
        "p_mean": hbar * k_mean,
        "p2_mean": hbar**2 * k2_mean,
        "var_q": var_q,
        "var_p": hbar**2 * var_k,
    }


def observables(psi: WaveFunction, params: PhysicalParams) -> Observables:
    if not psi.norm2 > MIN_NORM2:
        raise ZeroNorm(f"squared norm {psi.norm2:.3e} underflows")
    m = moments(psi.amplitudes, psi.x, psi.grid.dx, psi.grid.k, params.hbar)
    return Observables(**{key: float(val) for key, val in m.items()})


def normalize(psi: WaveFunction) -> WaveFunction:
    n2 = psi.norm2
    if not n2 > MIN_NORM2:
        raise ZeroNorm(f"squared norm {n2:.3e} underflows")
    return psi.with_amplitudes(psi.amplitudes / np.sqrt(n2))


def spectral_shift(amplitudes: np.ndarray, grid: GridSpec, shift: float) -> np.ndarray:
    """Samples of psi(x + shift) by Fourier interpolation."""
    return np.fft.ifft(np.fft.fft(amplitudes) * np.exp(1j * grid.k * shift))


def apply_momentum(amplitudes: np.ndarray, grid: GridSpec, hbar: float = 1.0, power: int = 1) -> np.ndarray:
    """p^power psi with p = -i hbar d/dx applied spectrally."""
    return np.fft.ifft((hbar * grid.k) ** power * np.fft.fft(amplitudes))
