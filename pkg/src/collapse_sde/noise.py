"""Seeded Wiener increments.

Each trajectory draws from a Philox stream keyed by (run seed, trajectory
index), so paths do not depend on generation order or worker layout.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LengthMismatch

KINDS = ("xi", "w")  # xi: linear-equation noise (measure Q); w: physical noise (measure P)


def trajectory_rng(seed: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, index: int) -> int:
    """64-bit per-trajectory seed, a pure function of (seed, index)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class NoisePath:
    dt: float
    increments: np.ndarray
    seed: int = 0
    kind: str = "xi"
    index: int = 0
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        inc = np.array(self.increments, dtype=float)
        if inc.ndim != 1:
            raise ValueError("increments must be one-dimensional")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @classmethod
    def generate(cls, n_steps: int, dt: float, seed: int, index: int = 0, kind: str = "xi") -> "NoisePath":
        rng = trajectory_rng(seed, index)
        inc = rng.normal(0.0, np.sqrt(dt), size=int(n_steps))
        return cls(dt, inc, seed=seed, kind=kind, index=index)

    @classmethod
    def zeros(cls, n_steps: int, dt: float, kind: str = "xi") -> "NoisePath":
        return cls(dt, np.zeros(int(n_steps)), kind=kind)

    def __len__(self) -> int:
        return len(self.increments)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self) + 1)

    def cumulative(self) -> np.ndarray:
        """W_t at the n+1 grid times, starting from W_0 = 0."""
        return np.concatenate([[0.0], np.cumsum(self.increments)])

    def coarsen(self, factor: int) -> "NoisePath":
        """Sum consecutive blocks of increments (same Brownian path, larger dt)."""
        n = len(self) // factor
        if n * factor != len(self):
            raise LengthMismatch(f"length {len(self)} not divisible by {factor}")
        inc = self.increments.reshape(n, factor).sum(axis=1)
        return NoisePath(self.dt * factor, inc, seed=self.seed, kind=self.kind,
                         index=self.index, provenance=dict(self.provenance))

    def truncated(self, n_steps: int) -> "NoisePath":
        return NoisePath(self.dt, self.increments[:n_steps], seed=self.seed, kind=self.kind,
                         index=self.index, provenance=dict(self.provenance))

    # file format: magic, seed (u64), dt (f64), kind (u8), length (u64), then raw doubles
    _MAGIC = b"NPTH"
    _HEADER = struct.Struct("<4sQdBQ")

    def save(self, path) -> None:
        head = self._HEADER.pack(self._MAGIC, int(self.seed) & (2**64 - 1), self.dt,
                                 KINDS.index(self.kind), len(self))
        Path(path).write_bytes(head + self.increments.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "NoisePath":
        data = Path(path).read_bytes()
        magic, seed, dt, kind, length = cls._HEADER.unpack_from(data)
        if magic != cls._MAGIC:
            raise ValueError(f"{path}: not a noise-path file")
        inc = np.frombuffer(data[cls._HEADER.size:], dtype="<f8")
        if len(inc) != length:
            raise LengthMismatch(f"{path}: header says {length} increments, found {len(inc)}")
        return cls(dt, inc.copy(), seed=seed, kind=KINDS[kind])
