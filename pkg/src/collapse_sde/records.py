"""Trajectory time series and their on-disk form (CSV + JSON manifest)."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .state import WaveFunction

BASE_COLUMNS = ("norm2", "q_mean", "p_mean", "var_q", "var_p", "gaussian_distance")
GAUSSIAN_COLUMNS = ("alpha_re", "alpha_im", "x_mean", "k_mean")


def fmt(value) -> str:
    return "%.17g" % value


def content_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def atomic_write(path, data) -> None:
    """Write-then-rename so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


@dataclass(eq=False)
class TrajectoryRecord:
    times: np.ndarray
    columns: dict[str, np.ndarray]
    final_state: WaveFunction | None = None
    manifest: dict = field(default_factory=dict)
    noise: object | None = None  # NoisePath driving the run, when kept
    failure: str | None = None
    step_q_means: np.ndarray | None = None
    error: Exception | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for name, col in self.columns.items():
            col = np.asarray(col)
            if col.shape != self.times.shape:
                raise ValueError(f"column {name!r} has length {len(col)}, expected {len(self.times)}")
            self.columns[name] = col

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "t":
            return self.times
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.times)

    def column_names(self) -> list[str]:
        names = [c for c in BASE_COLUMNS if c in self.columns]
        names += [c for c in self.columns if c not in names]
        return names

    def to_csv_text(self) -> str:
        names = self.column_names()
        if "gaussian_distance" not in names:
            names.insert(min(len(names), 5), "gaussian_distance")
        lines = [",".join(["t"] + names)]
        for j, t in enumerate(self.times):
            row = [fmt(t)]
            for name in names:
                col = self.columns.get(name)
                row.append("nan" if col is None else fmt(col[j]))
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def write(self, stem) -> tuple[Path, Path]:
        """Write ``stem.csv`` and ``stem.json``; returns both paths."""
        stem = Path(stem)
        csv_path = stem.with_suffix(".csv")
        json_path = stem.with_suffix(".json")
        atomic_write(csv_path, self.to_csv_text())
        manifest = dict(self.manifest)
        if self.failure:
            manifest["failure"] = self.failure
        atomic_write(json_path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return csv_path, json_path

    @classmethod
    def read(cls, stem) -> "TrajectoryRecord":
        stem = Path(stem)
        with open(stem.with_suffix(".csv")) as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        cols = {name: body[:, j] for j, name in enumerate(head) if j > 0}
        manifest = {}
        if stem.with_suffix(".json").exists():
            manifest = json.loads(stem.with_suffix(".json").read_text())
        return cls(body[:, 0], cols, manifest=manifest, failure=manifest.get("failure"))
