"""Run configuration, seeded ensembles and persistence.

A run is described by a flat key/value document with dotted sections::

    scheme = "nonlinear"
    dt = 0.0008
    t_end = 7.5
    params.lambda = 1.0
    grid.half_width = 10.0
    init.kind = "nsa_mode"
    init.n = 1

Trajectories are processed in fixed-size chunks. Chunk boundaries depend
only on the trajectory count, and each trajectory's noise only on
``(seed, index)``, so the summary is byte-identical for any worker count.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from . import finite, gaussian_flow, metrics, nsa
from .engine import MAX_EXPONENT, evolve_batch
from .errors import CollapseError, ConfigInvalid
from .noise import NoisePath, trajectory_rng
from .records import TrajectoryRecord, atomic_write, content_hash
from .state import (BOUNDARY_TOL, GaussianState, GridSpec, PhysicalParams, WaveFunction,
                    normalize, render_gaussian)

SCHEMES = ("linear", "nonlinear", "gaussian_flow", "nsa_grid", "finite_dim")
INIT_KINDS = ("gaussian", "nsa_mode", "mode_mixture", "two_bump", "file", "finite")
DIAGNOSTICS = ("gaussian_distance", "delta_A2")
CHUNK = 32
OUT_ENV = "COLLAPSE_SDE_OUT"


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


@dataclass(frozen=True)
class InitialState:
    """Tagged description of the starting state; unused fields are ignored."""

    kind: str = "gaussian"
    alpha_re: float = 0.5
    alpha_im: float = 0.0
    x: float = 0.0
    k: float = 0.0
    n: int = 0
    modes: tuple = (0,)
    weights: tuple = (1.0,)
    phases: tuple = ()
    x1: float = -5.0
    x2: float = 5.0
    w1: float = 0.5
    path: str = ""
    spectrum: tuple = (0.0, 1.0)
    amplitudes: tuple = (1.0, 1.0)

    def active_fields(self) -> dict:
        keys = {
            "gaussian": ("alpha_re", "alpha_im", "x", "k"),
            "nsa_mode": ("n",),
            "mode_mixture": ("modes", "weights", "phases"),
            "two_bump": ("x1", "x2", "w1", "alpha_re"),
            "file": ("path",),
            "finite": ("spectrum", "amplitudes"),
        }[self.kind]
        out = {"kind": self.kind}
        for key in keys:
            value = getattr(self, key)
            out[key] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True)
class RunConfig:
    params: PhysicalParams = field(default_factory=PhysicalParams)
    grid: GridSpec = field(default_factory=lambda: GridSpec(-10.0, 10.0, 256))
    scheme: str = "nonlinear"
    dt: float = 5e-4
    t_end: float = 1.0
    record_stride: int = 100
    n_trajectories: int = 1
    seed: int = 0
    initial_state: InitialState = field(default_factory=InitialState)
    diagnostics: tuple = ()
    noise: bool = True
    recenter: bool = False
    max_exponent: float | None = MAX_EXPONENT
    boundary_tol: float | None = BOUNDARY_TOL
    regions: tuple = ()
    collapse_at: str = "collapse"

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate(self) -> "RunConfig":
        def bad(name, msg):
            raise ConfigInvalid(f"{name}: {msg}")

        if self.scheme not in SCHEMES:
            bad("scheme", f"must be one of {', '.join(SCHEMES)}; got {self.scheme!r}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            bad("dt", f"must be positive, got {self.dt!r}")
        if not self.t_end >= self.dt:
            bad("t_end", f"must be at least dt ({self.dt!r}), got {self.t_end!r}")
        if abs(self.n_steps * self.dt - self.t_end) > 1e-9 * self.t_end:
            bad("t_end", f"{self.t_end!r} is not a whole number of steps of {self.dt!r}")
        if self.record_stride < 1:
            bad("record_stride", "must be at least 1")
        if self.n_trajectories < 1:
            bad("n_trajectories", "must be at least 1")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must fit in an unsigned 64-bit integer")
        for d in self.diagnostics:
            if d not in DIAGNOSTICS:
                bad("diagnostics", f"unknown diagnostic {d!r}; choose from {', '.join(DIAGNOSTICS)}")
        if self.initial_state.kind not in INIT_KINDS:
            bad("init.kind", f"must be one of {', '.join(INIT_KINDS)}; got {self.initial_state.kind!r}")
        if (self.scheme == "finite_dim") != (self.initial_state.kind == "finite"):
            bad("init.kind", "the finite_dim scheme goes with init.kind = \"finite\" and only with it")
        if self.scheme == "gaussian_flow" and self.initial_state.kind != "gaussian":
            bad("init.kind", "the gaussian_flow scheme needs a gaussian initial state")
        if self.collapse_at not in ("collapse", "final"):
            bad("collapse_at", "must be 'collapse' or 'final'")
        for r in self.regions:
            if len(r) != 2 or not r[0] < r[1]:
                bad("regions", f"each region must be [lo, hi] with lo < hi; got {r!r}")
        if self.scheme != "finite_dim":
            try:
                build_initial(self)
            except ConfigInvalid:
                raise
            except (CollapseError, ValueError) as exc:
                bad("init", f"initial state is not usable on the grid: {exc}")
        else:
            init = self.initial_state
            if len(init.spectrum) != len(init.amplitudes):
                bad("init.amplitudes", "needs one amplitude per spectrum entry")
            if len(set(init.spectrum)) != len(init.spectrum):
                bad("init.spectrum", "must be nondegenerate")
        return self

    # -- flat key/value form -------------------------------------------------
    def to_flat(self) -> dict[str, Any]:
        p, g = self.params, self.grid
        flat: dict[str, Any] = {
            "scheme": self.scheme,
            "dt": float(self.dt),
            "t_end": float(self.t_end),
            "record_stride": self.record_stride,
            "n_trajectories": self.n_trajectories,
            "seed": self.seed,
            "diagnostics": list(self.diagnostics),
            "noise": self.noise,
            "recenter": self.recenter,
            "max_exponent": "none" if self.max_exponent is None else float(self.max_exponent),
            "boundary_tol": "none" if self.boundary_tol is None else float(self.boundary_tol),
            "collapse_at": self.collapse_at,
            "regions": [[float(v) for v in r] for r in self.regions],
            "params.hbar": float(p.hbar),
            "params.mass": float(p.mass),
            "params.lambda": float(p.lam),
            "params.lambda0": float(p.lambda0),
            "params.mass0": float(p.mass0),
            "params.unit_system": p.unit_system,
            "grid.x_min": float(g.x_min),
            "grid.x_max": float(g.x_max),
            "grid.n_points": int(g.n_points),
        }
        for key, value in self.initial_state.active_fields().items():
            if key == "modes":
                value = [int(v) for v in value]
            elif key == "n":
                value = int(value)
            elif isinstance(value, list):
                value = [float(v) for v in value]
            elif key not in ("kind", "path"):
                value = float(value)
            flat[f"init.{key}"] = value
        return flat

    def config_hash(self) -> str:
        return content_hash(self.to_flat())


@dataclass
class EnsembleSummary:
    config_hash: str
    config: dict
    n_trajectories: int
    n_failed: int
    failures: list
    times: list
    mean: dict
    variance: dict
    final_median: dict
    collapse: dict | None = None

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "config": self.config,
            "n_trajectories": self.n_trajectories,
            "n_failed": self.n_failed,
            "failures": self.failures,
            "times": self.times,
            "mean": self.mean,
            "variance": self.variance,
            "final_median": self.final_median,
            "collapse": self.collapse,
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# -- parsing -------------------------------------------------------------------

def _flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def _parse_value(text: str):
    """A TOML value, falling back to a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = _parse_value(value.strip())
    return out


_TOP_KEYS = {f.name for f in fields(RunConfig)} - {"params", "grid", "initial_state"}
_INIT_KEYS = {f.name for f in fields(InitialState)}
_PARAM_KEYS = {"hbar": "hbar", "mass": "mass", "lambda": "lam", "lam": "lam",
               "lambda0": "lambda0", "mass0": "mass0", "unit_system": "unit_system"}
_GRID_KEYS = {"x_min", "x_max", "n_points", "half_width", "center"}


def _none_or_float(name, value):
    if value is None or (isinstance(value, str) and value.lower() == "none"):
        return None
    return _as(float, name, value)


def _as(kind, name, value):
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigInvalid(f"{name}: cannot read {value!r} as {kind.__name__}") from None


def config_from_flat(flat: dict, base: RunConfig | None = None) -> RunConfig:
    """Build a config from dotted keys, starting from ``base`` (or defaults)."""
    base = base or RunConfig()
    top: dict[str, Any] = {}
    pkw = {"hbar": base.params.hbar, "mass": base.params.mass, "lam": base.params.lam,
           "lambda0": base.params.lambda0, "mass0": base.params.mass0,
           "unit_system": base.params.unit_system}
    ref_changed = {"lambda0": False, "mass0": False}
    gkw: dict[str, Any] = {}
    ikw: dict[str, Any] = {}
    for key, value in flat.items():
        section, _, name = key.partition(".")
        if not name:
            if key not in _TOP_KEYS:
                raise ConfigInvalid(f"{key}: unknown key")
            top[key] = value
        elif section == "params":
            if name not in _PARAM_KEYS:
                raise ConfigInvalid(f"{key}: unknown key")
            attr = _PARAM_KEYS[name]
            pkw[attr] = value if attr == "unit_system" else _as(float, key, value)
            if attr in ref_changed:
                ref_changed[attr] = True
        elif section == "grid":
            if name not in _GRID_KEYS:
                raise ConfigInvalid(f"{key}: unknown key")
            gkw[name] = value
        elif section == "init":
            if name not in _INIT_KEYS:
                raise ConfigInvalid(f"{key}: unknown key")
            ikw[name] = value
        else:
            raise ConfigInvalid(f"{key}: unknown section {section!r}")
    # an explicit lambda/mass without an explicit reference pair keeps them tied
    if not ref_changed["lambda0"] and base.params.lambda0 == base.params.lam:
        pkw["lambda0"] = pkw["lam"]
    if not ref_changed["mass0"] and base.params.mass0 == base.params.mass:
        pkw["mass0"] = pkw["mass"]
    try:
        params = PhysicalParams(**pkw)
    except ValueError as exc:
        raise ConfigInvalid(f"params: {exc}") from None

    g = base.grid
    if "half_width" in gkw or "center" in gkw:
        if "x_min" in gkw or "x_max" in gkw:
            raise ConfigInvalid("grid: give either x_min/x_max or half_width/center")
        hw = _as(float, "grid.half_width", gkw.get("half_width", 0.5 * g.length))
        c = _as(float, "grid.center", gkw.get("center", g.center))
        x_min, x_max = c - hw, c + hw
    else:
        x_min = _as(float, "grid.x_min", gkw.get("x_min", g.x_min))
        x_max = _as(float, "grid.x_max", gkw.get("x_max", g.x_max))
    n_points = _as(int, "grid.n_points", gkw.get("n_points", g.n_points))
    try:
        grid = GridSpec(x_min, x_max, n_points)
    except ValueError as exc:
        raise ConfigInvalid(f"grid: {exc}") from None

    init = base.initial_state
    if ikw:
        if "kind" in ikw and ikw["kind"] != init.kind:
            init = InitialState(kind=str(ikw["kind"]))
        conv = {}
        for name, value in ikw.items():
            default = getattr(InitialState, name, None)
            key = f"init.{name}"
            if name in ("kind", "path"):
                conv[name] = str(value)
            elif isinstance(default, tuple) or name in ("modes", "weights", "phases", "spectrum", "amplitudes"):
                seq = value if isinstance(value, (list, tuple)) else [value]
                kind = int if name == "modes" else float
                conv[name] = tuple(_as(kind, key, v) for v in seq)
            elif name == "n":
                conv[name] = _as(int, key, value)
            else:
                conv[name] = _as(float, key, value)
        init = replace(init, **conv)

    kw: dict[str, Any] = {}
    for key, value in top.items():
        if key in ("dt", "t_end"):
            kw[key] = _as(float, key, value)
        elif key in ("record_stride", "n_trajectories", "seed"):
            kw[key] = _as(int, key, value)
        elif key in ("noise", "recenter"):
            kw[key] = _as(bool, key, value)
        elif key in ("max_exponent", "boundary_tol"):
            kw[key] = _none_or_float(key, value)
        elif key == "diagnostics":
            seq = value if isinstance(value, (list, tuple)) else [value]
            kw[key] = tuple(str(v) for v in seq if str(v))
        elif key == "regions":
            try:
                kw[key] = tuple(tuple(float(x) for x in r) for r in value)
            except (TypeError, ValueError):
                raise ConfigInvalid(f"regions: expected a list of [lo, hi] pairs, got {value!r}") from None
        else:
            kw[key] = str(value)
    return replace(base, params=params, grid=grid, initial_state=init, **kw)


def load_config(path=None, overrides: dict | None = None, base: RunConfig | None = None) -> RunConfig:
    flat: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                flat.update(_flatten(tomli.load(fh)))
        except OSError as exc:
            raise ConfigInvalid(f"config: cannot read {path}: {exc.strerror}") from None
        except tomli.TOMLDecodeError as exc:
            raise ConfigInvalid(f"config: {path}: {exc}") from None
    flat.update(overrides or {})
    return config_from_flat(flat, base)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot write {value!r}")


def dump_config(config: RunConfig) -> str:
    """Flat dotted-key document; ``load_config`` of it gives the same config."""
    flat = config.to_flat()
    lines = []
    last = None
    for key in sorted(flat, key=lambda k: (k.count("."), k.split(".")[0], k)):
        section = key.split(".")[0] if "." in key else ""
        if last is not None and section != last:
            lines.append("")
        last = section
        lines.append(f"{key} = {_toml_value(flat[key])}")
    return "\n".join(lines) + "\n"


# -- initial states ------------------------------------------------------------

def _unit_bump(grid: GridSpec, center: float, alpha: float) -> np.ndarray:
    b = np.exp(-alpha * (grid.x - center) ** 2)
    return b / np.sqrt(np.sum(b**2) * grid.dx)


def build_initial(config: RunConfig) -> WaveFunction:
    """Render the configured initial state, normalized, on the configured grid."""
    init, grid, params = config.initial_state, config.grid, config.params
    tol = config.boundary_tol
    if init.kind == "gaussian":
        g = GaussianState(complex(init.alpha_re, init.alpha_im), init.x, init.k)
        psi = render_gaussian(g, grid, tol)
    elif init.kind == "nsa_mode":
        if init.n < 0:
            raise ConfigInvalid("init.n: mode index must be nonnegative")
        psi = nsa.eigenmode(init.n, params, grid).profile
    elif init.kind == "mode_mixture":
        modes = list(init.modes)
        if not modes or len(init.weights) != len(modes):
            raise ConfigInvalid("init.weights: needs one weight per entry of init.modes")
        if init.phases and len(init.phases) != len(modes):
            raise ConfigInvalid("init.phases: needs one phase per entry of init.modes")
        if min(modes) < 0:
            raise ConfigInvalid("init.modes: mode indices must be nonnegative")
        table = nsa.mode_table(max(modes), params, grid)
        phases = init.phases or (0.0,) * len(modes)
        amps = sum(w * np.exp(1j * ph) * table[n] for n, w, ph in zip(modes, init.weights, phases))
        psi = WaveFunction(grid, amps)
    elif init.kind == "two_bump":
        if not 0 <= init.w1 <= 1:
            raise ConfigInvalid("init.w1: weight must lie in [0, 1]")
        if not init.alpha_re > 0:
            raise ConfigInvalid("init.alpha_re: bump width parameter must be positive")
        amps = (np.sqrt(init.w1) * _unit_bump(grid, init.x1, init.alpha_re)
                + np.sqrt(1 - init.w1) * _unit_bump(grid, init.x2, init.alpha_re))
        psi = WaveFunction(grid, amps)
    elif init.kind == "file":
        try:
            psi = WaveFunction.load(init.path)
        except (OSError, ValueError) as exc:
            raise ConfigInvalid(f"init.path: {exc}") from None
        if psi.grid != grid:
            raise ConfigInvalid(f"init.path: stored grid {psi.grid} differs from the configured grid {grid}")
    else:
        raise ConfigInvalid(f"init.kind: {init.kind!r} has no grid rendering")
    psi = normalize(psi)
    if tol is not None:
        psi.check_boundary(tol)
    return psi


# -- running -------------------------------------------------------------------

def _noise_paths(config: RunConfig, indices, kind: str) -> list[NoisePath]:
    n, dt = config.n_steps, config.dt
    if not config.noise:
        return [NoisePath(dt, np.zeros(n), seed=config.seed, kind=kind, index=i) for i in indices]
    return [NoisePath.generate(n, dt, config.seed, i, kind=kind) for i in indices]


def _run_grid_chunk(config: RunConfig, indices) -> list[TrajectoryRecord]:
    psi0 = build_initial(config)
    if config.scheme == "nsa_grid":
        scheme, kind = "linear", "xi"
        paths = [NoisePath(config.dt, np.zeros(config.n_steps), seed=config.seed, kind="xi", index=i)
                 for i in indices]
    else:
        scheme = config.scheme
        kind = "xi" if scheme == "linear" else "w"
        paths = _noise_paths(config, indices, kind)
    return evolve_batch(psi0, paths, config.params, scheme=scheme, stride=config.record_stride,
                        diagnostics=config.diagnostics, recenter=config.recenter,
                        max_exponent=config.max_exponent, boundary_tol=config.boundary_tol,
                        manifest={"config_hash": config.config_hash(), "run_scheme": config.scheme})


def _run_gaussian_chunk(config: RunConfig, indices) -> list[TrajectoryRecord]:
    init = config.initial_state
    g0 = GaussianState(complex(init.alpha_re, init.alpha_im), init.x, init.k)
    out = []
    for path in _noise_paths(config, indices, "xi"):
        man = {"scheme": "gaussian_flow", "seed": config.seed, "trajectory_index": path.index,
               "params": config.params.to_dict(), "dt": config.dt, "stride": config.record_stride,
               "noise": config.noise, "run_config_hash": config.config_hash()}
        man["config_hash"] = content_hash(man)
        try:
            if config.noise:
                times, states = gaussian_flow.gaussian_trajectory(
                    g0, path, config.params, stride=config.record_stride)
            else:
                times, states = gaussian_flow.gaussian_trajectory(
                    g0, None, config.params, dt=config.dt, n_steps=config.n_steps,
                    stride=config.record_stride)
            rec = gaussian_flow.gaussian_record(times, states, config.params, man)
            rec.noise = path
        except CollapseError as exc:
            rec = TrajectoryRecord(np.zeros(0), {}, manifest=man, noise=path,
                                   failure=f"{type(exc).__name__} at time index "
                                           f"{getattr(exc, 'time_index', None)}: {exc}", error=exc)
        out.append(rec)
    return out


def _run_finite_chunk(config: RunConfig, indices) -> list[TrajectoryRecord]:
    init = config.initial_state
    spec = np.asarray(init.spectrum, dtype=float)
    dim = len(spec)
    L = np.diag(spec)
    H = np.zeros((dim, dim))
    finite.FiniteState(np.asarray(init.amplitudes, dtype=complex), H, (L,))  # validation
    n, dt = config.n_steps, config.dt
    if config.noise:
        incs = np.stack([trajectory_rng(config.seed, i).normal(0.0, np.sqrt(dt), size=(n, 1))
                         for i in indices])
    else:
        incs = np.zeros((len(indices), n, 1))
    v0 = np.tile(np.asarray(init.amplitudes, dtype=complex), (len(indices), 1))
    stride = config.record_stride
    _, snaps = finite.evolve_finite_batch(v0, H, [L], dt, n, config.params.lam,
                                          hbar=config.params.hbar, record_every=stride,
                                          increments=incs)
    snaps = np.stack(snaps)  # (n_rec, batch, dim)
    times = np.arange(len(snaps)) * stride * dt
    pops = np.abs(snaps) ** 2
    mean_L = pops @ spec
    var_L = pops @ spec**2 - mean_L**2
    out = []
    for b, i in enumerate(indices):
        cols = {f"pop_{j}": pops[:, b, j] for j in range(dim)}
        cols["max_pop"] = pops[:, b].max(axis=1)
        cols["mean_L"] = mean_L[:, b]
        cols["delta_L2"] = np.maximum(var_L[:, b], 0.0)
        man = {"scheme": "finite_dim", "seed": config.seed, "trajectory_index": int(i),
               "run_config_hash": config.config_hash()}
        man["config_hash"] = content_hash(man)
        out.append(TrajectoryRecord(times, cols, manifest=man))
    return out


def run_chunk(config: RunConfig, indices) -> list[TrajectoryRecord]:
    indices = list(indices)
    if config.scheme == "gaussian_flow":
        return _run_gaussian_chunk(config, indices)
    if config.scheme == "finite_dim":
        return _run_finite_chunk(config, indices)
    return _run_grid_chunk(config, indices)


def _chunks(n: int) -> list[range]:
    return [range(s, min(n, s + CHUNK)) for s in range(0, n, CHUNK)]


def _strip(rec: TrajectoryRecord) -> TrajectoryRecord:
    # exceptions and large arrays do not need to cross the process boundary
    rec.error = None
    return rec


def _chunk_job(config: RunConfig, indices) -> list[TrajectoryRecord]:
    return [_strip(r) for r in run_chunk(config, indices)]


def summarize(config: RunConfig, records: list[TrajectoryRecord]) -> EnsembleSummary:
    """Aggregate per-time means and variances over trajectories that completed."""
    ok = [r for r in records if r.failure is None]
    failures = [{"index": int(r.manifest.get("trajectory_index", i)), "cause": r.failure}
                for i, r in enumerate(records) if r.failure is not None]
    mean: dict = {}
    var: dict = {}
    final: dict = {}
    times: list = []
    if ok:
        times = ok[0].times.tolist()
        names = [c for c in ok[0].column_names()]
        for name in names:
            stack = np.stack([r[name] for r in ok])
            with np.errstate(invalid="ignore"):
                finite_rows = np.isfinite(stack).all(axis=0)
                mean[name] = [float(v) if f else None for v, f in zip(stack.mean(axis=0), finite_rows)]
                if len(ok) > 1:
                    var[name] = [float(v) if f else None
                                 for v, f in zip(stack.var(axis=0, ddof=1), finite_rows)]
                else:
                    var[name] = [0.0] * len(times)
            last = stack[:, -1]
            final[name] = float(np.median(last)) if np.all(np.isfinite(last)) else None
    collapse = None
    if config.regions and config.scheme in ("nonlinear", "linear"):
        stats = metrics.born_statistics(records, config.regions, config.params, at=config.collapse_at)
        collapse = json.loads(stats.to_json())
    return EnsembleSummary(config.config_hash(), config.to_flat(), len(records), len(failures),
                           failures, times, mean, var, final, collapse)


def run_ensemble(config: RunConfig, out_dir=None, workers: int = 1,
                 keep_records: bool = False) -> EnsembleSummary | tuple[EnsembleSummary, list]:
    """Run every trajectory of ``config`` and write records plus ``summary.json``.

    Records land in ``out_dir`` as soon as their chunk completes. A failing
    trajectory is recorded with its cause and the rest carry on.
    """
    config.validate()
    chunks = _chunks(config.n_trajectories)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        atomic_write(out / "config.toml", dump_config(config))

    def persist(recs):
        if out is None:
            return
        for r in recs:
            r.write(out / f"traj_{int(r.manifest['trajectory_index']):06d}")

    records: list[TrajectoryRecord] = []
    if workers <= 1 or len(chunks) == 1:
        for c in chunks:
            recs = run_chunk(config, c)
            persist(recs)
            records.extend(recs)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_chunk_job, config, c) for c in chunks]
            for fut in futures:
                recs = fut.result()
                persist(recs)
                records.extend(recs)
    records.sort(key=lambda r: int(r.manifest["trajectory_index"]))
    summary = summarize(config, records)
    if out is not None:
        atomic_write(out / "summary.json", summary.to_json())
    return (summary, records) if keep_records else summary
