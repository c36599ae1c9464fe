"""Dataset generation: simulate, corrupt with noise, subsample, persist.

Noise is always applied to finished trajectories, never fed back into the
integrator: the observations are corrupted, not the dynamics.  Every
trajectory draws from its own RNG stream (seed derived by stable hashing
from the base seed and trajectory index) so generation order or
parallelism can never change the data.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, fmt_float, stable_seed
from .ode import Trajectory, integrate_rk4
from .systems import BioParams, CartPoleParams, bio_field, bio_steady_state, cartpole_field

CARTPOLE_COLUMNS = ("theta", "theta_dot")
BIO_COLUMNS = ("psi_A", "phi_R", "chi_R")


@dataclass(frozen=True)
class SimSpec:
    """Dense simulation grid: ``t_start`` to ``t_end`` in steps of ``dt``.

    ``substeps`` RK4 steps are taken internally per output step.  The
    extreme nutrient up-shifts squeeze ``psi_A`` through a thin positive
    boundary layer that a single 0.01 h step overshoots into negative
    territory, so stored trajectories are integrated at ``dt / substeps``
    and sampled back onto the ``dt`` grid.
    """

    t_end: float
    dt: float
    t_start: float = 0.0
    substeps: int = 4

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= self.t_start or self.substeps < 1:
            raise ValueError("need dt > 0, t_end > t_start and substeps >= 1")

    def grid(self) -> np.ndarray:
        n = int(round((self.t_end - self.t_start) / self.dt))
        return np.linspace(self.t_start, self.t_end, n + 1)

    def fine_grid(self) -> np.ndarray:
        n = int(round((self.t_end - self.t_start) / self.dt)) * self.substeps
        return np.linspace(self.t_start, self.t_end, n + 1)


@dataclass(frozen=True)
class NoiseSpec:
    """Uniform relative noise: each observation x becomes x * (1 + u) with
    u ~ U(-magnitude, +magnitude), i.i.d. per scalar entry."""

    magnitude: float = 0.05
    distribution: str = "uniform-relative"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.magnitude < 1.0:
            raise ValueError("magnitude must be in [0, 1)")
        if self.distribution != "uniform-relative":
            raise ValueError(f"unsupported distribution {self.distribution!r}")


@dataclass(frozen=True)
class SamplingSpec:
    """Subsampling window and rate (samples per unit time) or explicit count.

    With a rate, requested times are ``t_start + k / rate``; ``include_t0``
    keeps (or drops) the k = 0 point.  With a count, times are evenly
    spaced across the window including both endpoints.
    """

    window: tuple[float, float]
    rate: float | None = None
    count: int | None = None
    include_t0: bool = True

    def __post_init__(self):
        if (self.rate is None) == (self.count is None):
            raise ValueError("specify exactly one of rate or count")
        if self.rate is not None and self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.count is not None and self.count < 1:
            raise ValueError("count must be at least 1")
        if self.window[1] <= self.window[0]:
            raise ValueError("window must be increasing")

    def requested_times(self) -> np.ndarray:
        t0, t1 = self.window
        if self.count is not None:
            return np.linspace(t0, t1, self.count)
        n = int(np.floor((t1 - t0) * self.rate + 1e-9))
        k0 = 0 if self.include_t0 else 1
        return t0 + np.arange(k0, n + 1, dtype=float) / self.rate


@dataclass
class Dataset:
    """Trajectories sharing one system, sampling protocol and provenance."""

    trajectories: list[Trajectory]
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.provenance.get("columns", ()))

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, traj in enumerate(self.trajectories):
            name = f"traj_{i:03d}.csv"
            write_trajectory_csv(out / name, traj, self.columns,
                                 self.provenance.get("config_hash"))
            entries.append({"file": name, "meta": _json_safe(traj.meta)})
        manifest = {
            "format": "dyndisc-dataset",
            "version": 1,
            "provenance": _json_safe(self.provenance),
            "trajectories": entries,
        }
        atomic_write_text(out / "manifest.json",
                          json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, in_dir) -> "Dataset":
        src = Path(in_dir)
        manifest = json.loads((src / "manifest.json").read_text())
        if manifest.get("format") != "dyndisc-dataset":
            raise ValueError(f"{src} does not hold a dataset manifest")
        trajs = []
        for entry in manifest["trajectories"]:
            times, states = read_trajectory_csv(src / entry["file"])
            trajs.append(Trajectory(times, states, entry["meta"]))
        return cls(trajs, manifest["provenance"])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _json_safe(dataclasses.asdict(obj))
    return obj


def write_trajectory_csv(path, traj: Trajectory, columns, config_hash=None) -> None:
    lines = []
    if config_hash:
        lines.append(f"# config: {config_hash}")
    names = list(columns) if columns else [f"x{j + 1}" for j in range(traj.dim)]
    lines.append(",".join(["t"] + names))
    for t, row in zip(traj.times, traj.states):
        lines.append(",".join([fmt_float(t)] + [fmt_float(v) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    times, states = [], []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("t,"):
            continue
        parts = line.split(",")
        times.append(float(parts[0]))
        states.append([float(v) for v in parts[1:]])
    return np.asarray(times), np.asarray(states)


def trajectory_seed(base_seed: int, index: int, purpose: str = "noise") -> int:
    return stable_seed(base_seed, purpose, index)


# --------------------------------------------------------------------------
# generation


def _simulate_on_grid(field, ic, sim: SimSpec) -> Trajectory:
    fine = integrate_rk4(field, ic, sim.fine_grid())
    return Trajectory(sim.grid(), fine.states[:: sim.substeps])


def simulate_cartpole(theta0: float, speed0: float, params: CartPoleParams,
                      sim: SimSpec) -> Trajectory:
    traj = _simulate_on_grid(cartpole_field(params), [theta0, speed0], sim)
    traj.meta.update({
        "system": "cartpole",
        "params": params.as_dict(),
        "initial_condition": [float(theta0), float(speed0)],
    })
    return traj


def simulate_bio_shift(nu_i: float, nu_f: float, params: BioParams,
                       sim: SimSpec) -> Trajectory:
    """Start at the steady state of ``nu_i`` and evolve under ``nu_f``."""
    ic = bio_steady_state(nu_i, params).as_array()
    run_params = replace(params, nu=nu_f)
    traj = _simulate_on_grid(bio_field(run_params), ic, sim)
    traj.meta.update({
        "system": "bio",
        "params": run_params.as_dict(),
        "initial_condition": [float(v) for v in ic],
        "nu_i": float(nu_i),
        "nu_f": float(nu_f),
    })
    return traj


def generate_cartpole_grid(angles, speeds, exclude, sim: SimSpec,
                           params: CartPoleParams | None = None,
                           base_seed: int = 0) -> Dataset:
    """One trajectory per (angle, speed) pair minus exclusions."""
    if len(angles) == 0 or len(speeds) == 0:
        raise ValueError("angles and speeds must be non-empty")
    params = params or CartPoleParams()
    excluded = [(float(a), float(s)) for a, s in (exclude or [])]
    trajs = []
    for a in angles:
        for s in speeds:
            if any(abs(a - ea) < 1e-12 and abs(s - es) < 1e-12
                   for ea, es in excluded):
                continue
            traj = simulate_cartpole(a, s, params, sim)
            traj.meta["index"] = len(trajs)
            trajs.append(traj)
    if not trajs:
        warnings.warn("exclusion list removed every initial condition")
    return Dataset(trajs, {
        "system": "cartpole",
        "columns": list(CARTPOLE_COLUMNS),
        "params": params.as_dict(),
        "sim": dataclasses.asdict(sim),
        "base_seed": base_seed,
    })


def generate_bio_shifts(nu_initials, nu_f: float, sim: SimSpec,
                        params: BioParams | None = None,
                        base_seed: int = 0) -> Dataset:
    """One shift trajectory per initial nutrient quality."""
    if len(nu_initials) == 0:
        raise ValueError("nu_initials must be non-empty")
    params = params or BioParams()
    trajs = []
    for i, nu_i in enumerate(nu_initials):
        traj = simulate_bio_shift(float(nu_i), float(nu_f), params, sim)
        traj.meta["index"] = i
        trajs.append(traj)
    return Dataset(trajs, {
        "system": "bio",
        "columns": list(BIO_COLUMNS),
        "params": replace(params, nu=float(nu_f)).as_dict(),
        "sim": dataclasses.asdict(sim),
        "nu_f": float(nu_f),
        "base_seed": base_seed,
    })


# --------------------------------------------------------------------------
# corruption and subsampling


def noise_factors(spec: NoiseSpec, shape) -> np.ndarray:
    """Multiplicative factors 1 + u applied to the observations."""
    rng = np.random.default_rng(spec.seed)
    return 1.0 + rng.uniform(-spec.magnitude, spec.magnitude, size=shape)


def add_noise(traj: Trajectory, spec: NoiseSpec) -> Trajectory:
    meta = dict(traj.meta)
    meta["noise"] = {"magnitude": spec.magnitude, "seed": spec.seed,
                     "distribution": spec.distribution}
    if spec.magnitude == 0.0:
        return Trajectory(traj.times.copy(), traj.states.copy(), meta)
    states = traj.states * noise_factors(spec, traj.states.shape)
    return Trajectory(traj.times.copy(), states, meta)


def subsample(traj: Trajectory, spec: SamplingSpec) -> Trajectory:
    """Pick the trajectory points closest to the requested sample times.

    When a requested time is not on the stored grid (non-commensurate
    rate), the nearest grid point is used and a warning is recorded both
    via :mod:`warnings` and in the returned metadata.
    """
    t0, t1 = spec.window
    if t0 < traj.times[0] - 1e-9 or t1 > traj.times[-1] + 1e-9:
        raise ValueError("sampling window outside the simulated span")
    req = spec.requested_times()
    pos = np.searchsorted(traj.times, req)
    pos = np.clip(pos, 1, len(traj.times) - 1)
    left, right = traj.times[pos - 1], traj.times[pos]
    idx = np.where(np.abs(req - left) <= np.abs(right - req), pos - 1, pos)
    snapped = np.abs(traj.times[idx] - req) > 1e-9 * np.maximum(1.0, np.abs(req))
    meta = dict(traj.meta)
    meta["sampling"] = {"window": [t0, t1], "rate": spec.rate,
                        "count": spec.count, "include_t0": spec.include_t0}
    if np.any(snapped):
        meta["sampling"]["snapped_points"] = int(np.sum(snapped))
        warnings.warn(
            f"{int(np.sum(snapped))} sample times were not on the grid; "
            "nearest grid points used")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("sampling rate finer than the stored grid")
    return Trajectory(traj.times[idx], traj.states[idx], meta)


def build_noisy_dataset(dataset: Dataset, magnitude: float, base_seed: int,
                        sampling: SamplingSpec | None = None) -> Dataset:
    """Apply per-trajectory noise streams, then optional subsampling."""
    out = []
    for i, traj in enumerate(dataset.trajectories):
        noisy = add_noise(traj, NoiseSpec(magnitude=magnitude,
                                          seed=trajectory_seed(base_seed, i)))
        if sampling is not None:
            noisy = subsample(noisy, sampling)
        out.append(noisy)
    prov = dict(dataset.provenance)
    prov["noise_magnitude"] = magnitude
    prov["base_seed"] = base_seed
    if sampling is not None:
        prov["sampling"] = {"window": list(sampling.window), "rate": sampling.rate,
                            "count": sampling.count, "include_t0": sampling.include_t0}
    return Dataset(out, prov)
