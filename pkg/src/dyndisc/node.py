"""Training orchestration for neural-ODE models and rollout of trained fields.

One training run is a single deterministic sequence: all randomness comes
from the spec seed (parameter init and batch shuffling use separate derived
streams).  On divergence the run restores the last snapshot, halves the
learning rate and retries a bounded number of times.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, fmt_float, stable_seed
from .dataset import Dataset
from .neural import (
    MlpField,
    MlpParams,
    OptimizerState,
    adabelief_init,
    adabelief_step,
    batched_loss_and_grad,
    save_checkpoint,
)
from .ode import DivergenceError, Trajectory, integrate_adaptive


class TrainingError(RuntimeError):
    """Training kept diverging after the allowed learning-rate reductions."""


@dataclass(frozen=True)
class WarmupSpec:
    """Short initial phase on a time-prefix of each trajectory."""

    iterations: int = 500
    data_fraction: float = 0.10
    lr: float = 0.003

    def __post_init__(self):
        if self.iterations < 0 or not 0.0 < self.data_fraction <= 1.0:
            raise ValueError("bad warmup configuration")


@dataclass(frozen=True)
class TrainSpec:
    iterations: int
    lr: float
    batch_size: int
    seed: int = 0
    warmup: WarmupSpec | None = None
    hidden: tuple[int, ...] = (20, 20)
    activation: str = "tanh"
    refine: int = 4
    log_every: int = 100
    checkpoint_every: int = 10_000
    max_retries: int = 3
    dataset_ref: str = ""

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("iterations, batch_size and lr must be positive")


@dataclass
class TrainedModel:
    params: MlpParams
    spec: TrainSpec
    final_loss: float
    history: list = field(default_factory=list)  # (iteration, loss, lr)

    def field(self) -> MlpField:
        return MlpField(self.params)

    def save(self, path, extra: dict | None = None) -> None:
        hyper = {"lr": self.spec.lr, "beta1": 0.9, "beta2": 0.999, "eps": 1e-16}
        info = {"final_loss": self.final_loss}
        if extra:
            info.update(extra)
        save_checkpoint(path, self.params, self.history[-1][0] if self.history else 0,
                        hyper, info)

    def write_log(self, path) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", "loss", "lr"])
        for it, loss, lr in self.history:
            writer.writerow([it, fmt_float(loss), fmt_float(lr)])
        atomic_write_text(path, buf.getvalue())


def warmup_points(n_times: int, fraction: float) -> int:
    """Number of leading time points a warmup phase keeps (at least two)."""
    return max(2, int(n_times * fraction))


def _stacked_arrays(dataset: Dataset):
    """Common observation grid (T,) and stacked states (N, T, d)."""
    trajs = dataset.trajectories
    if not trajs:
        raise ValueError("dataset is empty")
    times = trajs[0].times
    for tr in trajs[1:]:
        if tr.times.shape != times.shape or not np.allclose(tr.times, times,
                                                            rtol=0, atol=1e-12):
            raise ValueError("all trajectories must share one sampling grid")
    states = np.stack([tr.states for tr in trajs])
    return times, states


# seam kept module-level so tests can observe which data each phase touches
def _phase_loss_and_grad(field: MlpField, times: np.ndarray, obs: np.ndarray,
                         refine: int):
    return batched_loss_and_grad(field, times, obs, refine)


@dataclass
class _Snapshot:
    iteration: int
    flat: np.ndarray
    opt: OptimizerState
    rng_state: dict
    order: np.ndarray
    cursor: int


def train(spec: TrainSpec, dataset: Dataset,
          checkpoint_dir=None) -> TrainedModel:
    """Run the warmup phase (if configured) then the main phase.

    Each iteration draws ``batch_size`` whole trajectories from an
    epoch-shuffled order without replacement (a partial leftover batch at
    the end of an epoch is dropped and a fresh epoch begins).
    """
    times, states = _stacked_arrays(dataset)
    n_traj, n_times, dim = states.shape
    if spec.batch_size > n_traj:
        raise ValueError(f"batch_size {spec.batch_size} exceeds dataset size {n_traj}")

    params = MlpParams.glorot((dim, *spec.hidden, dim),
                              seed=stable_seed(spec.seed, "init"),
                              activation=spec.activation)
    rng = np.random.default_rng(stable_seed(spec.seed, "batch"))

    phases = []
    if spec.warmup is not None and spec.warmup.iterations > 0:
        keep = warmup_points(n_times, spec.warmup.data_fraction)
        phases.append((spec.warmup.iterations, spec.warmup.lr,
                       times[:keep], states[:, :keep]))
    phases.append((spec.iterations, spec.lr, times, states))

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    history: list[tuple[int, float, float]] = []
    opt = adabelief_init(params.n_params, phases[0][1])
    phase_base = 0
    retries_left = spec.max_retries

    for n_iters, lr, ph_times, ph_states in phases:
        opt = replace(opt, lr=lr)
        order = rng.permutation(n_traj)
        cursor = 0
        snap = _Snapshot(0, params.flat.copy(), replace(opt, m=opt.m.copy(), s=opt.s.copy()),
                         rng.bit_generator.state, order.copy(), cursor)
        it = 0
        while it < n_iters:
            if cursor + spec.batch_size > n_traj:
                order = rng.permutation(n_traj)
                cursor = 0
            idx = order[cursor:cursor + spec.batch_size]
            cursor += spec.batch_size
            field_ = MlpField(params)
            try:
                loss, grad = _phase_loss_and_grad(field_, ph_times,
                                                  ph_states[idx], spec.refine)
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite training loss", ph_times[-1])
            except DivergenceError:
                if retries_left == 0:
                    raise TrainingError(
                        f"training diverged {spec.max_retries + 1} times "
                        f"(last lr {opt.lr:.3g})") from None
                retries_left -= 1
                params.flat[...] = snap.flat
                opt = replace(snap.opt, lr=snap.opt.lr / 2.0,
                              m=snap.opt.m.copy(), s=snap.opt.s.copy())
                rng.bit_generator.state = snap.rng_state
                order = snap.order.copy()
                cursor = snap.cursor
                it = snap.iteration
                history = [h for h in history if h[0] <= phase_base + it]
                continue
            opt, new_flat = adabelief_step(opt, params.flat, grad)
            params.flat[...] = new_flat
            it += 1
            if it % spec.log_every == 0 or it == n_iters or it == 1:
                history.append((phase_base + it, loss, opt.lr))
            if spec.checkpoint_every and it % spec.checkpoint_every == 0:
                snap = _Snapshot(it, params.flat.copy(),
                                 replace(opt, m=opt.m.copy(), s=opt.s.copy()),
                                 rng.bit_generator.state, order.copy(), cursor)
                if ckpt_dir:
                    save_checkpoint(ckpt_dir / f"ckpt_{phase_base + it:07d}.bin",
                                    params, phase_base + it,
                                    {"lr": opt.lr, "beta1": opt.beta1,
                                     "beta2": opt.beta2, "eps": opt.eps})
        phase_base += n_iters

    final_loss = history[-1][1]
    model = TrainedModel(params, spec, final_loss, history)
    if ckpt_dir:
        model.save(ckpt_dir / "model.ckpt")
    return model


def rollout(model: TrainedModel | MlpParams, y0, t_grid,
            rtol: float = 1e-6, atol: float = 1e-9) -> Trajectory:
    """Integrate the learned field adaptively and sample at ``t_grid``."""
    params = model.params if isinstance(model, TrainedModel) else model
    t = np.asarray(t_grid, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if t.size == 0:
        return Trajectory(np.empty(0), np.empty((0, y0.size)))
    if t.size == 1:
        return Trajectory(t.copy(), y0[None, :].copy())
    field_ = MlpField(params)
    return integrate_adaptive(field_, y0, (t[0], t[-1]), t, rtol=rtol, atol=atol)
