"""MLP vector field, exact gradients through an unrolled RK4 solve, and the
AdaBelief optimizer.

Training follows discretize-then-optimize: the fixed-step RK4 integration
of the learned field is fully unrolled on the (refined) observation grid
and differentiated stage by stage with hand-written vector-Jacobian
products.  All arrays are float64 and all operations are deterministic, so
identical inputs give bitwise identical losses and gradients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from ._util import atomic_write_bytes, stable_seed
from .ode import DIVERGENCE_LIMIT, DivergenceError


def _tanh_deriv(a):
    # derivative of tanh written in terms of the activation output
    return 1.0 - a * a


ACTIVATIONS = {"tanh": (np.tanh, _tanh_deriv)}


def _layer_offsets(dims):
    offsets = []
    o = 0
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        offsets.append((o, o + n_in * n_out, o + n_in * n_out + n_out))
        o += n_in * n_out + n_out
    return offsets, o


@dataclass
class MlpParams:
    """Flat parameter vector plus the layer shapes needed to interpret it.

    Layout is [W1, b1, W2, b2, ...] with each W stored as (n_in, n_out) so
    batched inputs multiply as ``Y @ W + b``.
    """

    dims: tuple[int, ...]
    flat: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.flat = np.asarray(self.flat, dtype=float)
        _, n = _layer_offsets(self.dims)
        if self.flat.shape != (n,):
            raise ValueError(f"flat vector must have length {n}, got {self.flat.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return self.flat.size

    def layers(self, flat: np.ndarray | None = None):
        """(W, b) views into the flat vector (no copies)."""
        flat = self.flat if flat is None else flat
        out = []
        offsets, _ = _layer_offsets(self.dims)
        for (o_w, o_b, o_end), n_in, n_out in zip(offsets, self.dims[:-1], self.dims[1:]):
            out.append((flat[o_w:o_b].reshape(n_in, n_out), flat[o_b:o_end]))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.dims, self.flat.copy(), self.activation)

    @classmethod
    def zeros(cls, dims, activation: str = "tanh") -> "MlpParams":
        _, n = _layer_offsets(tuple(dims))
        return cls(tuple(dims), np.zeros(n), activation)

    @classmethod
    def glorot(cls, dims, seed: int, activation: str = "tanh") -> "MlpParams":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        params = cls.zeros(dims, activation)
        for W, _ in params.layers():
            bound = np.sqrt(6.0 / (W.shape[0] + W.shape[1]))
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        return params


def mlp_forward(params: MlpParams, y) -> np.ndarray:
    """Forward pass; accepts a single state (d,) or a batch (B, d)."""
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    Y = y[None, :] if single else y
    if Y.shape[1] != params.dims[0]:
        raise ValueError(f"input dim {Y.shape[1]} != expected {params.dims[0]}")
    act, _ = ACTIVATIONS[params.activation]
    layers = params.layers()
    H = Y
    for W, b in layers[:-1]:
        H = act(H @ W + b)
    W, b = layers[-1]
    out = H @ W + b
    return out[0] if single else out


class MlpField:
    """The MLP as an autonomous vector field with a parameter VJP.

    ``forward`` keeps the layer activations so ``vjp`` can push a cotangent
    back through one evaluation, accumulating parameter gradients into
    caller-owned views.
    """

    def __init__(self, params: MlpParams):
        self.params = params
        self._layers = params.layers()
        self.act, self.dact = ACTIVATIONS[params.activation]

    @property
    def n_params(self) -> int:
        return self.params.n_params

    def grad_views(self, grad_flat: np.ndarray):
        return self.params.layers(grad_flat)

    def forward(self, Y: np.ndarray):
        cache = [Y]
        H = Y
        for W, b in self._layers[:-1]:
            H = self.act(H @ W + b)
            cache.append(H)
        W, b = self._layers[-1]
        return H @ W + b, cache

    def vjp(self, cache, gbar: np.ndarray, grad_views) -> np.ndarray:
        W_out, _ = self._layers[-1]
        gW, gb = grad_views[-1]
        gW += cache[-1].T @ gbar
        gb += gbar.sum(axis=0)
        G = gbar @ W_out.T
        for i in range(len(self._layers) - 2, -1, -1):
            Z = G * self.dact(cache[i + 1])
            gW, gb = grad_views[i]
            gW += cache[i].T @ Z
            gb += Z.sum(axis=0)
            G = Z @ self._layers[i][0].T
        return G

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        """Plain ODE right-hand side for the solvers (single state)."""
        H = y
        for W, b in self._layers[:-1]:
            H = self.act(H @ W + b)
        W, b = self._layers[-1]
        return H @ W + b


class LinearField:
    """Vector field ``f(y) = y @ M`` whose parameters are the entries of M.

    Exists so the unrolled-solver gradient can be checked against the exact
    sensitivity solution of a linear system.
    """

    def __init__(self, M: np.ndarray):
        self.M = np.asarray(M, dtype=float)

    @property
    def n_params(self) -> int:
        return self.M.size

    def grad_views(self, grad_flat: np.ndarray):
        return grad_flat.reshape(self.M.shape)

    def forward(self, Y: np.ndarray):
        return Y @ self.M, Y

    def vjp(self, cache, gbar: np.ndarray, grad_views) -> np.ndarray:
        grad_views += cache.T @ gbar
        return gbar @ self.M.T

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        return y @ self.M


@dataclass
class GradTape:
    """Saved forward pass of one unrolled batched solve."""

    obs_times: np.ndarray
    refine: int
    steps: list  # (h, cache_k1, cache_k2, cache_k3, cache_k4) per substep


def rollout_unrolled(field, y0: np.ndarray, t_obs, refine: int = 4,
                     record_tape: bool = True):
    """Batched fixed-step RK4 on the observation grid refined ``refine``-fold.

    ``y0`` is (B, d); returns predictions (B, T, d) and the tape needed to
    backpropagate through the whole solve.
    """
    t_obs = np.asarray(t_obs, dtype=float)
    B, d = y0.shape
    T = t_obs.size
    pred = np.empty((B, T, d))
    pred[:, 0] = y0
    steps = []
    Y = y0
    for i in range(T - 1):
        h = (t_obs[i + 1] - t_obs[i]) / refine
        for _ in range(refine):
            k1, c1 = field.forward(Y)
            k2, c2 = field.forward(Y + (0.5 * h) * k1)
            k3, c3 = field.forward(Y + (0.5 * h) * k2)
            k4, c4 = field.forward(Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if record_tape:
                steps.append((h, c1, c2, c3, c4))
        m = np.abs(Y).max()
        if not np.isfinite(m) or m > DIVERGENCE_LIMIT:
            raise DivergenceError("learned field diverged during training solve",
                                  t_obs[i + 1])
        pred[:, i + 1] = Y
    return pred, GradTape(t_obs, refine, steps)


def backprop_rollout(field, tape: GradTape, pred_bar: np.ndarray) -> np.ndarray:
    """Pull ``d loss / d predictions`` back to a flat parameter gradient."""
    grad = np.zeros(field.n_params)
    views = field.grad_views(grad)
    T = pred_bar.shape[1]
    ybar = pred_bar[:, -1].copy()
    si = len(tape.steps)
    for i in range(T - 2, -1, -1):
        for _ in range(tape.refine):
            si -= 1
            h, c1, c2, c3, c4 = tape.steps[si]
            kb4 = (h / 6.0) * ybar
            ub4 = field.vjp(c4, kb4, views)
            kb3 = (h / 3.0) * ybar + h * ub4
            ub3 = field.vjp(c3, kb3, views)
            kb2 = (h / 3.0) * ybar + (0.5 * h) * ub3
            ub2 = field.vjp(c2, kb2, views)
            kb1 = (h / 6.0) * ybar + (0.5 * h) * ub2
            ub1 = field.vjp(c1, kb1, views)
            ybar = ybar + ub4 + ub3 + ub2 + ub1
        ybar += pred_bar[:, i]
    return grad


#: set False to force the generic numpy implementation everywhere.
USE_FUSED_KERNEL = True
_fused = None


def _fused_kernel():
    """Import the compiled kernel on first use (numba import is slow)."""
    global _fused
    if _fused is None:
        try:
            from . import _fast
            _fused = _fast.fused_loss_grad
        except ImportError:
            _fused = False
    return _fused


def batched_loss_and_grad(field, times: np.ndarray, obs: np.ndarray,
                          refine: int = 4):
    """Loss and gradient for a batch sharing one observation grid.

    ``obs`` is (B, T, d); each predicted trajectory starts from the first
    observed state.  Loss is the mean squared error over every batch item,
    time point and component.  Two-hidden-layer tanh networks run through
    the fused compiled kernel when available; everything else uses the
    generic tape implementation.
    """
    times = np.ascontiguousarray(times, dtype=float)
    obs = np.ascontiguousarray(obs, dtype=float)
    kernel = _fused_kernel() if USE_FUSED_KERNEL else False
    if (kernel and isinstance(field, MlpField) and len(field.params.dims) == 4
            and field.params.activation == "tanh"):
        (W1, b1), (W2, b2), (W3, b3) = field._layers
        loss, grad, ok, t_fail = kernel(times, obs, W1, b1, W2, b2, W3, b3,
                                        int(refine), DIVERGENCE_LIMIT)
        if not ok:
            raise DivergenceError("learned field diverged during training solve",
                                  t_fail)
        return float(loss), grad
    pred, tape = rollout_unrolled(field, obs[:, 0].copy(), times, refine)
    resid = pred - obs
    n = resid.size
    loss = float(np.sum(resid * resid) / n)
    grad = backprop_rollout(field, tape, (2.0 / n) * resid)
    return loss, grad


def loss_and_grad(field, batch, refine: int = 4):
    """Loss and gradient for a list of (t_grid, observed states) items.

    Items with identical grids are solved together as one batched rollout;
    the loss is the mean squared error over all observations of all items.
    """
    groups: dict[bytes, list] = {}
    order: list[bytes] = []
    for t_grid, states in batch:
        t_grid = np.asarray(t_grid, dtype=float)
        states = np.asarray(states, dtype=float)
        if states.ndim != 2 or states.shape[0] != t_grid.size or t_grid.size < 2:
            raise ValueError("each batch item needs >= 2 aligned observations")
        key = t_grid.tobytes()
        if key not in groups:
            groups[key] = [t_grid]
            order.append(key)
        groups[key].append(states)

    sq_sum = 0.0
    n_total = 0
    partials = []
    for key in order:
        t_grid, *stacks = groups[key]
        obs = np.stack(stacks)
        pred, tape = rollout_unrolled(field, obs[:, 0].copy(), t_grid, refine)
        resid = pred - obs
        sq_sum += float(np.sum(resid * resid))
        n_total += resid.size
        partials.append((tape, resid))
    loss = sq_sum / n_total
    grad = np.zeros(field.n_params)
    for tape, resid in partials:
        grad += backprop_rollout(field, tape, (2.0 / n_total) * resid)
    return loss, grad


# --------------------------------------------------------------------------
# AdaBelief


@dataclass
class OptimizerState:
    """First moment, gradient-belief variance and hyperparameters."""

    step: int
    m: np.ndarray
    s: np.ndarray
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-16


def adabelief_init(n_params: int, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-16) -> OptimizerState:
    return OptimizerState(0, np.zeros(n_params), np.zeros(n_params),
                          lr, beta1, beta2, eps)


def adabelief_step(state: OptimizerState, params: np.ndarray,
                   grad: np.ndarray):
    """One AdaBelief update; returns (new state, new params)."""
    if params.shape != grad.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and moment shapes must agree")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    diff = grad - m
    s = state.beta2 * state.s + (1.0 - state.beta2) * diff * diff
    m_hat = m / (1.0 - state.beta1 ** t)
    s_hat = s / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(s_hat) + state.eps)
    return replace(state, step=t, m=m, s=s), new_params


# --------------------------------------------------------------------------
# checkpoint format: one JSON header line + raw little-endian float64 block


def save_checkpoint(path, params: MlpParams, step: int, hyper: dict,
                    extra: dict | None = None) -> None:
    header = {
        "format": "dyndisc-mlp",
        "version": 1,
        "dims": list(params.dims),
        "activation": params.activation,
        "step": int(step),
        "hyper": hyper,
        "n_params": int(params.n_params),
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    blob += params.flat.astype("<f8").tobytes()
    atomic_write_bytes(path, blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != "dyndisc-mlp":
            raise ValueError(f"{path} is not a model checkpoint")
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if flat.size != header["n_params"]:
        raise ValueError("checkpoint parameter block has the wrong size")
    params = MlpParams(tuple(header["dims"]), flat, header["activation"])
    return params, header


def derive_seed(*parts) -> int:
    """Stable sub-seed derivation re-exported for training code."""
    return stable_seed(*parts)
