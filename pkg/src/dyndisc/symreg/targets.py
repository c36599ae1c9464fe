"""Derivative regression targets and the ground-truth equation trees.

Targets are the finite-difference time derivatives of the state variables:
second-order central differences in the interior and first-order one-sided
differences at the two boundaries, computed on the full series BEFORE
truncation.  Truncation then drops the leading points (large derivative
error) and the trailing steady-state tail (uninformative, low signal).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..ode import Trajectory
from ..systems import BioParams, growth_rate
from . import expr as ex

BIO_VARS = ("psi_A", "phi_R", "chi_R")
GROWTH_VAR = "lambda"


@dataclass
class RegressionTarget:
    """Input matrix, derivative target vector and bookkeeping for one search."""

    inputs: np.ndarray            # (n, k)
    target: np.ndarray            # (n,)
    var_names: tuple[str, ...]
    target_name: str
    truncation: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.target.shape[0]:
            raise ValueError("inputs and target must have the same row count")
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.target))):
            raise ValueError("regression data must be finite")

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]


def finite_difference(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Column-wise d/dt: central differences inside, one-sided at the ends."""
    return np.gradient(values, times, axis=0, edge_order=1)


def derivative_targets(traj: Trajectory, drop_head: int = 10, drop_tail: int = 100,
                       include_growth_rate: bool = True,
                       params: BioParams | None = None) -> list[RegressionTarget]:
    """One RegressionTarget per state variable of a three-variable series.

    The optional growth-rate column is computed from the stored (possibly
    noisy or model-generated) data itself, not from any clean source.
    """
    if traj.dim != 3:
        raise ValueError("derivative targets are defined for the three-variable system")
    n = len(traj)
    if n - drop_head - drop_tail < 3:
        raise ValueError("series too short after truncation")
    derivs = finite_difference(traj.states, traj.times)
    lo, hi = drop_head, n - drop_tail
    states = traj.states[lo:hi]
    derivs = derivs[lo:hi]

    names = BIO_VARS
    inputs = states
    if include_growth_rate:
        params = params or BioParams()
        lam = growth_rate(states[:, 0], states[:, 1], params)
        inputs = np.column_stack([states, lam])
        names = BIO_VARS + (GROWTH_VAR,)

    trunc = {"drop_head": drop_head, "drop_tail": drop_tail,
             "rows": int(hi - lo), "t_first": float(traj.times[lo]),
             "t_last": float(traj.times[hi - 1])}
    return [RegressionTarget(inputs, derivs[:, j], names, f"d{BIO_VARS[j]}/dt", dict(trunc))
            for j in range(3)]


def reference_equations(params: BioParams | None = None,
                        include_growth_rate: bool = True) -> dict[str, ex.Expr]:
    """Ground-truth right-hand sides as expression trees over the SR inputs.

    Variable order matches :func:`derivative_targets`:
    (psi_A, phi_R, chi_R[, lambda]).
    """
    p = params or BioParams()
    psi, phi, chi = ex.Var(0), ex.Var(1), ex.Var(2)
    saturation = ex.div(psi, ex.add(psi, ex.Const(p.A2 / p.A)))
    d_chi = ex.mul(ex.Const(1.0 / p.tau_chi), ex.sub(saturation, chi))
    if include_growth_rate:
        lam = ex.Var(3)
        d_psi = ex.sub(
            ex.sub(ex.sub(ex.Const(p.phi_Rmax * p.nu), ex.mul(ex.Const(p.nu), phi)), lam),
            ex.mul(lam, psi))
        d_phi = ex.mul(lam, ex.sub(chi, phi))
    else:
        uptake = ex.div(psi, ex.add(psi, ex.Const(p.k_a)))
        lam_full = ex.mul(ex.Const(p.eps_tilde), ex.mul(phi, uptake))
        d_psi = ex.sub(ex.mul(ex.Const(p.nu), ex.sub(ex.Const(p.phi_Rmax), phi)),
                       ex.mul(lam_full, ex.add(ex.Const(1.0), psi)))
        d_phi = ex.mul(lam_full, ex.sub(chi, phi))
    return {"psi_A": d_psi, "phi_R": d_phi, "chi_R": d_chi}
