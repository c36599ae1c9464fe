"""Concrete dynamics: cart-pole angle equation and the bacterial shift model.

The cart-pole is the unforced variant with friction only in the pole-cart
articulation; only the angle dynamics are modelled (the cart position does
not feed back into the angle equation).

The bacterial model tracks three state variables through a nutrient shift:
``psi_A`` (free amino acid to protein mass ratio), ``phi_R`` (ribosomal
proteome fraction) and ``chi_R`` (regulatory allocation to ribosome
production).  Each supports two algebraically identical right-hand-side
formulations (a compact form via the growth rate and an expanded rational
form); tests pin their agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .ode import VectorField


# --------------------------------------------------------------------------
# cart-pole


@dataclass(frozen=True)
class CartPoleParams:
    """Unforced cart-pole constants (SI units)."""

    F: float = 0.0          # horizontal force on the cart, N
    l: float = 0.1          # half pole length, m
    m_p: float = 0.1        # pole mass, kg
    m_c: float = 1.0        # cart mass, kg
    mu_p: float = 0.0008    # pole-cart friction coefficient
    g: float = 9.8          # gravity, m/s^2

    def __post_init__(self):
        if min(self.l, self.m_p, self.m_c, self.g) <= 0:
            raise ValueError("l, m_p, m_c and g must be positive")
        if self.mu_p < 0:
            raise ValueError("mu_p must be non-negative")
        # keeps the angular-equation denominator bounded away from zero
        if self.m_p >= (4.0 / 3.0) * (self.m_c + self.m_p):
            raise ValueError("pole too heavy: angular equation degenerates")

    def as_dict(self) -> dict:
        return {"F": self.F, "l": self.l, "m_p": self.m_p, "m_c": self.m_c,
                "mu_p": self.mu_p, "g": self.g}


def cartpole_accel(theta, theta_dot, p: CartPoleParams):
    """Angular acceleration of the pole; accepts scalars or arrays."""
    sin = np.sin(theta)
    cos = np.cos(theta)
    total_mass = p.m_c + p.m_p
    num = (
        p.g * sin
        + cos * ((-p.F - p.m_p * p.l * theta_dot**2 * sin) / total_mass)
        - p.mu_p * theta_dot / (p.m_p * p.l)
    )
    den = p.l * (4.0 / 3.0 - p.m_p * cos**2 / total_mass)
    return num / den


def cartpole_rhs(t: float, y, p: CartPoleParams) -> np.ndarray:
    """d/dt of [theta, theta_dot]."""
    theta, theta_dot = float(y[0]), float(y[1])
    return np.array([theta_dot, cartpole_accel(theta, theta_dot, p)])


def cartpole_field(p: CartPoleParams) -> VectorField:
    return lambda t, y: cartpole_rhs(t, y, p)


def cartpole_energy(y, p: CartPoleParams) -> float:
    """Mechanical energy of the reduced angle dynamics.

    The free-cart system conserves horizontal momentum, so eliminating the
    cart velocity leaves (up to an additive constant)

        E = (2/3) m_p l^2 w^2 - (m_p l w cos(th))^2 / (2 (m_c + m_p))
            + m_p g l cos(th).

    E is conserved when F = 0 and mu_p = 0, and dE/dt = -mu_p w^2 with
    friction, so it decreases monotonically for mu_p > 0.
    """
    theta, w = float(y[0]), float(y[1])
    coupling = (p.m_p * p.l * w * math.cos(theta)) ** 2 / (2.0 * (p.m_c + p.m_p))
    return (
        (2.0 / 3.0) * p.m_p * p.l**2 * w**2
        - coupling
        + p.m_p * p.g * p.l * math.cos(theta)
    )


# --------------------------------------------------------------------------
# bacterial nutrient-shift model


class BioDomainError(ValueError):
    """State left the domain where the model equations are defined."""


class SteadyStateError(RuntimeError):
    """No physically meaningful steady state in the search bracket."""


@dataclass(frozen=True)
class BioParams:
    """Constants of the bacterial adaptation model.

    ``nu`` is the nutrient quality the system currently experiences, i.e.
    the post-shift value when simulating a shift.  ``A`` and ``A2`` are the
    derived shorthands used by the compact allocation formula.
    """

    phi_Rmax: float = 0.55      # max ribosomal proteome fraction
    eps_tilde: float = 10.04    # max elongation rate, 1/h
    k_a: float = 0.005          # amino-acid uptake efficiency
    C: float = 4.6              # dimensionless factor in the ppGpp level
    G_ref: float = 101.46       # reference ppGpp concentration, uM
    K_G: float = 14.5           # allocation constant, uM
    tau_chi: float = 1.0 / 6.0  # regulatory timescale, h
    nu: float = 3.78            # nutrient quality, 1/h

    def __post_init__(self):
        for name in ("phi_Rmax", "eps_tilde", "k_a", "C", "G_ref", "K_G",
                     "tau_chi", "nu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def A(self) -> float:
        return self.K_G

    @property
    def A2(self) -> float:
        return self.C * self.G_ref * self.k_a

    def as_dict(self) -> dict:
        return {"phi_Rmax": self.phi_Rmax, "eps_tilde": self.eps_tilde,
                "k_a": self.k_a, "C": self.C, "G_ref": self.G_ref,
                "K_G": self.K_G, "tau_chi": self.tau_chi, "nu": self.nu}


class BioState(NamedTuple):
    psi_A: float
    phi_R: float
    chi_R: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


def growth_rate(psi_A, phi_R, p: BioParams):
    """lambda = eps_tilde * phi_R * psi_A / (psi_A + k_a); array friendly."""
    return p.eps_tilde * np.asarray(phi_R) * np.asarray(psi_A) / (np.asarray(psi_A) + p.k_a)


def ppgpp_level(psi_A, p: BioParams):
    """ppGpp concentration [G] = C * G_ref * ((psi_A + k_a)/psi_A - 1)."""
    return p.C * p.G_ref * ((np.asarray(psi_A) + p.k_a) / np.asarray(psi_A) - 1.0)


def omega_R(psi_A, p: BioParams):
    """RNA polymerase allocation to ribosomal genes, K_G / (K_G + [G])."""
    psi_A = np.asarray(psi_A, dtype=float)
    if np.any(psi_A <= 0):
        raise BioDomainError("omega_R requires psi_A > 0")
    return p.K_G / (p.K_G + ppgpp_level(psi_A, p))


def omega_R_shorthand(psi_A, p: BioParams):
    """Equivalent rational form psi_A*A / (psi_A*A + A2)."""
    psi_A = np.asarray(psi_A, dtype=float)
    return psi_A * p.A / (psi_A * p.A + p.A2)


def bio_rhs(t: float, y, p: BioParams) -> np.ndarray:
    """d/dt of [psi_A, phi_R, chi_R], expanded rational formulation."""
    psi, phi, chi = float(y[0]), float(y[1]), float(y[2])
    if psi <= -p.k_a:
        raise BioDomainError(f"psi_A={psi:.6g} is at or below -k_a")
    uptake = psi / (psi + p.k_a)
    dpsi = (p.phi_Rmax - phi) * p.nu - p.eps_tilde * phi * psi * (1.0 + psi) / (psi + p.k_a)
    dphi = p.eps_tilde * phi * (chi - phi) * uptake
    dchi = (psi * p.A / (psi * p.A + p.A2) - chi) / p.tau_chi
    return np.array([dpsi, dphi, dchi])


def bio_rhs_compact(t: float, y, p: BioParams) -> np.ndarray:
    """Same dynamics written through the growth rate and omega_R."""
    psi, phi, chi = float(y[0]), float(y[1]), float(y[2])
    if psi <= -p.k_a:
        raise BioDomainError(f"psi_A={psi:.6g} is at or below -k_a")
    lam = growth_rate(psi, phi, p)
    dpsi = (p.phi_Rmax - phi) * p.nu - lam * (1.0 + psi)
    dphi = lam * (chi - phi)
    dchi = (omega_R(psi, p) - chi) / p.tau_chi
    return np.array([dpsi, dphi, dchi])


def bio_field(p: BioParams) -> VectorField:
    return lambda t, y: bio_rhs(t, y, p)


def _steady_residual(psi: float, nu: float, p: BioParams) -> float:
    # At a fixed point chi_R = phi_R = omega_R(psi_A), leaving one scalar
    # equation in psi_A from the amino-acid balance.
    w = float(omega_R_shorthand(psi, p))
    lam = p.eps_tilde * w * psi / (psi + p.k_a)
    return (p.phi_Rmax - w) * nu - lam * (1.0 + psi)


def bio_steady_state(nu: float, p: BioParams | None = None,
                     bracket: tuple[float, float] = (1e-6, 10.0)) -> BioState:
    """Unique steady state with positive psi_A for nutrient quality ``nu``.

    Bisection on the scalar amino-acid balance followed by a Newton polish
    (numerical derivative).  Raises :class:`SteadyStateError` when the
    bracket shows no sign change.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    p = p or BioParams()
    a, b = bracket
    fa, fb = _steady_residual(a, nu, p), _steady_residual(b, nu, p)
    if fa == 0.0:
        psi = a
    elif fb == 0.0:
        psi = b
    elif fa * fb > 0:
        raise SteadyStateError(
            f"no physical steady state for nu={nu:.6g} in bracket {bracket}")
    else:
        for _ in range(200):
            mid = 0.5 * (a + b)
            if b - a < 1e-15 * max(1.0, abs(mid)):
                break
            fm = _steady_residual(mid, nu, p)
            if fm == 0.0:
                a = b = mid
                break
            if fa * fm < 0:
                b, fb = mid, fm
            else:
                a, fa = mid, fm
        psi = 0.5 * (a + b)
        for _ in range(3):
            eps = 1e-7 * max(psi, 1e-7)
            deriv = (_steady_residual(psi + eps, nu, p)
                     - _steady_residual(psi - eps, nu, p)) / (2.0 * eps)
            if deriv == 0.0:
                break
            step = _steady_residual(psi, nu, p) / deriv
            psi_new = psi - step
            if not (bracket[0] <= psi_new <= bracket[1]):
                break
            psi = psi_new

    w = float(omega_R_shorthand(psi, p))
    state = BioState(psi, w, w)
    resid = bio_rhs(0.0, state.as_array(), replace(p, nu=nu))
    if np.max(np.abs(resid)) >= 1e-10:
        raise SteadyStateError(
            f"steady-state residual {np.max(np.abs(resid)):.3g} too large for nu={nu:.6g}")
    return state
