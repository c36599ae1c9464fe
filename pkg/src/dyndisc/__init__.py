"""dyndisc: simulate damped oscillatory systems, fit neural ODEs to sparse
noisy observations, and recover the governing equations with genetic
programming symbolic regression."""

from .ode import (
    DivergenceError,
    IntegrationError,
    StiffnessError,
    Trajectory,
    integrate_adaptive,
    integrate_rk4,
)
from .systems import (
    BioParams,
    BioState,
    CartPoleParams,
    bio_rhs,
    bio_steady_state,
    cartpole_rhs,
    growth_rate,
    omega_R,
)

__version__ = "0.1.0"

__all__ = [
    "BioParams",
    "BioState",
    "CartPoleParams",
    "DivergenceError",
    "IntegrationError",
    "StiffnessError",
    "Trajectory",
    "bio_rhs",
    "bio_steady_state",
    "cartpole_rhs",
    "growth_rate",
    "integrate_adaptive",
    "integrate_rk4",
    "omega_R",
]
