"""Dynamical-system contract, explicit stepping, and Lipschitz estimation.

A system supplies the tendency (time derivative) of a state for a given
parameter set.  States are duck-typed: anything supporting ``+``, ``-`` and
scalar ``*`` works, which covers plain floats (toy systems) and composite
grid states alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import BlowUpError, state_norm


class DynamicalSystem:
    """Behavior contract for a steppable model.

    Subclasses implement ``tendency`` and declare which variables of the
    state can be coupled to other ensemble members.  ``tendency`` must be
    deterministic and return a tendency of the same shape as the state.
    """

    couplable: tuple[str, ...] = ()

    def tendency(self, state, params):
        raise NotImplementedError

    def state_dimension(self, state) -> int:
        """Number of scalar degrees of freedom in a state."""
        if np.isscalar(state):
            return 1
        return int(np.asarray(state).size)

    # -- coupled-variable access ----------------------------------------

    def get_variable(self, state, name):
        """Extract one couplable variable from a state."""
        self._check_couplable(name)
        return state

    def replace_variable(self, state, name, value):
        """Return a copy of the state with one variable replaced."""
        self._check_couplable(name)
        return value

    def _check_couplable(self, name):
        if name not in self.couplable:
            raise KeyError(f"{name!r} is not a couplable variable of {type(self).__name__}")

    # -- validation ------------------------------------------------------

    def validate_state(self, state, context: str = ""):
        """Raise BlowUpError naming the offending variable if non-finite."""
        arr = np.asarray(state, dtype=np.float64)
        if not np.isfinite(arr).all():
            name = self.couplable[0] if self.couplable else "state"
            where = f" during {context}" if context else ""
            raise BlowUpError(f"non-finite value in variable '{name}'{where}")

    # -- sampling support for the Lipschitz estimator ---------------------

    def random_state(self, params, rng: np.random.Generator):
        """Draw a state from physically plausible per-variable ranges."""
        raise NotImplementedError

    def noise_like(self, state, rng: np.random.Generator):
        """A random perturbation direction with the shape of ``state``."""
        raise NotImplementedError

    def lipschitz_scale(self, params) -> float:
        """Default pair separation: 1e-2 of the variable range."""
        raise NotImplementedError

    def state_norm(self, state) -> float:
        return state_norm(state)


def explicit_step(system: DynamicalSystem, state, params, dt: float):
    """Forward Euler: state + dt * tendency."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    new = state + system.tendency(state, params) * dt
    system.validate_state(new, context="explicit step")
    return new


def estimate_lipschitz(
    system: DynamicalSystem,
    params,
    samples: int,
    scale: float | None = None,
    seed: int = 0,
) -> float:
    """Empirical Lipschitz constant of the tendency operator.

    Samples random state pairs (B, D) with ||B - D|| <= scale and returns
    the largest observed ratio ||S(B) - S(D)|| / ||B - D||.  As a finite
    sample this is a lower bound on the true constant.  Deterministic for a
    fixed seed.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    if scale is None:
        scale = system.lipschitz_scale(params)
    if not scale > 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        for _attempt in range(100):
            base = system.random_state(params, rng)
            direction = system.noise_like(base, rng)
            dnorm = system.state_norm(direction)
            if dnorm > 0:
                break
        else:
            raise RuntimeError("could not draw a non-degenerate state pair")
        separation = float(rng.uniform(0.1, 1.0)) * scale
        other = base + direction * (separation / dnorm)
        diff = system.state_norm(
            system.tendency(base, params) - system.tendency(other, params)
        )
        best = max(best, diff / separation)
    return best


# -- toy systems -------------------------------------------------------------


@dataclass(frozen=True)
class LogisticParams:
    """Growth rate and carrying capacity of the scalar logistic model."""

    r: float
    cap: float

    def __post_init__(self):
        if not self.cap > 0:
            raise ValueError("carrying capacity must be positive")


def logistic_tendency(b: float, p: LogisticParams) -> float:
    return p.r * b * (1.0 - b / p.cap)


class LogisticSystem(DynamicalSystem):
    """Scalar logistic growth; the standard oracle for the ensemble engine."""

    couplable = ("b",)

    def tendency(self, state, params: LogisticParams):
        return logistic_tendency(state, params)

    def random_state(self, params: LogisticParams, rng):
        return float(rng.uniform(0.0, params.cap))

    def noise_like(self, state, rng):
        return float(rng.standard_normal())

    def lipschitz_scale(self, params: LogisticParams) -> float:
        return 0.01 * params.cap


class LinearSystem(DynamicalSystem):
    """S(u) = lam * u; its exact Lipschitz constant is |lam|."""

    couplable = ("b",)

    def __init__(self, lam: float):
        self.lam = float(lam)

    def tendency(self, state, params=None):
        return self.lam * state

    def random_state(self, params, rng):
        return float(rng.uniform(-1.0, 1.0))

    def noise_like(self, state, rng):
        return float(rng.standard_normal())

    def lipschitz_scale(self, params) -> float:
        return 0.02
