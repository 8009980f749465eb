"""Control-affine robot models, their linearizations, and sensor maps.

State convention throughout the package: ``x = (position, velocity)`` with
``n = 2 * dim`` for the double-integrator family.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalInstabilityError


@dataclass(frozen=True)
class LinearObservation:
    """Linear sensor z = C x + v, v ~ N(0, R)."""

    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", R)
        if R.shape != (C.shape[0], C.shape[0]):
            raise ConfigError("measurement noise shape does not match C")
        np.linalg.cholesky(R)  # SPD check

    @property
    def m(self) -> int:
        return self.C.shape[0]


def full_state_observation(n: int, noise_var: float) -> LinearObservation:
    return LinearObservation(np.eye(n), noise_var * np.eye(n))


def position_observation(dim: int, noise_var: float) -> LinearObservation:
    C = np.hstack([np.eye(dim), np.zeros((dim, dim))])
    return LinearObservation(C, noise_var * np.eye(dim))


@dataclass(frozen=True)
class DoubleIntegrator:
    """Double integrator in ``dim`` workspace dimensions with optional
    quadratic velocity drag:

        d pos = vel dt
        d vel = (u - drag_coeff * ||vel|| * vel) dt + sqrt(epsilon) dW

    ``drag_coeff = 0`` gives the linear model. ``observation=None`` means no
    sensor (useful for open-loop tests).
    """

    dim: int
    drag_coeff: float = 0.0
    epsilon: float = 0.0
    observation: LinearObservation | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError(f"workspace dimension must be 2 or 3, got {self.dim}")
        if self.epsilon < 0:
            raise ConfigError("noise intensity must be nonnegative")

    @property
    def n(self) -> int:
        return 2 * self.dim

    @property
    def p(self) -> int:
        return self.dim

    @property
    def is_linear(self) -> bool:
        return self.drag_coeff == 0.0

    def input_matrix(self, t: float = 0.0) -> np.ndarray:
        B = np.zeros((self.n, self.p))
        B[self.dim:, :] = np.eye(self.dim)
        return B

    def drift(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"state must have dimension {self.n}, got {x.shape}")
        vel = x[self.dim:]
        out = np.zeros(self.n)
        out[: self.dim] = vel
        if self.drag_coeff != 0.0:
            out[self.dim:] = -self.drag_coeff * np.linalg.norm(vel) * vel
        return out

    def drift_jacobian(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = self.dim
        F = np.zeros((self.n, self.n))
        F[:d, d:] = np.eye(d)
        if self.drag_coeff != 0.0:
            vel = x[d:]
            s = np.linalg.norm(vel)
            if s > 0.0:
                # d/dv (-c ||v|| v) = -c (||v|| I + v v^T / ||v||);
                # the limit at v = 0 is the zero matrix.
                F[d:, d:] = -self.drag_coeff * (s * np.eye(d) + np.outer(vel, vel) / s)
        if not np.all(np.isfinite(F)):
            raise NumericalInstabilityError("non-finite Jacobian entries")
        return F

    def measurement(self, x: np.ndarray) -> np.ndarray:
        if self.observation is None:
            raise ConfigError("model has no sensor")
        return self.observation.C @ np.asarray(x, dtype=float)

    def measurement_jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.observation is None:
            raise ConfigError("model has no sensor")
        return self.observation.C


def eval_drift(model, t: float, x: np.ndarray) -> np.ndarray:
    return model.drift(t, x)


def linearize(model, nominal: np.ndarray, t: float = 0.0):
    """First-order expansion f(x) ~ A x + a around ``nominal``.

    ``a = f(nominal) - A @ nominal`` so the expansion is exact at the
    nominal point.
    """
    A = model.drift_jacobian(t, nominal)
    a = model.drift(t, nominal) - A @ np.asarray(nominal, dtype=float)
    return A, a


def measurement_jacobian(model, nominal: np.ndarray) -> np.ndarray:
    H = model.measurement_jacobian(nominal)
    if not np.all(np.isfinite(H)):
        raise NumericalInstabilityError("non-finite Jacobian entries")
    return H


def drift_path(model, path: np.ndarray) -> np.ndarray:
    """Vectorized drift along a path of shape (M, n)."""
    path = np.asarray(path, dtype=float)
    if isinstance(model, DoubleIntegrator):
        d = model.dim
        out = np.zeros_like(path)
        vel = path[:, d:]
        out[:, :d] = vel
        if model.drag_coeff != 0.0:
            out[:, d:] = -model.drag_coeff * np.linalg.norm(vel, axis=1)[:, None] * vel
        return out
    return np.stack([model.drift(0.0, x) for x in path])


def drift_jacobian_path(model, path: np.ndarray) -> np.ndarray:
    """Vectorized drift Jacobian along a path of shape (M, n)."""
    path = np.asarray(path, dtype=float)
    M = path.shape[0]
    if isinstance(model, DoubleIntegrator):
        d = model.dim
        F = np.zeros((M, model.n, model.n))
        F[:, :d, d:] = np.eye(d)
        if model.drag_coeff != 0.0:
            vel = path[:, d:]
            s = np.linalg.norm(vel, axis=1)
            safe = np.where(s > 0.0, s, 1.0)
            outer = vel[:, :, None] * vel[:, None, :] / safe[:, None, None]
            blk = -model.drag_coeff * (s[:, None, None] * np.eye(d) + outer)
            blk[s == 0.0] = 0.0
            F[:, d:, d:] = blk
        if not np.all(np.isfinite(F)):
            raise NumericalInstabilityError("non-finite Jacobian entries")
        return F
    return np.stack([model.drift_jacobian(0.0, x) for x in path])


def linearize_along(model, nominal_path: np.ndarray, grid):
    """Per-knot (A, a) linearization along a trajectory of shape (N+1, n)."""
    nominal_path = np.asarray(nominal_path, dtype=float)
    A = drift_jacobian_path(model, nominal_path)
    a = drift_path(model, nominal_path) - np.einsum("kij,kj->ki", A, nominal_path)
    return A, a
