"""Plant, baseline controller, virtual reference model and blend coordinates.

States are in radians internally. For the F-16 short-period preset the plant
input (elevator) is in degrees and the ``b`` column maps degrees to rad/s, so
the input never needs converting; only the angle-of-attack command does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .matops import controllability_rank, is_hurwitz, solve_care


def _col(v, n=None) -> np.ndarray:
    v = np.asarray(v, dtype=float).ravel()
    if n is not None and v.shape != (n,):
        raise ValueError(f"expected a vector of length {n}, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class PlantModel:
    """Known LTI part of ``x' = A x + b (u + Delta) + b_r r``, ``y = c'x``."""

    A: np.ndarray
    b: np.ndarray
    b_r: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", _col(self.b, n))
        object.__setattr__(self, "b_r", _col(self.b_r, n))
        object.__setattr__(self, "c", _col(self.c, n))
        if not np.all(np.isfinite(A)):
            raise ValueError("A has non-finite entries")
        if controllability_rank(A, self.b) != n:
            raise ValueError("(A, b) is not controllable")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def open_loop_derivative(self, x, u, r, delta):
        """``A x + b (u + Delta) + b_r r``."""
        return self.A @ x + self.b * (u + delta) + self.b_r * r


@dataclass(frozen=True)
class UncertaintyModel:
    """Matched uncertainty ``Delta = Phi(x)' theta``.

    Only the simulator may read ``theta_true``; controller code receives the
    basis alone.
    """

    basis: Callable[[np.ndarray], np.ndarray]
    theta_true: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        theta = _col(self.theta_true)
        if theta.size < 1:
            raise ValueError("need at least one uncertainty parameter")
        object.__setattr__(self, "theta_true", theta)

    @property
    def p(self) -> int:
        return self.theta_true.size

    def delta(self, x) -> float:
        return float(self.basis(x) @ self.theta_true)


@dataclass(frozen=True)
class LinearBasis:
    """``Phi(x) = x[indices]``; all states when ``indices`` is None."""

    indices: tuple[int, ...] | None = None

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x.copy() if self.indices is None else x[list(self.indices)]


@dataclass(frozen=True)
class BaselineGains:
    """``u_base = -k_m'x - k_r r``, giving ``A_m = A - b k_m'`` and ``b_m = -b k_r + b_r``."""

    k_m: np.ndarray
    k_r: float
    A_m: np.ndarray = field(repr=False)
    b_m: np.ndarray = field(repr=False)

    @classmethod
    def from_gains(cls, plant: PlantModel, k_m, k_r: float = 0.0) -> "BaselineGains":
        k_m = _col(k_m, plant.n)
        A_m = plant.A - np.outer(plant.b, k_m)
        if not is_hurwitz(A_m):
            raise ValueError("A - b k_m' is not Hurwitz")
        b_m = -plant.b * float(k_r) + plant.b_r
        return cls(k_m=k_m, k_r=float(k_r), A_m=A_m, b_m=b_m)

    @classmethod
    def from_lqr(cls, plant: PlantModel, Q, R, k_r: float = 0.0) -> "BaselineGains":
        sol = solve_care(plant.A, plant.b, Q, R)
        return cls.from_gains(plant, sol.K, k_r)

    @staticmethod
    def unity_dc_gain_kr(plant: PlantModel, k_m) -> float:
        """``k_r`` making ``c'(sI - A_m)^-1 b_m`` equal one at ``s = 0``."""
        A_m = plant.A - np.outer(plant.b, _col(k_m, plant.n))
        g_b = float(plant.c @ np.linalg.solve(-A_m, plant.b))
        g_r = float(plant.c @ np.linalg.solve(-A_m, plant.b_r))
        if g_b == 0.0:
            raise ValueError("input has no DC path to the output; k_r cannot fix the gain")
        return (g_r - 1.0) / g_b

    def u_base(self, x, r) -> float:
        return float(-self.k_m @ x - self.k_r * r)


def plant_derivative(plant: PlantModel, baseline: BaselineGains, x, u_ad, u_c, r, delta):
    """Closed-loop plant rate ``A_m x + b_m r + b (u_c - Delta_tilde)``.

    ``Delta_tilde = -u_ad - Delta`` is the cancellation error.
    """
    delta_tilde = -u_ad - delta
    return baseline.A_m @ x + baseline.b_m * r + plant.b * (u_c - delta_tilde)


def virtual_derivative(baseline: BaselineGains, x_m, U_m, r):
    return baseline.A_m @ x_m + baseline.b_m * r + U_m


def ideal_reference_derivative(baseline: BaselineGains, x_id, r):
    return baseline.A_m @ x_id + baseline.b_m * r


@dataclass(frozen=True)
class BlendCoordinates:
    e: np.ndarray
    z: np.ndarray
    mu: float


def _check_mu(mu: float) -> float:
    mu = float(mu)
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"weighting factor mu must lie in [0, 1], got {mu}")
    return mu


def to_blend(x, x_m, mu: float) -> BlendCoordinates:
    """Error ``e = x_m - x`` and weighted average ``z = mu x + (1 - mu) x_m``."""
    mu = _check_mu(mu)
    x = np.asarray(x, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    return BlendCoordinates(e=x_m - x, z=mu * x + (1.0 - mu) * x_m, mu=mu)


def from_blend(coords: BlendCoordinates):
    mu = _check_mu(coords.mu)
    x = coords.z - (1.0 - mu) * coords.e
    x_m = coords.z + mu * coords.e
    return x, x_m


# F-16 short-period model trimmed at V_T = 502 ft/s, sea level, 0.35 c-bar.
# States [alpha (rad), q (rad/s), integral of alpha tracking error], input elevator (deg).
F16_A = np.array([[-1.0189, 0.9051, 0.0],
                  [0.8223, -1.0774, 0.0],
                  [1.0, 0.0, 0.0]])
F16_B = np.array([-0.0022, -0.1756, 0.0])
F16_BR = np.array([0.0, 0.0, -1.0])
F16_C = np.array([1.0, 0.0, 0.0])
F16_THETA = np.array([-4.6839, -9.8197, 1.0])
F16_BUMP_CENTER = math.pi / 90.0
F16_BUMP_WIDTH = 0.0233


def f16_basis(x) -> np.ndarray:
    alpha, q = x[0], x[1]
    bump = math.exp(-((alpha - F16_BUMP_CENTER) ** 2) / (2.0 * F16_BUMP_WIDTH ** 2))
    return np.array([alpha, q, bump])


def f16_short_period() -> tuple[PlantModel, UncertaintyModel]:
    plant = PlantModel(A=F16_A, b=F16_B, b_r=F16_BR, c=F16_C)
    unc = UncertaintyModel(basis=f16_basis, theta_true=F16_THETA, name="f16")
    return plant, unc
