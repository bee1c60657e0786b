"""Coupling-input design and its allocation between plant and virtual model."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .matops import is_hurwitz, is_positive_definite, minimize_scalar_convex


@dataclass(frozen=True)
class CouplingDesign:
    """State feedback ``U_c = -K_e e_I`` on the integral-augmented error.

    ``e_I`` stacks ``e, int e, ..., int^l e``. ``A_e`` has ``A_m`` in the top
    left block and identity blocks on the sub-diagonal (chained integrators);
    ``B_e`` injects into the top block only.
    """

    order: int
    K_e: np.ndarray
    A_e: np.ndarray
    B_e: np.ndarray

    @classmethod
    def general(cls, A_m, K_e, check: bool = True) -> "CouplingDesign":
        A_m = np.atleast_2d(np.asarray(A_m, dtype=float))
        n = A_m.shape[0]
        K_e = np.atleast_2d(np.asarray(K_e, dtype=float))
        if K_e.shape[0] != n or K_e.shape[1] % n:
            raise ValueError(f"K_e must be {n} x {n}(l+1), got {K_e.shape}")
        order = K_e.shape[1] // n - 1
        N = n * (order + 1)
        A_e = np.zeros((N, N))
        A_e[:n, :n] = A_m
        for i in range(order):
            A_e[(i + 1) * n:(i + 2) * n, i * n:(i + 1) * n] = np.eye(n)
        B_e = np.zeros((N, n))
        B_e[:n, :] = np.eye(n)
        design = cls(order=order, K_e=K_e, A_e=A_e, B_e=B_e)
        if check and not is_hurwitz(design.closed_loop):
            raise ValueError("A_e - B_e K_e is not Hurwitz")
        return design

    @classmethod
    def proportional(cls, A_m, k_P: float) -> "CouplingDesign":
        n = np.atleast_2d(A_m).shape[0]
        return cls.general(A_m, float(k_P) * np.eye(n))

    @classmethod
    def proportional_integral(cls, A_m, k_P: float, k_I: float) -> "CouplingDesign":
        n = np.atleast_2d(A_m).shape[0]
        return cls.general(A_m, np.hstack([float(k_P) * np.eye(n), float(k_I) * np.eye(n)]))

    @property
    def n(self) -> int:
        return self.K_e.shape[0]

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A_e - self.B_e @ self.K_e


def design_coupling(design: CouplingDesign, e_I) -> np.ndarray:
    return -design.K_e @ np.asarray(e_I, dtype=float)


def augmented_error_derivative(design: CouplingDesign, e_I, U_c, b, delta_tilde) -> np.ndarray:
    """``A_e e_I + B_e (U_c + b Delta_tilde)``."""
    return design.A_e @ e_I + design.B_e @ (np.asarray(U_c) + np.asarray(b) * delta_tilde)


def error_derivative(A_m, e, U_m, u_c, b, delta_tilde) -> np.ndarray:
    """Unaugmented error rate ``A_m e + U_m - b u_c + b Delta_tilde``."""
    return A_m @ e + U_m - b * u_c + b * delta_tilde


@dataclass(frozen=True)
class AllocationPolicy:
    """Pointwise minimisation of ``|W (b u_c + (1 - mu) U_c)|_p``.

    ``constrain="blend"`` (prescribing the blended dynamics instead of the
    error dynamics) is accepted by the constructor for forward compatibility
    but is not implemented.
    """

    mu: float
    W: np.ndarray | None = None
    p: float = 2.0
    constrain: str = "error"

    def __post_init__(self):
        mu = float(self.mu)
        if not 0.0 <= mu <= 1.0:
            raise ValueError(f"weighting factor mu must lie in [0, 1], got {mu}")
        object.__setattr__(self, "mu", mu)
        p = float(self.p)
        if p not in (1.0, 2.0, math.inf):
            raise ValueError(f"norm exponent p must be 1, 2 or inf, got {self.p}")
        object.__setattr__(self, "p", p)
        if self.W is not None:
            W = np.atleast_2d(np.asarray(self.W, dtype=float))
            if not is_positive_definite(W):
                raise ValueError("allocation weight W must be symmetric positive definite")
            object.__setattr__(self, "W", W)
        if self.constrain not in ("error", "blend"):
            raise ValueError(f"unknown allocation constraint {self.constrain!r}")

    def weight(self, n: int) -> np.ndarray:
        return np.eye(n) if self.W is None else self.W


def j_pert(policy: AllocationPolicy, b, U_c, u_c: float) -> float:
    """Blended-dynamics perturbation cost after eliminating ``U_m``."""
    b = np.asarray(b, dtype=float)
    W = policy.weight(b.size)
    return float(np.linalg.norm(W @ (b * u_c + (1.0 - policy.mu) * np.asarray(U_c)), ord=policy.p))


def allocation_bracket(policy: AllocationPolicy, b, U_c) -> float:
    """Half-width ``R`` with every minimiser of ``j_pert`` inside ``[-R, R]``.

    From ``|W b u| - |(1-mu) W U_c| <= J(u) <= J(0) = |(1-mu) W U_c|``.
    """
    W = policy.weight(len(b))
    wb = float(np.linalg.norm(W @ b, ord=policy.p))
    wu = float(np.linalg.norm(W @ U_c, ord=policy.p))
    return 2.0 * (1.0 - policy.mu) * wu / wb


class Allocator:
    """``allocate`` bound to a fixed policy and ``b``.

    For ``p = 2`` the optimum is linear in ``U_c``,
    ``u_c = -(1 - mu) (b'W'Wb)^-1 b'W'W U_c``, so the row gain is cached.
    """

    def __init__(self, policy: AllocationPolicy, b):
        b = np.asarray(b, dtype=float)
        if not np.any(b):
            raise ValueError("control effectiveness b must be nonzero")
        if policy.constrain != "error":
            raise NotImplementedError("allocation under a blended-dynamics constraint is not implemented")
        self.policy = policy
        self.b = b
        self.gain = None
        if policy.mu == 1.0:
            self.gain = np.zeros_like(b)
        elif policy.p == 2.0:
            W = policy.weight(b.size)
            Wb = W @ b
            self.gain = -(1.0 - policy.mu) * (W.T @ Wb) / float(Wb @ Wb)

    def __call__(self, U_c) -> tuple[float, np.ndarray]:
        U_c = np.asarray(U_c, dtype=float)
        if self.gain is not None:
            u_c = float(self.gain @ U_c)
        else:
            R = allocation_bracket(self.policy, self.b, U_c)
            if R == 0.0:
                u_c = 0.0
            else:
                u_c = minimize_scalar_convex(lambda u: j_pert(self.policy, self.b, U_c, u),
                                             (-R, R), tol=1e-12 * R)
        return u_c, U_c + self.b * u_c


def allocate(policy: AllocationPolicy, b, U_c) -> tuple[float, np.ndarray]:
    """Split ``U_c`` into plant input ``u_c`` and virtual input ``U_m = U_c + b u_c``."""
    return Allocator(policy, b)(U_c)
