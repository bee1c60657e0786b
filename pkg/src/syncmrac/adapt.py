"""Adaptation laws and the Lyapunov function used to certify them.

The parameter estimate follows a (mirror-descent style) gradient flow

    theta_hat' = -[hess psi(theta_hat)]^-1 [Phi e_I' P B_e b + M[Omega]' hess phi(Y_hat) Y_tilde]

where ``psi`` sets the learning-rate geometry and ``phi`` the regression
loss. With ``phi`` disabled this is the usual direct MRAC law.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matops import is_positive_definite, solve_lyapunov


@dataclass(frozen=True)
class QuadraticPotential:
    """``f(x) = x' H x / 2`` for symmetric positive definite ``H``."""

    H: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if not is_positive_definite(H):
            raise ValueError("potential Hessian must be symmetric positive definite")
        object.__setattr__(self, "H", H)

    @classmethod
    def from_rate(cls, Gamma) -> "QuadraticPotential":
        """``x' Gamma^-1 x / 2``, whose inverse Hessian is the learning rate ``Gamma``."""
        return cls(np.linalg.inv(np.atleast_2d(np.asarray(Gamma, dtype=float))))

    def value(self, x) -> float:
        return 0.5 * float(x @ self.H @ x)

    def grad(self, x) -> np.ndarray:
        return self.H @ x

    def hess(self, x) -> np.ndarray:
        return self.H


def bregman_divergence(potential, a, b) -> float:
    """``D(a, b) = f(a) - f(b) - grad f(b)'(a - b)``."""
    return potential.value(a) - potential.value(b) - float(potential.grad(b) @ (a - b))


@dataclass(frozen=True)
class AdaptationConfig:
    Gamma: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    psi: QuadraticPotential
    phi: QuadraticPotential | None = None

    @classmethod
    def build(cls, Gamma, Q, closed_loop, phi_metric=None, psi=None) -> "AdaptationConfig":
        """Solve for ``P`` from the closed-loop augmented error matrix ``A_e - B_e K_e``.

        ``psi`` defaults to ``x' Gamma^-1 x / 2``; ``phi_metric=None`` disables
        the regression term.
        """
        Gamma = np.atleast_2d(np.asarray(Gamma, dtype=float))
        if not is_positive_definite(Gamma):
            raise ValueError("Gamma must be symmetric positive definite")
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if Q.shape != closed_loop.shape:
            raise ValueError(f"Q must be {closed_loop.shape}, got {Q.shape}")
        P = solve_lyapunov(closed_loop, Q)
        psi = QuadraticPotential.from_rate(Gamma) if psi is None else psi
        phi = None if phi_metric is None else QuadraticPotential(phi_metric)
        return cls(Gamma=Gamma, Q=Q, P=P, psi=psi, phi=phi)


def direct_update(config: AdaptationConfig, Phi, e_I, B_e, b) -> np.ndarray:
    """``-Gamma Phi e_I' P B_e b``."""
    s = float(e_I @ (config.P @ (B_e @ b)))
    return -config.Gamma @ (Phi * s)


def bregman_update(config: AdaptationConfig, Phi, e_I, B_e, b, M_Omega=None, Y_tilde=None,
                   Y_hat=None, theta_hat=None) -> np.ndarray:
    grad = Phi * float(e_I @ (config.P @ (B_e @ b)))
    if config.phi is not None and M_Omega is not None:
        grad = grad + M_Omega.T @ (config.phi.hess(Y_hat) @ Y_tilde)
    return -np.linalg.solve(config.psi.hess(theta_hat), grad)


def lyapunov_value(config: AdaptationConfig, e_I, theta, theta_hat) -> tuple[float, float, float]:
    """``(V, V_e, V_theta)`` with ``V_e = e_I' P e_I / 2`` and ``V_theta = D_psi(theta, theta_hat)``."""
    e_I = np.asarray(e_I, dtype=float)
    V_e = 0.5 * float(e_I @ config.P @ e_I)
    V_th = bregman_divergence(config.psi, np.asarray(theta, float), np.asarray(theta_hat, float))
    return V_e + V_th, V_e, V_th
