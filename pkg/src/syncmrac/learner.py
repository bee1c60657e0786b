"""Regressor filter and feature extender for online model learning.

With ``x_tilde(0) = 0`` the filtered regressor satisfies
``x_tilde = Phi_f' theta``; integrating through a stable extender then gives
the measurable linear regression ``eta = Omega theta``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FeatureExtender:
    """Fixed extender policy: ``A_Y = -forgetting I``, ``B_Y = Phi_f`` and linear ``M``.

    ``q`` equals the number of parameters ``p`` with the default
    regressor-driven update factor. ``M`` defaults to the identity.
    """

    p: int
    forgetting: float = 0.1
    M: np.ndarray | None = None

    def __post_init__(self):
        if self.forgetting < 0:
            raise ValueError("forgetting factor must be non-negative (A_Y + A_Y' <= 0)")
        M = np.eye(self.p) if self.M is None else np.atleast_2d(np.asarray(self.M, dtype=float))
        if M.shape[1] != self.p or M.shape[0] < M.shape[1]:
            raise ValueError("M must be square or tall with p columns")
        object.__setattr__(self, "M", M)

    @property
    def q(self) -> int:
        return self.p

    @property
    def A_Y(self) -> np.ndarray:
        return -self.forgetting * np.eye(self.q)


def regressor_filter_derivative(A_o, b, Phi, Phi_f) -> np.ndarray:
    """Rate of ``Phi_f'`` (n x p): ``A_o Phi_f' - b Phi'``."""
    return A_o @ Phi_f.T - np.outer(b, Phi)


def feature_extender_derivative(A_Y, B_Y, Omega, eta, Phi_f, x_tilde):
    """``(Omega', eta') = (A_Y Omega + B_Y Phi_f', A_Y eta + B_Y x_tilde)``."""
    return A_Y @ Omega + B_Y @ Phi_f.T, A_Y @ eta + B_Y @ x_tilde


def target_and_prediction(extender: FeatureExtender, Omega, eta, theta_hat):
    """``Y = M eta``, ``Y_hat = M Omega theta_hat`` and ``Y_tilde = Y_hat - Y``."""
    Y = extender.M @ eta
    Y_hat = extender.M @ (Omega @ theta_hat)
    return Y, Y_hat, Y_hat - Y


def excitation_rank(extender: FeatureExtender, Omega) -> tuple[int, float]:
    """Numerical rank of ``M[Omega]`` and the smallest eigenvalue of its Gram matrix."""
    MO = extender.M @ Omega
    G = MO.T @ MO
    lam = np.linalg.eigvalsh(0.5 * (G + G.T))
    tr = float(np.trace(G))
    if tr <= 0.0:
        return 0, 0.0
    return int(np.sum(lam > 1e-10 * tr)), float(max(lam[0], 0.0))
