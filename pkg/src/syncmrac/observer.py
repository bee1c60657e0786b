"""State observer and instantaneous estimate of the lumped uncertainty.

The observer is a certainty-equivalent plant copy driven by the measured
state, so the observation error ``x_tilde = x_hat - x`` obeys
``x_tilde' = A_o x_tilde - b Delta``: a low-pass filter of the uncertainty.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .matops import is_hurwitz, pseudo_left_inverse

UNITY = "unity"
LITERAL = "literal"


@dataclass(frozen=True)
class ObserverConfig:
    """Observer gain ``A_o`` (default ``-omega_f I``) and the estimate scaling mode.

    ``mode="unity"`` scales the recovered filtered uncertainty by ``-A_o`` so
    the estimate is ``omega_f / (s + omega_f)`` applied to ``Delta`` (unit DC
    gain). ``mode="literal"`` returns the unscaled filter output, whose DC
    gain is ``1 / omega_f``.
    """

    omega_f: float
    n: int
    A_o: np.ndarray | None = None
    mode: str = UNITY
    _diagonal: bool = field(default=True, init=False, repr=False)

    def __post_init__(self):
        if not self.omega_f > 0:
            raise ValueError("filter bandwidth omega_f must be positive")
        if self.mode not in (UNITY, LITERAL):
            raise ValueError(f"observer mode must be {UNITY!r} or {LITERAL!r}")
        if self.A_o is None:
            object.__setattr__(self, "A_o", -float(self.omega_f) * np.eye(self.n))
        else:
            A_o = np.atleast_2d(np.asarray(self.A_o, dtype=float))
            if A_o.shape != (self.n, self.n):
                raise ValueError(f"A_o must be {self.n} x {self.n}")
            if not is_hurwitz(A_o):
                raise ValueError("observer matrix A_o must be Hurwitz")
            object.__setattr__(self, "A_o", A_o)
            object.__setattr__(self, "_diagonal", bool(np.array_equal(A_o, -self.omega_f * np.eye(self.n))))

    def homogeneous(self, x_tilde0, t: float) -> np.ndarray:
        """Free response ``exp(A_o t) x_tilde(0)``."""
        if self._diagonal:
            return np.exp(-self.omega_f * t) * x_tilde0
        return expm(self.A_o * t) @ x_tilde0


def check_bandwidths(A_m, omega_e: float, omega_f: float) -> bool:
    """Warn unless ``max|lambda(A_m)| < omega_e < omega_f``; returns whether it holds."""
    slow = float(np.max(np.abs(np.linalg.eigvals(A_m))))
    ok = slow < omega_e < omega_f
    if not ok:
        warnings.warn(
            f"bandwidth ordering violated: max|lambda(A_m)|={slow:.3g}, "
            f"omega_e={omega_e:.3g}, omega_f={omega_f:.3g}",
            RuntimeWarning, stacklevel=2)
    return ok


def observer_derivative(A_o, A, b, x, x_hat, u, b_r=None, r=0.0):
    """``A x + b u + b_r r + A_o (x_hat - x)``."""
    rate = A @ x + b * u + A_o @ (x_hat - x)
    if b_r is not None:
        rate = rate + b_r * r
    return rate


def estimate_uncertainty(config: ObserverConfig, b, x_tilde, x_tilde0, t: float) -> float:
    """Recover ``Delta_hat`` from the observation error by left-inverting ``b``."""
    known = config.homogeneous(np.asarray(x_tilde0, float), t) - np.asarray(x_tilde, float)
    if config.mode == UNITY:
        known = -config.A_o @ known
    return float(pseudo_left_inverse(b) @ known)
