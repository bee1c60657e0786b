"""Small dense linear algebra and scalar convex minimisation.

Everything here works on plain ``numpy`` arrays. Dimensions in this package
never exceed a handful of states, so the direct methods below (Kronecker
vectorisation, Newton iteration on the matrix sign function) are preferred
over anything clever.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class SolverError(ArithmeticError):
    """A matrix equation has no (stabilising) solution or the solve failed."""


@dataclass(frozen=True)
class CareSolution:
    P: np.ndarray
    K: np.ndarray


def _norm(M) -> float:
    return float(np.linalg.norm(M, ord="fro"))


def lyapunov_residual(A, P, Q) -> float:
    return _norm(A.T @ P + P @ A + Q)


def solve_lyapunov(A, Q) -> np.ndarray:
    """Solve ``A.T @ P + P @ A + Q = 0`` for symmetric ``P``.

    The equation is vectorised column-major, giving the ``n**2`` linear
    system ``(I kron A.T + A.T kron I) vec(P) = -vec(Q)``.

    Raises
    ------
    SolverError
        If the Kronecker system is singular (``A`` has eigenvalues that
        mirror each other across the imaginary axis, e.g. not Hurwitz
        with a zero eigenvalue) or the residual check fails.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise ValueError(f"expected square matrices of equal size, got {A.shape} and {Q.shape}")
    eye = np.eye(n)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        vecP = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SolverError("singular Kronecker system in Lyapunov solve") from exc
    P = vecP.reshape((n, n), order="F")
    P = 0.5 * (P + P.T)
    if not np.all(np.isfinite(P)):
        raise SolverError("non-finite Lyapunov solution")
    # the symmetrised P must still satisfy the equation; near-singular K shows up here
    if lyapunov_residual(A, P, Q) > 1e-10 * (1.0 + _norm(Q)) * max(1.0, _norm(P)):
        raise SolverError("Lyapunov residual too large; A is (close to) non-Hurwitz")
    return P


def is_positive_definite(M) -> bool:
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def is_hurwitz(A) -> bool:
    """Hurwitz test via Lyapunov: ``A`` is stable iff ``A'P + PA = -I`` has ``P > 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    try:
        P = solve_lyapunov(A, np.eye(A.shape[0]))
    except SolverError:
        return False
    return is_positive_definite(P)


def controllability_rank(A, b) -> int:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    n = A.shape[0]
    cols = [b]
    for _ in range(n - 1):
        cols.append(A @ cols[-1])
    C = np.hstack(cols)
    return int(np.linalg.matrix_rank(C))


def care_residual(A, b, Q, R, P) -> float:
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    return _norm(A.T @ P + P @ A - (P @ b) @ (b.T @ P) / R + Q)


def solve_care(A, b, Q, R, max_iter: int = 100, tol: float = 1e-12) -> CareSolution:
    """Stabilising solution of ``A'P + PA - P b R^-1 b' P + Q = 0``.

    Uses the Newton iteration ``Z <- (Z/c + c Z^-1)/2`` (determinant
    scaling) for the sign of the Hamiltonian. The stable invariant subspace
    ``[I; P]`` is the null space of ``sign(H) + I``. A couple of
    Newton-Kleinman sweeps polish the result when the residual is not yet
    at the ``1e-8 (1 + |P|)`` level.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = float(np.asarray(R, dtype=float).reshape(()))
    if R <= 0:
        raise ValueError("R must be positive")
    n = A.shape[0]
    G = (b @ b.T) / R
    H = np.block([[A, -G], [-Q, -A.T]])

    Z = H.copy()
    for _ in range(max_iter):
        try:
            Zinv = np.linalg.inv(Z)
            _, logdet = np.linalg.slogdet(Z)
        except np.linalg.LinAlgError as exc:
            raise SolverError("Hamiltonian has eigenvalues on the imaginary axis") from exc
        c = math.exp(logdet / (2 * n))
        Z_next = 0.5 * (Z / c + c * Zinv)
        step = _norm(Z_next - Z)
        Z = Z_next
        if step <= tol * max(1.0, _norm(Z)):
            break
    else:
        raise SolverError(f"matrix sign iteration did not converge in {max_iter} steps")

    W11, W12 = Z[:n, :n], Z[:n, n:]
    W21, W22 = Z[n:, :n], Z[n:, n:]
    lhs = np.vstack([W12, W22 + np.eye(n)])
    rhs = -np.vstack([W11 + np.eye(n), W21])
    P = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    P = 0.5 * (P + P.T)

    for _ in range(3):
        if care_residual(A, b, Q, R, P) <= 1e-10 * (1.0 + _norm(P)):
            break
        Acl = A - G @ P
        P = solve_lyapunov(Acl, Q + P @ G @ P)

    K = (b.T @ P).ravel() / R
    if not np.all(np.isfinite(P)) or care_residual(A, b, Q, R, P) > 1e-8 * (1.0 + _norm(P)):
        raise SolverError("no stabilising Riccati solution found")
    if not is_hurwitz(A - b @ K.reshape(1, -1)):
        raise SolverError("Riccati solution is not stabilising")
    return CareSolution(P=P, K=K)


def pseudo_left_inverse(b) -> np.ndarray:
    """``b' / (b'b)``, the left inverse of a nonzero column vector."""
    b = np.asarray(b, dtype=float).ravel()
    bb = float(b @ b)
    if not bb > 0.0:
        raise ValueError("pseudo-inverse of a zero vector is undefined")
    return b / bb


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def minimize_scalar_convex(f: Callable[[float], float], bracket: tuple[float, float],
                           tol: float = 1e-10) -> float:
    """Golden-section search for the minimiser of a convex ``f`` on ``bracket``.

    The interval contracts by the golden ratio each step until its width is
    at most ``2 * tol``; the midpoint of the final interval is returned,
    which also settles ties on flat minima.
    """
    a, b = float(bracket[0]), float(bracket[1])
    if a > b:
        a, b = b, a
    if tol <= 0:
        raise ValueError("tol must be positive")
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > 2.0 * tol:
        if not (math.isfinite(fc) and math.isfinite(fd)):
            raise FloatingPointError(f"non-finite objective near u={c if not math.isfinite(fc) else d}")
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        # golden points collapse onto the bracket ends in floating point
        if b - a <= 4 * np.finfo(float).eps * max(abs(a), abs(b), 1.0):
            break
    return 0.5 * (a + b)
