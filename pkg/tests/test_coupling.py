import math

import numpy as np
import pytest

from syncmrac.coupling import (AllocationPolicy, Allocator, CouplingDesign, allocate, allocation_bracket,
                               augmented_error_derivative, design_coupling, error_derivative, j_pert)
from syncmrac.sim import rk4_step


A3 = -np.diag([1.0, 2.0, 3.0])


def test_block_structure():
    d = CouplingDesign.proportional_integral(A3, 2.0, 1.0)
    assert d.order == 1 and d.n == 3
    np.testing.assert_array_equal(d.A_e[:3, :3], A3)
    np.testing.assert_array_equal(d.A_e[3:, :3], np.eye(3))
    np.testing.assert_array_equal(d.A_e[:, 3:], 0.0)
    np.testing.assert_array_equal(d.B_e, np.vstack([np.eye(3), np.zeros((3, 3))]))


def test_general_rejects_unstable_and_bad_shape():
    with pytest.raises(ValueError, match="Hurwitz"):
        CouplingDesign.general(np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        CouplingDesign.general(A3, np.zeros((3, 4)))


def test_design_coupling_examples():
    d = CouplingDesign.proportional(A3, 1.0)
    np.testing.assert_array_equal(design_coupling(d, np.array([1.0, 0, 0])), [-1.0, 0, 0])
    np.testing.assert_array_equal(design_coupling(d, np.zeros(3)), 0.0)
    pi = CouplingDesign.proportional_integral(A3, 2.0, 1.0)
    got = design_coupling(pi, np.array([1.0, 0, 0, 0.5, 0, 0]))
    np.testing.assert_allclose(got, [-2.5, 0, 0])


def test_allocation_examples():
    b = np.array([0.0, 1.0])
    for U_c in (np.array([1.0, 2.0]), np.array([-3.0, 0.5])):
        u_c, U_m = allocate(AllocationPolicy(1.0), b, U_c)
        assert u_c == 0.0
        np.testing.assert_array_equal(U_m, U_c)
    for mu in (0.0, 0.4):
        u_c, U_m = allocate(AllocationPolicy(mu), b, np.array([5.0, 0.0]))
        assert u_c == 0.0
    u_c, U_m = allocate(AllocationPolicy(0.0), b, np.array([1.0, 2.0]))
    assert u_c == pytest.approx(-2.0)
    np.testing.assert_allclose(U_m, [1.0, 0.0])
    # brute-force scan agrees
    grid = np.linspace(-5, 5, 100001)
    J = [j_pert(AllocationPolicy(0.0), b, np.array([1.0, 2.0]), g) for g in grid[::100]]
    assert grid[::100][int(np.argmin(J))] == pytest.approx(-2.0, abs=1e-2)


def test_policy_validation():
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        AllocationPolicy(1.5)
    with pytest.raises(ValueError):
        AllocationPolicy(0.5, p=3)
    with pytest.raises(ValueError):
        AllocationPolicy(0.5, W=-np.eye(2))
    with pytest.raises(NotImplementedError):
        Allocator(AllocationPolicy(0.5, constrain="blend"), [1.0, 0.0])


def _random_instance(rng):
    n = int(rng.integers(1, 5))
    b = rng.normal(size=n)
    L = rng.normal(size=(n, n))
    W = L @ L.T + 0.1 * np.eye(n)
    return n, b, W, float(rng.uniform()), rng.normal(size=n)


def test_feasibility_all_policies(rng):
    for k in range(600):
        n, b, W, mu, U_c = _random_instance(rng)
        policy = AllocationPolicy(mu, W, (1.0, 2.0, math.inf)[k % 3])
        u_c, U_m = allocate(policy, b, U_c)
        assert np.max(np.abs(U_m - b * u_c - U_c)) <= 1e-12 * (1 + np.max(np.abs(U_c)))


def test_p2_orthogonality_and_local_optimality(rng):
    for _ in range(1000):
        n, b, W, mu, U_c = _random_instance(rng)
        policy = AllocationPolicy(mu, W, 2.0)
        u_c, _ = allocate(policy, b, U_c)
        Wb = W @ b
        resid = (W @ (b * u_c + (1 - mu) * U_c)) @ Wb
        scale = (np.linalg.norm(Wb) ** 2) * (abs(u_c) + np.linalg.norm(U_c)) + 1e-300
        assert abs(resid) <= 1e-9 * scale
        J0 = j_pert(policy, b, U_c, u_c)
        for d in (1e-3, 1e-1, 1.0):
            assert J0 <= j_pert(policy, b, U_c, u_c + d) + 1e-12
            assert J0 <= j_pert(policy, b, U_c, u_c - d) + 1e-12


def test_bracket_contains_minimiser(rng):
    for k in range(300):
        n, b, W, mu, U_c = _random_instance(rng)
        policy = AllocationPolicy(mu, W, (1.0, 2.0, math.inf)[k % 3])
        R = allocation_bracket(policy, b, U_c)
        u_c, _ = allocate(policy, b, U_c)
        assert abs(u_c) <= R * (1 + 1e-12)


def test_allocation_invariance_of_error_dynamics(rng):
    A_m = -np.diag([1.0, 2.0, 3.0]) + 0.1 * rng.normal(size=(3, 3))
    for _ in range(200):
        b = rng.normal(size=3)
        e = rng.normal(size=3)
        U_c = rng.normal(size=3)
        dt = float(rng.normal())
        ref = A_m @ e + U_c + b * dt
        for u_c in rng.normal(size=5) * 3:
            U_m = U_c + b * u_c
            np.testing.assert_allclose(error_derivative(A_m, e, U_m, u_c, b, dt), ref, atol=1e-12)


def test_augmented_error_derivative():
    d = CouplingDesign.proportional(A3, 2.0)
    b = np.array([1.0, 0.0, 0.0])
    np.testing.assert_array_equal(augmented_error_derivative(d, np.zeros(3), np.zeros(3), b, 0.0), 0.0)
    e = np.array([0.3, -0.2, 0.1])
    U_c = design_coupling(d, e)
    np.testing.assert_allclose(augmented_error_derivative(d, e, U_c, b, 0.7),
                               error_derivative(A3, e, U_c + b * 1.3, 1.3, b, 0.7), atol=1e-15)


def test_augmented_error_derivative_pi_blocks(rng):
    d = CouplingDesign.proportional_integral(A3, 2.0, 1.5)
    b = rng.normal(size=3)
    e_I = rng.normal(size=6)
    U_c = design_coupling(d, e_I)
    got = augmented_error_derivative(d, e_I, U_c, b, 0.4)
    e, ie = e_I[:3], e_I[3:]
    np.testing.assert_allclose(got[:3], A3 @ e + (-2.0 * e - 1.5 * ie) + b * 0.4, atol=1e-14)
    np.testing.assert_allclose(got[3:], e, atol=0)


def _simulate_error(design, e0, T, h):
    """Free coupled error dynamics ``e_I' = (A_e - B_e K_e) e_I``."""
    M = design.closed_loop
    f = lambda t, s: M @ s
    s = np.concatenate([e0, np.zeros(M.shape[0] - len(e0))])
    out = [s]
    for i in range(int(round(T / h))):
        s = rk4_step(f, s, i * h, h)
        out.append(s)
    return np.arange(len(out)) * h, np.array(out)


@pytest.mark.parametrize("k_P", [1.0, 10.0, 100.0])
def test_guideline_p_coupling_bandwidth(k_P):
    lam = -0.5
    d = CouplingDesign.proportional([[lam]], k_P)
    rate = k_P - lam
    t, s = _simulate_error(d, np.array([1.0]), 5.0 / k_P, 1e-3 / k_P)
    e = s[:, 0]
    measured = -np.polyfit(t[1:], np.log(e[1:]), 1)[0]
    assert measured == pytest.approx(rate, rel=0.01)


def test_guideline_pi_coupling_natural_frequency():
    k_I, k_P = 25.0, 1.0
    d = CouplingDesign.proportional_integral([[0.0]], k_P, k_I)
    t, s = _simulate_error(d, np.array([1.0]), 10.0, 1e-4)
    e = s[:, 0]
    up = np.where((e[:-1] < 0) & (e[1:] >= 0))[0]
    period = np.mean(np.diff(t[up]))
    # the damped frequency sits below sqrt(k_I) by sqrt(1 - zeta^2); zeta = k_P / (2 sqrt(k_I)) = 0.1
    assert 2 * np.pi / period == pytest.approx(math.sqrt(k_I), rel=0.05)
