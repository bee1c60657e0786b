from dataclasses import replace

import numpy as np
import pytest

from syncmrac.acceptance import learning_demo_config
from syncmrac.experiment import GridCell
from syncmrac.learner import (FeatureExtender, excitation_rank, feature_extender_derivative,
                              regressor_filter_derivative, target_and_prediction)
from syncmrac.observer import ObserverConfig
from syncmrac.sim import BREGMAN, ClosedLoop, rk4_step


def test_regressor_filter_examples():
    A_o = -10 * np.eye(3)
    b = np.array([0.0, 1.0, 0.5])
    np.testing.assert_array_equal(regressor_filter_derivative(A_o, b, np.zeros(2), np.zeros((2, 3))), 0.0)
    Phi = np.array([2.0, -1.0])
    Phi_f_ss = (-np.outer(b, Phi) / 10.0).T
    np.testing.assert_allclose(regressor_filter_derivative(A_o, b, Phi, Phi_f_ss), 0.0, atol=1e-15)


def test_extender_examples(rng):
    ext = FeatureExtender(3, forgetting=0.0)
    dO, de = feature_extender_derivative(ext.A_Y, np.zeros((3, 2)), np.zeros((3, 3)), np.zeros(3),
                                         np.zeros((3, 2)), np.zeros(2))
    np.testing.assert_array_equal(dO, 0.0)
    np.testing.assert_array_equal(de, 0.0)
    Phi_f = rng.normal(size=(3, 2))
    dO, _ = feature_extender_derivative(ext.A_Y, Phi_f, np.zeros((3, 3)), np.zeros(3), Phi_f, np.zeros(2))
    np.testing.assert_allclose(dO, dO.T)
    assert np.min(np.linalg.eigvalsh(dO)) >= -1e-14
    with pytest.raises(ValueError):
        FeatureExtender(2, forgetting=-1.0)


def test_target_and_prediction(rng):
    ext = FeatureExtender(3)
    z = np.zeros(3)
    for v in target_and_prediction(ext, np.zeros((3, 3)), z, rng.normal(size=3)):
        np.testing.assert_array_equal(v, 0.0)
    Omega, eta, th = rng.normal(size=(3, 3)), rng.normal(size=3), rng.normal(size=3)
    Y, Y_hat, Y_t = target_and_prediction(ext, Omega, eta, th)
    np.testing.assert_allclose(Y, eta)
    np.testing.assert_allclose(Y_hat, Omega @ th)
    np.testing.assert_allclose(Y_t, Omega @ th - eta)
    _, _, Y_t = target_and_prediction(ext, Omega, Omega @ th, th)
    np.testing.assert_allclose(Y_t, 0.0, atol=1e-15)


def test_excitation_rank():
    ext = FeatureExtender(3)
    assert excitation_rank(ext, np.zeros((3, 3))) == (0, 0.0)
    rank, lam = excitation_rank(ext, np.eye(3))
    assert rank == 3 and lam == pytest.approx(1.0)
    assert excitation_rank(ext, np.diag([1.0, 1.0, 0.0]))[0] == 2


def _integrate(cfg, T):
    loop = ClosedLoop(cfg)
    s = loop.s0.copy()
    h = cfg.h
    out = [s]
    for i in range(int(round(T / h))):
        r = cfg.command.rad((i + 0.5) * h)
        s = rk4_step(lambda t, z: loop.rate(t, z, r), s, i * h, h)
        out.append(s)
    return loop, out


@pytest.mark.parametrize("which", ["demo", "f16"])
def test_filter_identities_along_trajectory(which, table1):
    if which == "demo":
        cfg = learning_demo_config(5.0)
    else:
        base = table1.sim_config(GridCell(10.0, 0.5))
        cfg = replace(base, mode=BREGMAN, observer=ObserverConfig(20.0, 3), extender=FeatureExtender(3, 0.1),
                      duration=5.0)
    loop, states = _integrate(cfg, 5.0)
    theta = cfg.uncertainty.theta_true
    worst_f, worst_eta, sup = 0.0, 0.0, 0.0
    for s in states:
        d = loop.layout.unpack(s)
        x_tilde = d["xhat"] - d["x"]
        worst_f = max(worst_f, np.max(np.abs(x_tilde - d["Phif"].T @ theta)))
        worst_eta = max(worst_eta, np.max(np.abs(d["eta"] - d["Omega"] @ theta)))
        sup = max(sup, np.max(np.abs(d["Omega"])))
    tol = 1e-8 * (1 + np.linalg.norm(theta))
    assert worst_f <= tol
    assert worst_eta <= 1e-9
    assert np.isfinite(sup)
