import numpy as np
import pytest

from syncmrac.model import (BaselineGains, BlendCoordinates, LinearBasis, PlantModel,
                            UncertaintyModel, from_blend, ideal_reference_derivative,
                            plant_derivative, to_blend, virtual_derivative)


def test_plant_rejects_uncontrollable():
    with pytest.raises(ValueError, match="controllable"):
        PlantModel(A=np.eye(2), b=[1.0, 0.0], b_r=[0.0, 0.0], c=[1.0, 0.0])


def test_plant_rejects_bad_shapes():
    with pytest.raises(ValueError):
        PlantModel(A=np.zeros((2, 3)), b=[1.0, 0.0], b_r=[0.0, 0.0], c=[1.0, 0.0])
    with pytest.raises(ValueError):
        PlantModel(A=np.eye(2), b=[1.0, 0.0, 1.0], b_r=[0.0, 0.0], c=[1.0, 0.0])


def test_baseline_rejects_non_hurwitz(f16):
    with pytest.raises(ValueError, match="Hurwitz"):
        BaselineGains.from_gains(f16[0], np.zeros(3))


def test_uncertainty_basics(f16):
    _, unc = f16
    assert unc.p == 3
    x = np.array([np.pi / 90, 0.0, 0.0])
    # the Gaussian bump peaks at alpha = 2 deg
    assert unc.delta(x) == pytest.approx(-4.6839 * np.pi / 90 + 1.0)
    assert np.all(np.isfinite(unc.basis(np.array([10.0, -5.0, 0.0]))))
    with pytest.raises(ValueError):
        UncertaintyModel(LinearBasis(), np.array([]))


def test_plant_derivative_trivial(f16, f16_baseline):
    plant, unc = f16
    z = np.zeros(3)
    np.testing.assert_array_equal(plant_derivative(plant, f16_baseline, z, 0.0, 0.0, 0.0, 0.0), z)
    x = np.array([0.03, -0.1, 0.2])
    delta = unc.delta(x)
    got = plant_derivative(plant, f16_baseline, x, -delta, 0.0, 0.3, delta)
    np.testing.assert_allclose(got, f16_baseline.A_m @ x + f16_baseline.b_m * 0.3, atol=1e-15)


def test_open_loop_f16_hand_values(f16):
    plant, _ = f16
    got = plant.open_loop_derivative(np.array([0.01, 0.0, 0.0]), 0.0, 0.0, 0.0)
    np.testing.assert_allclose(got, [-1.0189 * 0.01, 0.8223 * 0.01, 0.01], rtol=1e-14)


def test_two_plant_forms_agree(f16, f16_baseline, rng):
    plant, unc = f16
    for _ in range(200):
        x = rng.normal(size=3) * 0.1
        r = float(rng.normal())
        u_ad, u_c = rng.normal(size=2)
        delta = unc.delta(x)
        u = f16_baseline.u_base(x, r) + u_ad + u_c
        np.testing.assert_allclose(plant_derivative(plant, f16_baseline, x, u_ad, u_c, r, delta),
                                   plant.open_loop_derivative(x, u, r, delta), atol=1e-12)


def test_virtual_derivative_examples(f16, f16_baseline):
    z = np.zeros(3)
    np.testing.assert_array_equal(virtual_derivative(f16_baseline, z, z, 0.0), z)
    xm = np.array([0.2, -0.1, 0.3])
    np.testing.assert_allclose(virtual_derivative(f16_baseline, xm, -f16_baseline.A_m @ xm, 0.0), z, atol=1e-15)
    plant = f16[0]
    k = f16_baseline.k_m
    A_m = [[plant.A[i][j] - plant.b[i] * k[j] for j in range(3)] for i in range(3)]
    want = [A_m[i][0] * 0.01 + plant.b_r[i] * 0.0873 for i in range(3)]
    np.testing.assert_allclose(virtual_derivative(f16_baseline, np.array([0.01, 0, 0]), z, 0.0873), want,
                               rtol=1e-13)


def test_ideal_reference_examples(f16, f16_baseline):
    z = np.zeros(3)
    np.testing.assert_array_equal(ideal_reference_derivative(f16_baseline, z, 0.0), z)
    r = 0.0873
    x_eq = -np.linalg.solve(f16_baseline.A_m, f16_baseline.b_m * r)
    np.testing.assert_allclose(ideal_reference_derivative(f16_baseline, x_eq, r), z, atol=1e-14)
    np.testing.assert_allclose(ideal_reference_derivative(f16_baseline, z, r), f16_baseline.b_m * r)


def test_kr_zero_gives_b_m_equal_b_r(f16, f16_baseline):
    assert f16_baseline.k_r == 0.0
    np.testing.assert_array_equal(f16_baseline.b_m, f16[0].b_r)


def test_unity_dc_gain_kr():
    plant = PlantModel(A=[[0.0, 1.0], [-1.0, -0.5]], b=[0.0, 1.0], b_r=[0.0, 0.0], c=[1.0, 0.0])
    k_m = np.array([0.5, 1.0])
    base = BaselineGains.from_gains(plant, k_m, BaselineGains.unity_dc_gain_kr(plant, k_m))
    dc = plant.c @ np.linalg.solve(-base.A_m, base.b_m)
    assert dc == pytest.approx(1.0, abs=1e-14)


def test_blend_examples():
    x = np.array([1.0, 2.0, 3.0])
    c = to_blend(x, x, 0.3)
    np.testing.assert_array_equal(c.e, 0.0)
    np.testing.assert_allclose(c.z, x)
    np.testing.assert_array_equal(to_blend(x, -x, 1.0).z, x)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        to_blend(x, x, 1.5)
    with pytest.raises(ValueError):
        from_blend(BlendCoordinates(x, x, -0.1))


def test_blend_round_trip(rng):
    for _ in range(1000):
        x, xm = rng.normal(size=(2, 3))
        back_x, back_xm = from_blend(to_blend(x, xm, 0.5))
        assert np.max(np.abs(back_x - x)) <= 1e-15 * max(1.0, np.max(np.abs(x)))
        assert np.max(np.abs(back_xm - xm)) <= 1e-15 * max(1.0, np.max(np.abs(xm)))
    for mu in rng.uniform(size=100):
        x, xm = rng.normal(size=(2, 3))
        back_x, back_xm = from_blend(to_blend(x, xm, mu))
        np.testing.assert_allclose(back_x, x, atol=1e-15)
        np.testing.assert_allclose(back_xm, xm, atol=1e-15)
