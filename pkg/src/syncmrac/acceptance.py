"""Acceptance checks for the framework, shared by the test-suite and ``syncmrac check``.

Each ``check_*`` function returns a :class:`CriterionResult`. Reference
implementations used as oracles here are deliberately coded apart from the
framework path: they integrate the open-loop plant form with their own RK4
loop and take ``P`` from SciPy's Lyapunov solver.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_continuous_are, solve_continuous_lyapunov

from .adapt import AdaptationConfig
from .coupling import AllocationPolicy, CouplingDesign, allocate, j_pert
from .experiment import ExperimentConfig, GridCell, default_config, iter_results
from .learner import FeatureExtender, excitation_rank
from .matops import care_residual, lyapunov_residual, solve_care, solve_lyapunov
from .model import BaselineGains, LinearBasis, PlantModel, UncertaintyModel
from .observer import ObserverConfig, estimate_uncertainty, observer_derivative
from .sim import BREGMAN, CommandProfile, SimConfig, rk4_step, run_simulation, simulate


@dataclass
class CriterionResult:
    number: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number:>3} {self.name}: {self.detail}"


# -- independent reference loops ----------------------------------------------

def reference_mrac(cfg: ExperimentConfig, k_P: float, closed_loop_reference: bool, h=None):
    """Direct MRAC with an open-loop (``k_P`` ignored) or closed-loop reference model.

    Returns sample times and the stacked ``[x, x_m, theta_hat]`` at the
    config's output stride.
    """
    plant, base = cfg.plant, cfg.baseline
    A, b, b_r = plant.A, plant.b, plant.b_r
    k_m, k_r = base.k_m, base.k_r
    A_m = A - np.outer(b, k_m)
    b_m = b_r - b * k_r
    n = A.shape[0]
    kp = k_P if closed_loop_reference else 0.0
    P = solve_continuous_lyapunov((A_m - kp * np.eye(n)).T, -cfg.Q)
    Pb = P @ b
    Gamma = cfg.Gamma
    basis = cfg.uncertainty.basis
    theta = cfg.uncertainty.theta_true
    h = cfg.h if h is None else h
    N = int(round(cfg.duration / h))
    every = int(round(cfg.stride / h))
    starts = np.array([s[0] for s in cfg.command.segments])
    values = np.array([math.radians(s[2]) for s in cfg.command.segments])

    def f(z, r):
        x, xm, th = z[:n], z[n:2 * n], z[2 * n:]
        phi = basis(x)
        u = -k_m @ x - k_r * r - phi @ th
        e = xm - x
        dx = A @ x + b * (u + phi @ theta) + b_r * r
        dxm = A_m @ xm + b_m * r
        if closed_loop_reference:
            dxm = dxm - kp * e
        dth = -(Gamma @ phi) * (e @ Pb)
        return np.concatenate((dx, dxm, dth))

    z = np.concatenate((cfg.x0, cfg.xm0, cfg.theta_hat0))
    out = [z.copy()]
    for i in range(N):
        r = values[np.searchsorted(starts, (i + 0.5) * h, side="right") - 1]
        k1 = f(z, r)
        k2 = f(z + 0.5 * h * k1, r)
        k3 = f(z + 0.5 * h * k2, r)
        k4 = f(z + h * k3, r)
        z = z + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        if (i + 1) % every == 0:
            out.append(z.copy())
    return np.arange(len(out)) * cfg.stride, np.array(out)


def _stack(traj):
    return np.hstack([traj.x, traj.x_m, traj.theta_hat])


# -- individual criteria --------------------------------------------------------

def check_crm_equivalence(cfg: ExperimentConfig, gains=(1.0, 10.0, 100.0), tol=1e-9, max_seconds=30.0):
    worst, slowest, details = 0.0, 0.0, []
    for kp in gains:
        sc = cfg.sim_config(GridCell(kp, 1.0))
        t0 = time.perf_counter()
        traj, _ = run_simulation(sc)
        elapsed = time.perf_counter() - t0
        _, ref = reference_mrac(cfg, kp, closed_loop_reference=True)
        err = float(np.max(np.abs(_stack(traj) - ref)))
        worst, slowest = max(worst, err), max(slowest, elapsed)
        details.append(f"k_P={kp:g}: {err:.2e} in {elapsed:.1f}s")
    ok = worst <= tol and slowest <= max_seconds
    return CriterionResult("1", "CRM special case", ok,
                           f"max|diff| {worst:.2e} (tol {tol:g}), slowest cell {slowest:.1f}s "
                           f"(limit {max_seconds:g}s); " + "; ".join(details))


def check_orm_equivalence(cfg: ExperimentConfig, traj=None, tol=1e-9):
    if traj is None:
        traj, _ = run_simulation(cfg.sim_config(GridCell(0.0, cfg.mu[0])))
    _, ref = reference_mrac(cfg, 0.0, closed_loop_reference=False)
    err = float(np.max(np.abs(_stack(traj) - ref)))
    return CriterionResult("2", "ORM special case", err <= tol, f"max|diff| {err:.2e} (tol {tol:g})")


def check_allocation_optimality(n_instances=1000, n_scan=10_000, rel_tol=1e-6, res_tol=1e-12, seed=0):
    rng = np.random.default_rng(seed)
    worst_gap, worst_res = -np.inf, 0.0
    norms = (1.0, 2.0, math.inf)
    for k in range(n_instances):
        n = int(rng.integers(1, 5))
        b = rng.normal(size=n)
        L = rng.normal(size=(n, n))
        W = L @ L.T + 0.1 * np.eye(n)
        mu = float(rng.uniform())
        U_c = rng.normal(size=n) * 10.0 ** rng.uniform(-2, 2)
        policy = AllocationPolicy(mu, W, norms[k % 3])
        u_c, U_m = allocate(policy, b, U_c)
        worst_res = max(worst_res, float(np.max(np.abs(U_m - b * u_c - U_c))))
        # brute-force scan on a window that surely contains the minimiser
        R = 3.0 * np.linalg.norm(W @ U_c, policy.p) / np.linalg.norm(W @ b, policy.p) + 1e-12
        grid = np.linspace(-R, R, n_scan)
        vals = np.linalg.norm((W @ (np.outer(b, grid) + (1 - mu) * U_c[:, None])), ord=policy.p, axis=0)
        J = j_pert(policy, b, U_c, u_c)
        scale = max(float(vals.min()), np.linalg.norm(W @ U_c, policy.p) * 1e-12, 1e-300)
        worst_gap = max(worst_gap, (J - float(vals.min())) / scale)
    ok = worst_gap <= rel_tol and worst_res <= res_tol
    return CriterionResult("3", "allocation optimality", ok,
                           f"worst relative excess over scan {worst_gap:.2e} (tol {rel_tol:g}), "
                           f"constraint residual {worst_res:.1e} (tol {res_tol:g})")


def lyapunov_rate_residual(traj, h: float) -> tuple[float, float]:
    """Largest trapezoid mismatch between ``dV/dt`` and ``-dissipation``, and its allowed bound.

    The trapezoid rule is second order, so the bound is twice
    ``h^2/12 max|g''|`` (``g''`` from central differences of the
    dissipation samples, maximised over neighbouring steps) plus a
    roundoff allowance ``1e-12 (1 + V) / h``.
    """
    V, g = traj.step_V, traj.step_dissipation
    dV = np.diff(V) / h
    trap = 0.5 * (g[1:] + g[:-1])
    resid = np.abs(dV + trap)
    g2 = np.zeros_like(g)
    g2[1:-1] = np.abs(g[2:] - 2 * g[1:-1] + g[:-2]) / h ** 2
    g2[0], g2[-1] = g2[1], g2[-2]
    local = np.maximum.reduce([g2[:-1], g2[1:], np.r_[g2[2:], g2[-1]], np.r_[g2[0], g2[:-2]]])
    bound = 2.0 * h ** 2 / 12.0 * local + 1e-12 * (1.0 + V[:-1]) / h
    worst = int(np.argmax(resid / bound))
    return float(resid[worst]), float(bound[worst])


def check_lyapunov(results, h: float):
    bad, worst_viol, worst_ratio = [], -np.inf, 0.0
    for cell, traj, m in results:
        worst_viol = max(worst_viol, m.lyapunov_max_violation)
        resid, bound = lyapunov_rate_residual(traj, h)
        worst_ratio = max(worst_ratio, resid / bound)
        if not m.lyapunov_monotone or resid > bound:
            bad.append(cell.key)
    return CriterionResult("4", "Lyapunov monotonicity", not bad,
                           f"{len(results)} cells, max step increase {worst_viol:.1e}(1+V) (slack 1e-8), "
                           f"worst dV/dt residual / O(h^2) bound {worst_ratio:.2f}"
                           + (f"; failing: {', '.join(bad)}" if bad else ""))


def _metrics(results):
    return {(c.k_P, c.mu): m for c, _, m in results}


def check_peaking(results, k_P=100.0):
    m = _metrics(results)
    lo, hi = m[(k_P, 0.0)].peak_abs_output, m[(k_P, 1.0)].peak_abs_output
    return CriterionResult("5", "peaking alleviation", lo < hi,
                           f"k_P={k_P:g}: peak|alpha| mu=0 {math.degrees(lo):.3f} deg vs mu=1 {math.degrees(hi):.3f} deg")


def check_theta_rate_smoothing(results, gains=(0.0, 1.0, 10.0, 100.0)):
    m = _metrics(results)
    rates = [m[(k, 1.0)].peak_theta_rate for k in gains]
    ok = all(b <= a for a, b in zip(rates, rates[1:]))
    return CriterionResult("6a", "theta-rate smoothing", ok,
                           "sup|dtheta_hat/dt| at mu=1: " + ", ".join(f"k_P={k:g}: {r:.4g}" for k, r in zip(gains, rates)))


def check_input_variation(results, mu=1.0):
    m = _metrics(results)
    tv0, tv100 = m[(0.0, mu)].input_total_variation, m[(100.0, mu)].input_total_variation
    others = ", ".join(f"mu={mm:g}: {m[(0.0, mm)].input_total_variation:.4g} -> "
                       f"{m[(100.0, mm)].input_total_variation:.4g}"
                       for mm in sorted({k[1] for k in m}) if mm != mu)
    return CriterionResult("6b", "input total variation", tv100 < tv0,
                           f"TV(delta_e) at mu={mu:g}: k_P=0 {tv0:.4g} deg -> k_P=100 {tv100:.4g} deg "
                           f"(for reference {others})")


def check_learning_attenuation(results):
    m = _metrics(results)
    a, b = m[(100.0, 1.0)].final_theta_error, m[(1.0, 1.0)].final_theta_error
    return CriterionResult("7", "learning attenuation", a > b,
                           f"|theta_tilde(T)| at mu=1: k_P=100 {a:.4g} vs k_P=1 {b:.4g}")


def check_observer(omega_f=10.0, duration=2.0, h=1e-3, tol=1e-6):
    """Step ``Delta = 1`` into the F-16 short-period plant with zero input."""
    from .model import f16_short_period
    plant, _ = f16_short_period()
    n = plant.n
    results = {}
    for mode in ("unity", "literal"):
        obs = ObserverConfig(omega_f, n, mode=mode)

        def f(t, s):
            x, xh = s[:n], s[n:]
            return np.concatenate((plant.open_loop_derivative(x, 0.0, 0.0, 1.0),
                                   observer_derivative(obs.A_o, plant.A, plant.b, x, xh, 0.0)))

        s = np.zeros(2 * n)
        worst = 0.0
        for i in range(int(round(duration / h))):
            s = rk4_step(f, s, i * h, h)
            t = (i + 1) * h
            est = estimate_uncertainty(obs, plant.b, s[n:] - s[:n], np.zeros(n), t)
            exact = 1.0 - math.exp(-omega_f * t)
            if mode == "literal":
                exact /= omega_f
            worst = max(worst, abs(est - exact))
        results[mode] = worst
    ok = all(v <= tol for v in results.values())
    return CriterionResult("8", "observer convergence", ok,
                           f"max|Delta_hat - analytic|: unity {results['unity']:.1e}, "
                           f"literal {results['literal']:.1e} (tol {tol:g})")


def learning_demo_config(duration=60.0) -> SimConfig:
    """Two-state plant, two linear features, square-wave command and the regression-augmented law."""
    plant = PlantModel(A=[[0.0, 1.0], [-1.0, -0.5]], b=[0.0, 1.0], b_r=[0.0, 0.0], c=[1.0, 0.0])
    unc = UncertaintyModel(LinearBasis(), np.array([-2.0, 1.0]), name="linear2")
    k_m = BaselineGains.from_lqr(plant, np.eye(2), 1.0).k_m
    base = BaselineGains.from_gains(plant, k_m, BaselineGains.unity_dc_gain_kr(plant, k_m))
    design = CouplingDesign.proportional(base.A_m, 5.0)
    adaptation = AdaptationConfig.build(10.0 * np.eye(2), np.eye(2), design.closed_loop,
                                        phi_metric=100.0 * np.eye(2))
    return SimConfig(plant, unc, base, design, AllocationPolicy(0.0), adaptation,
                     CommandProfile.square_wave(math.degrees(1.0), 4.0, duration), mode=BREGMAN,
                     observer=ObserverConfig(10.0, 2), extender=FeatureExtender(2, 0.1),
                     duration=duration, label="learning-demo")


def check_learning_convergence(duration=60.0, e_tol=1e-3, theta_tol=1e-2):
    cfg = learning_demo_config(duration)
    traj, metrics = run_simulation(cfg)
    e_T, th_T = float(traj.norm_e[-1]), float(traj.norm_theta_tilde[-1])
    ranks = [excitation_rank(cfg.extender, O)[0] for O in traj.Omega]
    p = cfg.uncertainty.p
    t_rank = next((float(t) for t, r in zip(traj.t, ranks) if r == p), math.inf)
    t_conv = next((float(t) for t, th in zip(traj.t, traj.norm_theta_tilde) if th <= theta_tol), math.inf)
    ok = (e_T <= e_tol and th_T <= theta_tol and metrics.lyapunov_monotone and t_rank < t_conv)
    return CriterionResult("9", "composite learning convergence", ok,
                           f"|e(60)| {e_T:.1e} (tol {e_tol:g}), |theta_tilde(60)| {th_T:.1e} (tol {theta_tol:g}), "
                           f"V monotone {metrics.lyapunov_monotone}, full rank at t={t_rank:g}s, "
                           f"theta converged at t={t_conv:g}s")


def rk4_halving_ratio(cfg: ExperimentConfig, cell=GridCell(10.0, 0.5), duration=10.0, h0=4e-3):
    from dataclasses import replace
    finals = []
    for h in (h0, h0 / 2, h0 / 4):
        sc = replace(cfg.sim_config(cell), h=h, duration=duration, stride=h0)
        finals.append(simulate(sc, record_steps=False))
    ends = [np.hstack([tr.x[-1], tr.x_m[-1], tr.theta_hat[-1]]) for tr in finals]
    return float(np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2]))


def check_numerics(cfg: ExperimentConfig):
    plant = cfg.plant
    Q_base = np.diag([0.0, 0.0, 100.0])
    care = solve_care(plant.A, plant.b, Q_base, 1.0)
    care_res = care_residual(plant.A, plant.b, Q_base, 1.0, care.P)
    P_ref = solve_continuous_are(plant.A, plant.b[:, None], Q_base, np.array([[1.0]]))
    lyap_res = 0.0
    for kp in (0.0, 1.0, 10.0, 100.0):
        Acl = cfg.baseline.A_m - kp * np.eye(plant.n)
        P = solve_lyapunov(Acl, cfg.Q)
        lyap_res = max(lyap_res, lyapunov_residual(Acl, P, cfg.Q))
    ratio = rk4_halving_ratio(cfg)
    ok = lyap_res <= 1e-10 and care_res <= 1e-8 and 8.0 <= ratio <= 48.0
    return CriterionResult("10", "numerics", ok,
                           f"Lyapunov residual {lyap_res:.1e} (tol 1e-10), CARE residual {care_res:.1e} "
                           f"(tol 1e-8, |P - scipy| {np.max(np.abs(care.P - P_ref)):.1e}), "
                           f"RK4 halving ratio {ratio:.2f} (range [8, 48])")


def run_grid_timed(cfg: ExperimentConfig, workers: int = 4):
    t0 = time.perf_counter()
    results = list(iter_results(cfg, workers))
    return results, time.perf_counter() - t0


def check_grid_runtime(elapsed: float, n_cells: int, workers: int, limit=300.0):
    return CriterionResult("11", "full grid runtime", elapsed < limit and n_cells == 12,
                           f"{n_cells} cells with {workers} workers in {elapsed:.1f}s (limit {limit:g}s)")


def run_all(cfg: ExperimentConfig | None = None, workers: int = 4, echo=print) -> list[CriterionResult]:
    cfg = default_config() if cfg is None else cfg
    out = []

    def emit(res):
        out.append(res)
        if echo is not None:
            echo(res.line())

    results, elapsed = run_grid_timed(cfg, workers)
    emit(check_crm_equivalence(cfg))
    orm = next(tr for c, tr, _ in results if c.k_P == 0.0)
    emit(check_orm_equivalence(cfg, orm))
    emit(check_allocation_optimality())
    emit(check_lyapunov(results, cfg.h))
    emit(check_peaking(results))
    emit(check_theta_rate_smoothing(results))
    emit(check_input_variation(results))
    emit(check_learning_attenuation(results))
    emit(check_observer())
    emit(check_learning_convergence())
    emit(check_numerics(cfg))
    emit(check_grid_runtime(elapsed, len(results), workers))
    return out
