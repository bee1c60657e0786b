"""Closed-loop assembly, fixed-step integration and run diagnostics.

One run integrates, side by side: the plant, the virtual (reference) model,
the error integrals, the parameter estimate, the ideal reference trajectory
and, when enabled, the observer, regressor filter and feature extender.
The true uncertainty parameter is read only to produce ``Delta`` for the
plant and the ``theta_tilde``/``V`` diagnostics.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .adapt import AdaptationConfig, lyapunov_value
from .coupling import Allocator, AllocationPolicy, CouplingDesign
from .learner import FeatureExtender
from .model import BaselineGains, PlantModel, UncertaintyModel
from .observer import ObserverConfig, estimate_uncertainty

log = logging.getLogger(__name__)

DIRECT = "direct"
BREGMAN = "bregman"
REJECTION = "rejection"
MODES = (DIRECT, BREGMAN, REJECTION)


class IntegrationError(FloatingPointError):
    def __init__(self, t: float, component: int):
        super().__init__(f"non-finite derivative at t={t:.6g} in state component {component}")
        self.t = t
        self.component = component


def rk4_step(f: Callable, s: np.ndarray, t: float, h: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step of ``s' = f(t, s)``."""
    k1 = f(t, s)
    k2 = f(t + 0.5 * h, s + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, s + 0.5 * h * k2)
    k4 = f(t + h, s + h * k3)
    out = s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out))[0])
        raise IntegrationError(t, bad)
    return out


@dataclass(frozen=True)
class CommandProfile:
    """Piecewise-constant command, segments ``(start, end, value)`` with value in degrees."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(v)) for a, b, v in self.segments)
        if not segs:
            raise ValueError("command profile needs at least one segment")
        if segs[0][0] != 0.0:
            raise ValueError("command profile must start at t = 0")
        for (a, b, _), nxt in zip(segs, segs[1:] + (None,)):
            if not b > a:
                raise ValueError(f"segment times must be strictly increasing, got [{a}, {b})")
            if nxt is not None and nxt[0] != b:
                raise ValueError(f"command segments must be contiguous, gap at t = {b}")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", np.array([s[0] for s in segs]))
        object.__setattr__(self, "_values", np.radians([s[2] for s in segs]))

    @property
    def end(self) -> float:
        return self.segments[-1][1]

    @property
    def switch_times(self) -> list[float]:
        return [s[0] for s in self.segments[1:]]

    def rad(self, t: float) -> float:
        """Command in radians, right-continuous; held at the last value past the end."""
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        return float(self._values[max(i, 0)])

    def deg(self, t: float) -> float:
        return math.degrees(self.rad(t))

    @classmethod
    def square_wave(cls, amplitude_deg: float, period: float, duration: float) -> "CommandProfile":
        half = 0.5 * period
        n = int(math.ceil(duration / half))
        return cls(tuple((i * half, (i + 1) * half, amplitude_deg * (1 if i % 2 == 0 else -1))
                         for i in range(n)))


TABLE1_COMMAND = CommandProfile((
    (0.0, 1.0, 0.0), (1.0, 11.0, 5.0), (11.0, 22.0, -5.0), (22.0, 41.0, 0.0),
    (41.0, 51.0, 2.5), (51.0, 62.0, -2.5), (62.0, 80.0, 0.0),
))


@dataclass(frozen=True)
class SimConfig:
    plant: PlantModel
    uncertainty: UncertaintyModel
    baseline: BaselineGains
    design: CouplingDesign
    policy: AllocationPolicy
    adaptation: AdaptationConfig
    command: CommandProfile
    mode: str = DIRECT
    observer: ObserverConfig | None = None
    extender: FeatureExtender | None = None
    h: float = 1e-3
    duration: float = 80.0
    stride: float = 1e-2
    x0: np.ndarray | None = None
    xm0: np.ndarray | None = None
    theta_hat0: np.ndarray | None = None
    x_hat0: np.ndarray | None = None
    divergence_limit: float = 1e6
    label: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode in (BREGMAN, REJECTION) and self.observer is None:
            raise ValueError(f"mode {self.mode!r} needs an observer")
        if self.mode == BREGMAN and self.extender is None:
            raise ValueError("bregman mode needs a feature extender")
        if self.extender is not None and self.observer is None:
            raise ValueError("the regressor filter shares A_o with the observer")
        if not (self.h > 0 and self.duration > 0 and self.stride >= self.h):
            raise ValueError("need h > 0, duration > 0 and stride >= h")
        n, p = self.plant.n, self.uncertainty.p
        if self.design.n != n:
            raise ValueError(f"coupling design is for n={self.design.n}, plant has n={n}")
        if self.adaptation.Gamma.shape != (p, p):
            raise ValueError(f"Gamma must be {p} x {p}, got {self.adaptation.Gamma.shape}")
        if self.extender is not None and self.extender.p != p:
            raise ValueError("feature extender parameter count differs from the uncertainty model")
        for name, size in (("x0", n), ("xm0", n), ("theta_hat0", p), ("x_hat0", n)):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape != (size,):
                    raise ValueError(f"{name} must have length {size}, got {v.size}")
                object.__setattr__(self, name, v)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.h))

    @property
    def steps_per_sample(self) -> int:
        return max(1, int(round(self.stride / self.h)))


class StateLayout:
    """Slices of the flat integration vector."""

    def __init__(self, n: int, order: int, p: int, observer: bool, q: int | None):
        self.n, self.order, self.p, self.q = n, order, p, q
        sizes = [("x", n), ("xm", n), ("eint", n * order), ("theta", p), ("xid", n)]
        if observer:
            sizes.append(("xhat", n))
        if q is not None:
            sizes += [("Phif", p * n), ("Omega", q * p), ("eta", q)]
        self.slices: dict[str, slice] = {}
        i = 0
        for name, size in sizes:
            self.slices[name] = slice(i, i + size)
            i += size
        self.size = i

    def pack(self, **parts) -> np.ndarray:
        s = np.zeros(self.size)
        for name, value in parts.items():
            s[self.slices[name]] = np.asarray(value, dtype=float).ravel()
        return s

    def unpack(self, s) -> dict[str, np.ndarray]:
        out = {name: s[sl] for name, sl in self.slices.items()}
        if "Phif" in out:
            out["Phif"] = out["Phif"].reshape(self.p, self.n)
            out["Omega"] = out["Omega"].reshape(self.q, self.p)
        return out


class ClosedLoop:
    """Precomputed closed-loop right-hand side for one ``SimConfig``."""

    def __init__(self, config: SimConfig):
        self.config = c = config
        plant, base, design = c.plant, c.baseline, c.design
        n, p = plant.n, c.uncertainty.p
        self.n, self.p, self.order = n, p, design.order
        q = c.extender.q if c.extender is not None else None
        self.layout = StateLayout(n, design.order, p, c.observer is not None, q)
        self.allocator = Allocator(c.policy, plant.b)
        self.basis = c.uncertainty.basis
        self.theta_true = c.uncertainty.theta_true
        self.b = plant.b
        self.A_m, self.b_m = base.A_m, base.b_m
        self.K_e = design.K_e
        self.PBb = c.adaptation.P @ (design.B_e @ plant.b)
        self.Gamma = c.adaptation.Gamma
        x0 = np.zeros(n) if c.x0 is None else c.x0
        xm0 = np.zeros(n) if c.xm0 is None else c.xm0
        th0 = np.zeros(p) if c.theta_hat0 is None else c.theta_hat0
        self.x_tilde0 = None
        parts = dict(x=x0, xm=xm0, theta=th0,
                     xid=c.policy.mu * x0 + (1.0 - c.policy.mu) * xm0)
        if c.observer is not None:
            xhat0 = x0 if c.x_hat0 is None else c.x_hat0
            parts["xhat"] = xhat0
            self.x_tilde0 = xhat0 - x0
            self.A_o = c.observer.A_o
        if c.extender is not None:
            self.A_Y = c.extender.A_Y
            self.M = c.extender.M
            self.phi_H = c.adaptation.phi.H if c.adaptation.phi is not None else None
            self.psi = c.adaptation.psi
        self.s0 = self.layout.pack(**parts)
        sl = self.layout.slices
        self._x, self._xm, self._eint, self._th, self._xid = (
            sl["x"], sl["xm"], sl["eint"], sl["theta"], sl["xid"])

    def rate(self, t: float, s: np.ndarray, r: float) -> np.ndarray:
        return self._evaluate(t, s, r, want_signals=False)

    def signals(self, t: float, s: np.ndarray, r: float) -> dict:
        return self._evaluate(t, s, r, want_signals=True)

    def _evaluate(self, t, s, r, want_signals):
        c = self.config
        lay = self.layout
        x = s[self._x]
        xm = s[self._xm]
        th = s[self._th]
        b = self.b
        Phi = self.basis(x)
        delta = float(Phi @ self.theta_true)
        xhat = s[lay.slices["xhat"]] if c.observer is not None else None
        if c.mode == REJECTION:
            delta_hat = estimate_uncertainty(c.observer, b, xhat - x, self.x_tilde0, t)
        else:
            delta_hat = float(Phi @ th)
        u_ad = -delta_hat
        delta_tilde = delta_hat - delta
        e = xm - x
        e_I = np.concatenate((e, s[self._eint])) if self.order else e
        U_c = -(self.K_e @ e_I)
        u_c, U_m = self.allocator(U_c)

        ds = np.empty_like(s)
        ds[self._x] = self.A_m @ x + self.b_m * r + b * (u_c - delta_tilde)
        ds[self._xm] = self.A_m @ xm + self.b_m * r + U_m
        if self.order:
            ds[self._eint] = e_I[:-self.n]
        ds[self._xid] = self.A_m @ s[self._xid] + self.b_m * r

        u_base = -float(self.config.baseline.k_m @ x) - c.baseline.k_r * r
        u = u_base + u_ad + u_c
        sync = float(e_I @ self.PBb)
        Y_tilde = None
        if c.observer is not None:
            ds[lay.slices["xhat"]] = (c.plant.A @ x + b * u + c.plant.b_r * r
                                      + self.A_o @ (xhat - x))
        if c.extender is not None:
            Phif = s[lay.slices["Phif"]].reshape(self.p, self.n)
            Omega = s[lay.slices["Omega"]].reshape(-1, self.p)
            eta = s[lay.slices["eta"]]
            x_tilde = xhat - x
            ds[lay.slices["Phif"]] = (self.A_o @ Phif.T - np.outer(b, Phi)).T.ravel()
            # default extender policy: B_Y = Phi_f
            ds[lay.slices["Omega"]] = (self.A_Y @ Omega + Phif @ Phif.T).ravel()
            ds[lay.slices["eta"]] = self.A_Y @ eta + Phif @ x_tilde
        if c.mode == DIRECT:
            th_dot = -(self.Gamma @ Phi) * sync
        elif c.mode == BREGMAN:
            grad = Phi * sync
            if self.phi_H is not None:
                MO = self.M @ Omega
                Y_hat = MO @ th
                Y_tilde = Y_hat - self.M @ eta
                grad = grad + MO.T @ (self.phi_H @ Y_tilde)
            th_dot = -np.linalg.solve(self.psi.hess(th), grad)
        else:
            th_dot = np.zeros(self.p)
        ds[self._th] = th_dot

        if not want_signals:
            return ds
        return dict(ds=ds, Phi=Phi, delta=delta, delta_hat=delta_hat, u=u, u_base=u_base,
                    u_ad=u_ad, u_c=u_c, U_c=U_c, U_m=U_m, e=e, e_I=e_I,
                    edot=ds[self._xm] - ds[self._x], theta_hat_dot=th_dot, Y_tilde=Y_tilde)

    def lyapunov(self, s) -> float:
        x, xm = s[self._x], s[self._xm]
        e_I = np.concatenate((xm - x, s[self._eint]))
        return lyapunov_value(self.config.adaptation, e_I, self.theta_true, s[self._th])[0]

    def dissipation(self, s, Y_tilde=None) -> float:
        """Predicted ``-dV/dt``: ``e_I'Q e_I/2`` plus the regression term when present."""
        x, xm = s[self._x], s[self._xm]
        e_I = np.concatenate((xm - x, s[self._eint]))
        g = 0.5 * float(e_I @ self.config.adaptation.Q @ e_I)
        if Y_tilde is not None and self.phi_H is not None:
            g += float(Y_tilde @ self.phi_H @ Y_tilde)
        return g


def assemble_derivative(loop: ClosedLoop, t: float, s: np.ndarray, r: float | None = None) -> np.ndarray:
    """Full state rate at ``(t, s)``; ``r`` defaults to the command at ``t``."""
    if r is None:
        r = loop.config.command.rad(t)
    return loop.rate(t, s, r)


SAMPLE_FIELDS = ("t", "x", "x_m", "x_id", "u", "u_base", "u_ad", "u_c", "U_m", "Delta",
                 "Delta_hat", "norm_e", "norm_edot", "norm_theta_tilde", "norm_theta_hat_dot",
                 "V", "theta_hat", "r")


@dataclass
class SimTrajectory:
    """Sampled record of one run; vector quantities are ``(samples, dim)`` arrays."""

    t: np.ndarray
    x: np.ndarray
    x_m: np.ndarray
    x_id: np.ndarray
    u: np.ndarray
    u_base: np.ndarray
    u_ad: np.ndarray
    u_c: np.ndarray
    U_m: np.ndarray
    Delta: np.ndarray
    Delta_hat: np.ndarray
    norm_e: np.ndarray
    norm_edot: np.ndarray
    norm_theta_tilde: np.ndarray
    norm_theta_hat_dot: np.ndarray
    V: np.ndarray
    theta_hat: np.ndarray
    r: np.ndarray
    # per integration step, for the Lyapunov checks
    step_t: np.ndarray = field(default=None, repr=False)
    step_V: np.ndarray = field(default=None, repr=False)
    step_dissipation: np.ndarray = field(default=None, repr=False)
    Omega: np.ndarray | None = field(default=None, repr=False)
    diverged: bool = False

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class RunMetrics:
    peak_abs_output: float
    rms_tracking_error: float
    input_total_variation: float
    peak_theta_rate: float
    final_theta_error: float
    lyapunov_monotone: bool
    lyapunov_max_violation: float
    diverged: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


LYAPUNOV_SLACK = 1e-8


def lyapunov_violation(V: np.ndarray) -> float:
    """Largest step increase of ``V`` relative to ``1 + V``; negative when strictly decreasing."""
    if len(V) < 2:
        return 0.0
    return float(np.max(np.diff(V) / (1.0 + V[:-1])))


def compute_metrics(traj: SimTrajectory, c_out: np.ndarray | None = None) -> RunMetrics:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    n = traj.x.shape[1]
    c_out = np.eye(n)[0] if c_out is None else np.asarray(c_out, dtype=float)
    y = traj.x @ c_out
    ey = (traj.x_m - traj.x) @ c_out
    V = traj.step_V if traj.step_V is not None else traj.V
    viol = lyapunov_violation(V)
    return RunMetrics(
        peak_abs_output=float(np.max(np.abs(y))),
        rms_tracking_error=float(np.sqrt(np.mean(ey ** 2))),
        input_total_variation=float(np.sum(np.abs(np.diff(traj.u)))),
        peak_theta_rate=float(np.max(traj.norm_theta_hat_dot)),
        final_theta_error=float(traj.norm_theta_tilde[-1]),
        lyapunov_monotone=bool(viol <= LYAPUNOV_SLACK),
        lyapunov_max_violation=viol,
        diverged=traj.diverged,
    )


def simulate(config: SimConfig, record_steps: bool = True) -> SimTrajectory:
    """Integrate ``0 -> duration`` with fixed-step RK4.

    The command is held over each step at its value at the step midpoint, so
    switch times that fall on step boundaries are integrated exactly.
    """
    loop = ClosedLoop(config)
    h, N, every = config.h, config.n_steps, config.steps_per_sample
    n_samples = N // every + 1
    n, p = loop.n, loop.p
    rec = {k: np.zeros(n_samples) for k in SAMPLE_FIELDS}
    for k in ("x", "x_m", "x_id", "U_m"):
        rec[k] = np.zeros((n_samples, n))
    rec["theta_hat"] = np.zeros((n_samples, p))
    if config.extender is not None:
        rec["Omega"] = np.zeros((n_samples, config.extender.q, p))
    step_V = np.zeros(N + 1) if record_steps else None
    step_g = np.zeros(N + 1) if record_steps else None
    theta = loop.theta_true
    lay = loop.layout
    cmd = config.command

    def record(j, t, s):
        r = cmd.rad(t)
        sig = loop.signals(t, s, r)
        parts = lay.unpack(s)
        th = parts["theta"]
        rec["t"][j] = t
        rec["x"][j] = parts["x"]
        rec["x_m"][j] = parts["xm"]
        rec["x_id"][j] = parts["xid"]
        rec["U_m"][j] = sig["U_m"]
        rec["theta_hat"][j] = th
        if "Omega" in parts:
            rec["Omega"][j] = parts["Omega"]
        for key, val in (("u", sig["u"]), ("u_base", sig["u_base"]), ("u_ad", sig["u_ad"]),
                         ("u_c", sig["u_c"]), ("Delta", sig["delta"]),
                         ("Delta_hat", sig["delta_hat"]), ("r", r)):
            rec[key][j] = val
        rec["norm_e"][j] = np.linalg.norm(sig["e"])
        rec["norm_edot"][j] = np.linalg.norm(sig["edot"])
        rec["norm_theta_tilde"][j] = np.linalg.norm(th - theta)
        rec["norm_theta_hat_dot"][j] = np.linalg.norm(sig["theta_hat_dot"])
        rec["V"][j] = loop.lyapunov(s)

    def step_diag(i, s):
        step_V[i] = loop.lyapunov(s)
        Y_tilde = None
        if config.mode == BREGMAN and loop.phi_H is not None:
            parts = lay.unpack(s)
            Y_tilde = loop.M @ (parts["Omega"] @ parts["theta"] - parts["eta"])
        step_g[i] = loop.dissipation(s, Y_tilde)

    s = loop.s0.copy()
    record(0, 0.0, s)
    if record_steps:
        step_diag(0, s)
    diverged = False
    last_j = 0
    for i in range(N):
        t = i * h
        r = cmd.rad(t + 0.5 * h)
        s = rk4_step(lambda tt, ss: loop.rate(tt, ss, r), s, t, h)
        if record_steps:
            step_diag(i + 1, s)
        if (i + 1) % every == 0:
            last_j = (i + 1) // every
            record(last_j, (i + 1) * h, s)
        if np.max(np.abs(s)) > config.divergence_limit:
            log.warning("run %s diverged at t=%.3f", config.label, (i + 1) * h)
            diverged = True
            break
    if diverged:
        keep = last_j + 1
        rec = {k: v[:keep] for k, v in rec.items()}
        if record_steps:
            step_V, step_g = step_V[:i + 2], step_g[:i + 2]
    step_t = h * np.arange(len(step_V)) if record_steps else None
    return SimTrajectory(**rec, step_t=step_t, step_V=step_V, step_dissipation=step_g,
                         diverged=diverged)


def run_simulation(config: SimConfig, record_steps: bool = True) -> tuple[SimTrajectory, RunMetrics]:
    traj = simulate(config, record_steps=record_steps)
    return traj, compute_metrics(traj, config.plant.c)
