"""Experiment configuration files and grid execution.

A config is a TOML document; ``data/f16_table1.toml`` is the annotated
reference. Each grid cell is one combination of coupling gains and the
allocation weighting factor ``mu``; everything else is shared.
"""
from __future__ import annotations

import itertools
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .adapt import AdaptationConfig
from .coupling import AllocationPolicy, CouplingDesign
from .learner import FeatureExtender
from .model import BaselineGains, LinearBasis, PlantModel, UncertaintyModel, f16_short_period
from .observer import ObserverConfig
from .sim import BREGMAN, MODES, REJECTION, CommandProfile, SimConfig, run_simulation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

PRESET_NAME = "f16-shortperiod"


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


def preset_text(name: str = "f16") -> str:
    if name not in ("f16", PRESET_NAME):
        raise ConfigError(f"unknown preset {name!r}; available: f16")
    return resources.files("syncmrac").joinpath("data/f16_table1.toml").read_text(encoding="utf-8")


@dataclass(frozen=True)
class OutputSpec:
    directory: Path = Path("out")
    formats: tuple[str, ...] = ("csv",)


@dataclass(frozen=True)
class GridCell:
    k_P: float
    mu: float
    k_I: float | None = None

    @property
    def key(self) -> str:
        s = f"kP{self.k_P:g}"
        if self.k_I is not None:
            s += f"_kI{self.k_I:g}"
        return s + f"_mu{self.mu:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to build the ``SimConfig`` of each grid cell."""

    plant: PlantModel
    uncertainty: UncertaintyModel
    baseline: BaselineGains
    coupling_type: str
    k_P: tuple[float, ...]
    k_I: tuple[float, ...]
    K_e: np.ndarray | None
    mu: tuple[float, ...]
    W: np.ndarray | None
    p_norm: float
    mode: str
    Gamma: np.ndarray
    Q: np.ndarray
    phi_metric: np.ndarray | None
    observer: ObserverConfig | None
    extender: FeatureExtender | None
    x0: np.ndarray
    xm0: np.ndarray
    theta_hat0: np.ndarray
    h: float
    duration: float
    stride: float
    command: CommandProfile
    output: OutputSpec = field(default_factory=OutputSpec)
    state_labels: tuple[str, ...] = ()
    state_scales: tuple[float, ...] = ()
    input_label: str = "u"

    def cells(self) -> list[GridCell]:
        if self.coupling_type == "PI":
            combos = [GridCell(kp, mu, ki) for kp, ki, mu in itertools.product(self.k_P, self.k_I, self.mu)]
        elif self.coupling_type == "general":
            combos = [GridCell(math.nan, mu) for mu in self.mu]
        else:
            combos = [GridCell(kp, mu) for kp, mu in itertools.product(self.k_P, self.mu)]
        return sorted(combos, key=lambda c: (c.k_P, c.k_I or 0.0, c.mu))

    def design(self, cell: GridCell) -> CouplingDesign:
        A_m = self.baseline.A_m
        if self.coupling_type == "PI":
            return CouplingDesign.proportional_integral(A_m, cell.k_P, cell.k_I)
        if self.coupling_type == "general":
            return CouplingDesign.general(A_m, self.K_e)
        return CouplingDesign.proportional(A_m, cell.k_P)

    def sim_config(self, cell: GridCell) -> SimConfig:
        design = self.design(cell)
        Q = self.Q
        N = design.A_e.shape[0]
        if Q.shape != (N, N):
            raise ConfigError(f"adaptation.Q: expected {N}x{N} for coupling order {design.order}, got "
                              f"{Q.shape[0]}x{Q.shape[1]}")
        adaptation = AdaptationConfig.build(self.Gamma, Q, design.closed_loop, phi_metric=self.phi_metric)
        return SimConfig(
            plant=self.plant, uncertainty=self.uncertainty, baseline=self.baseline, design=design,
            policy=AllocationPolicy(cell.mu, self.W, self.p_norm), adaptation=adaptation,
            command=self.command, mode=self.mode, observer=self.observer, extender=self.extender,
            h=self.h, duration=self.duration, stride=self.stride, x0=self.x0, xm0=self.xm0,
            theta_hat0=self.theta_hat0, label=cell.key)

    def with_overrides(self, h: float | None = None, out: str | os.PathLike | None = None) -> "ExperimentConfig":
        cfg = self
        if h is not None:
            if not h > 0 or h > cfg.stride:
                raise ConfigError(f"integrator.h: must satisfy 0 < h <= stride ({cfg.stride}), got {h}")
            cfg = replace(cfg, h=float(h))
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=Path(out)))
        return cfg


# -- parsing -----------------------------------------------------------------

def _get(table: dict, key: str, where: str, default=..., kind=None):
    if key not in table:
        if default is ...:
            raise ConfigError(f"{where}.{key}: required field is missing")
        return default
    value = table[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _numbers(value, where: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (float(value),)
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: expected a non-empty list of numbers")
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(value))


def _vector(value, n: int, where: str) -> np.ndarray:
    v = _numbers(value, where)
    if len(v) != n:
        raise ConfigError(f"{where}: dimension mismatch, expected length {n}, got {len(v)}")
    return np.array(v)


def _matrix(value, n: int, where: str) -> np.ndarray:
    """Square matrix from a full nested list or from its diagonal."""
    if isinstance(value, list) and value and all(isinstance(r, list) for r in value):
        rows = [_numbers(r, f"{where}[{i}]") for i, r in enumerate(value)]
        M = np.array(rows) if len({len(r) for r in rows}) == 1 else None
        if M is None or M.shape != (n, n):
            shape = "ragged" if M is None else f"{M.shape[0]}x{M.shape[1]}"
            raise ConfigError(f"{where}: dimension mismatch, expected {n}x{n}, got {shape}")
        return M
    return np.diag(_vector(value, n, where))


def _positive(x: float, where: str) -> float:
    if not x > 0:
        raise ConfigError(f"{where}: must be positive, got {x}")
    return x


def _plant(doc: dict):
    t = _get(doc, "plant", "config", kind=dict)
    preset = t.get("preset")
    if preset is not None:
        if preset != PRESET_NAME:
            raise ConfigError(f"plant.preset: unknown preset {preset!r}; available: {PRESET_NAME!r}")
        plant, unc = f16_short_period()
        return plant, unc, ("alpha_deg", "q_dps", "e_alphaI"), (180 / math.pi, 180 / math.pi, 1.0), "delta_e_deg"
    A = _get(t, "A", "plant", kind=list)
    n = len(A)
    A = _matrix(A, n, "plant.A")
    b = _vector(_get(t, "b", "plant"), n, "plant.b")
    b_r = _vector(t.get("b_r", [0.0] * n), n, "plant.b_r")
    c = _vector(t.get("c", [1.0] + [0.0] * (n - 1)), n, "plant.c")
    try:
        plant = PlantModel(A=A, b=b, b_r=b_r, c=c)
    except ValueError as exc:
        raise ConfigError(f"plant: {exc}") from exc
    basis_t = _get(t, "basis", "plant", default={"kind": "linear"}, kind=dict)
    kind = basis_t.get("kind", "linear")
    if kind != "linear":
        raise ConfigError(f"plant.basis.kind: only 'linear' is supported for custom plants, got {kind!r}")
    idx = basis_t.get("indices")
    if idx is not None:
        if not all(isinstance(i, int) and 0 <= i < n for i in idx):
            raise ConfigError(f"plant.basis.indices: entries must be state indices in [0, {n - 1}]")
        idx = tuple(idx)
    basis = LinearBasis(idx)
    p = n if idx is None else len(idx)
    theta = _vector(_get(t, "theta", "plant"), p, "plant.theta")
    labels = tuple(f"x{i + 1}" for i in range(n))
    return plant, UncertaintyModel(basis, theta), labels, (1.0,) * n, "u"


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    plant, unc, labels, scales, input_label = _plant(doc)
    n, p = plant.n, unc.p

    bt = _get(doc, "baseline", "config", kind=dict)
    k_r = _number(bt.get("k_r", 0.0), "baseline.k_r")
    try:
        if "k_m" in bt:
            baseline = BaselineGains.from_gains(plant, _vector(bt["k_m"], n, "baseline.k_m"), k_r)
        else:
            Qb = _matrix(_get(bt, "Q", "baseline"), n, "baseline.Q")
            Rb = _positive(_number(_get(bt, "R", "baseline"), "baseline.R"), "baseline.R")
            baseline = BaselineGains.from_lqr(plant, Qb, Rb, k_r)
    except ArithmeticError as exc:
        raise ConfigError(f"baseline: {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"baseline: {exc}") from exc

    ct = _get(doc, "coupling", "config", kind=dict)
    ctype = ct.get("type", "P")
    if ctype not in ("P", "PI", "general"):
        raise ConfigError(f"coupling.type: must be one of 'P', 'PI', 'general', got {ctype!r}")
    k_P, k_I, K_e = (), (), None
    if ctype in ("P", "PI"):
        k_P = _numbers(_get(ct, "k_P", "coupling"), "coupling.k_P")
        if any(k < 0 for k in k_P):
            raise ConfigError("coupling.k_P: gains must be non-negative")
    if ctype == "PI":
        k_I = _numbers(_get(ct, "k_I", "coupling"), "coupling.k_I")
        if any(k < 0 for k in k_I):
            raise ConfigError("coupling.k_I: gains must be non-negative")
    if ctype == "general":
        rows = _get(ct, "K_e", "coupling", kind=list)
        K_e = np.array([_numbers(r, f"coupling.K_e[{i}]") for i, r in enumerate(rows)])
        if K_e.ndim != 2 or K_e.shape[0] != n or K_e.shape[1] % n:
            raise ConfigError(f"coupling.K_e: dimension mismatch, expected {n}x{n}(l+1), got {K_e.shape}")

    at = _get(doc, "allocation", "config", kind=dict)
    mu = _numbers(_get(at, "mu", "allocation"), "allocation.mu")
    for m in mu:
        if not 0.0 <= m <= 1.0:
            raise ConfigError(f"allocation.mu: every value must lie in [0, 1], got {m}")
    W_raw = at.get("W", "identity")
    W = None if W_raw == "identity" else _matrix(W_raw, n, "allocation.W")
    p_raw = at.get("p", 2)
    p_norm = math.inf if p_raw in ("inf", "infinity") else _number(p_raw, "allocation.p")
    if p_norm not in (1.0, 2.0, math.inf):
        raise ConfigError(f"allocation.p: must be 1, 2 or 'inf', got {p_raw!r}")
    if W is not None:
        try:
            AllocationPolicy(0.0, W, p_norm)
        except ValueError as exc:
            raise ConfigError(f"allocation.W: {exc}") from exc

    ad = _get(doc, "adaptation", "config", kind=dict)
    mode = ad.get("mode", "direct")
    if mode not in MODES:
        raise ConfigError(f"adaptation.mode: must be one of {MODES}, got {mode!r}")
    Gamma = _matrix(_get(ad, "Gamma", "adaptation"), p, "adaptation.Gamma")
    order = {"P": 0, "PI": 1}.get(ctype, (K_e.shape[1] // n - 1) if K_e is not None else 0)
    Q = _matrix(_get(ad, "Q", "adaptation"), n * (order + 1), "adaptation.Q")
    phi_raw = ad.get("phi", 0)
    phi_metric = None
    if not (isinstance(phi_raw, (int, float)) and phi_raw == 0):
        phi_metric = _matrix(phi_raw, p, "adaptation.phi")

    ot = doc.get("observer", {})
    lt = doc.get("learner", {})
    need_obs = mode in (BREGMAN, REJECTION) or bool(lt.get("enabled", False))
    observer = None
    if ot.get("enabled", False) or need_obs:
        omega_f = _positive(_number(ot.get("omega_f", 10.0), "observer.omega_f"), "observer.omega_f")
        omode = ot.get("mode", "unity")
        if omode not in ("unity", "literal"):
            raise ConfigError(f"observer.mode: must be 'unity' or 'literal', got {omode!r}")
        observer = ObserverConfig(omega_f, n, mode=omode)
    extender = None
    if lt.get("enabled", False) or mode == BREGMAN:
        lam = _number(lt.get("forgetting", 0.1), "learner.forgetting")
        if lam < 0:
            raise ConfigError("learner.forgetting: must be non-negative")
        extender = FeatureExtender(p, lam)

    it = doc.get("initial", {})
    x0 = _vector(it.get("x0", [0.0] * n), n, "initial.x0")
    xm0 = _vector(it.get("xm0", [0.0] * n), n, "initial.xm0")
    th0 = _vector(it.get("theta_hat0", [0.0] * p), p, "initial.theta_hat0")

    gt = _get(doc, "integrator", "config", kind=dict)
    h = _positive(_number(gt.get("h", 1e-3), "integrator.h"), "integrator.h")
    duration = _positive(_number(_get(gt, "duration", "integrator"), "integrator.duration"), "integrator.duration")
    stride = _positive(_number(gt.get("stride", 1e-2), "integrator.stride"), "integrator.stride")
    if stride < h:
        raise ConfigError(f"integrator.stride: must be >= h ({h}), got {stride}")

    cmt = _get(doc, "command", "config", kind=dict)
    segs = _get(cmt, "segments", "command", kind=list)
    if not segs:
        raise ConfigError("command.segments: the command profile must have at least one segment")
    parsed = []
    for i, s in enumerate(segs):
        v = _numbers(s, f"command.segments[{i}]")
        if len(v) != 3:
            raise ConfigError(f"command.segments[{i}]: expected [start, end, value_deg]")
        parsed.append(v)
    try:
        command = CommandProfile(tuple(parsed))
    except ValueError as exc:
        raise ConfigError(f"command.segments: {exc}") from exc
    if command.end < duration:
        raise ConfigError(f"command.segments: profile ends at {command.end} s, before the run duration {duration} s")

    out = doc.get("output", {})
    directory = Path(out.get("directory", "out"))
    if base_dir is not None and not directory.is_absolute():
        directory = base_dir / directory
    formats = tuple(out.get("formats", ["csv"]))
    for f in formats:
        if f not in ("csv", "svg"):
            raise ConfigError(f"output.formats: unknown format {f!r}; use 'csv' or 'svg'")

    return ExperimentConfig(
        plant=plant, uncertainty=unc, baseline=baseline, coupling_type=ctype, k_P=k_P, k_I=k_I,
        K_e=K_e, mu=mu, W=W, p_norm=p_norm, mode=mode, Gamma=Gamma, Q=Q, phi_metric=phi_metric,
        observer=observer, extender=extender, x0=x0, xm0=xm0, theta_hat0=th0, h=h,
        duration=duration, stride=stride, command=command,
        output=OutputSpec(directory, formats), state_labels=labels, state_scales=scales,
        input_label=input_label)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: not valid TOML: {exc}") from exc
    return parse_config(doc, base_dir=path.parent)


def default_config() -> ExperimentConfig:
    return parse_config(tomllib.loads(preset_text()))


# -- grid --------------------------------------------------------------------

def _run_cell(args):
    config, cell = args
    traj, metrics = run_simulation(config.sim_config(cell))
    return cell, traj, metrics


def iter_results(config: ExperimentConfig, workers: int = 1):
    """Yield ``(cell, trajectory, metrics)`` in grid order."""
    jobs = [(config, cell) for cell in config.cells()]
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            yield _run_cell(job)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_cell, jobs)


def run_grid(config: ExperimentConfig, workers: int = 1) -> int:
    """Run every cell and write trajectories, the summary and optional plots.

    Returns a process exit status: diverged runs are flagged in the summary,
    only I/O failures give a nonzero status.
    """
    from . import report

    out = config.output.directory
    results = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for cell, traj, metrics in iter_results(config, workers):
            log.info("cell %s done%s", cell.key, " (diverged)" if metrics.diverged else "")
            if "csv" in config.output.formats:
                report.write_trajectory_csv(out / f"traj_{cell.key}.csv", traj, config)
            results.append((cell, traj, metrics))
        report.write_summary_csv(out / "summary.csv", [(c, m) for c, _, m in results])
        if "svg" in config.output.formats:
            report.write_figures(out, results, config)
    except OSError as exc:
        log.error("output failed: %s", exc)
        return 2
    return 0
