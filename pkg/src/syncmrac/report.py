"""CSV and SVG output for grid runs."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

SUMMARY_FIELDS = ("k_P", "k_I", "mu", "peak_abs_output", "rms_tracking_error",
                  "input_total_variation", "peak_theta_rate", "final_theta_error",
                  "lyapunov_monotone", "lyapunov_max_violation", "diverged")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    return format(float(x), ".17g")


def trajectory_columns(traj, config) -> dict[str, np.ndarray]:
    """Column name -> values, angles in degrees where the plant labels say so."""
    labels = config.state_labels or tuple(f"x{i + 1}" for i in range(traj.x.shape[1]))
    scales = config.state_scales or (1.0,) * len(labels)
    cols = {"t": traj.t}
    for i, (lab, sc) in enumerate(zip(labels, scales)):
        cols[lab] = traj.x[:, i] * sc
    for prefix, arr in (("xm", traj.x_m), ("xid", traj.x_id)):
        for i, (lab, sc) in enumerate(zip(labels, scales)):
            cols[f"{prefix}_{lab}"] = arr[:, i] * sc
    cols[config.input_label] = traj.u
    for name in ("u_base", "u_ad", "u_c", "Delta", "Delta_hat", "norm_e", "norm_edot",
                 "norm_theta_tilde", "norm_theta_hat_dot", "V"):
        cols[name] = getattr(traj, name)
    for i in range(traj.theta_hat.shape[1]):
        cols[f"theta_hat_{i + 1}"] = traj.theta_hat[:, i]
    return cols


def write_trajectory_csv(path, traj, config) -> None:
    cols = trajectory_columns(traj, config)
    names = list(cols)
    data = np.column_stack([cols[k] for k in names])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in data:
            w.writerow([_fmt(v) for v in row])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return {k: data[:, i] for i, k in enumerate(names)}


def write_summary_csv(path, results) -> None:
    """One row per cell, sorted by ``k_P`` then ``k_I`` then ``mu``."""
    results = sorted(results, key=lambda cm: (cm[0].k_P, cm[0].k_I or 0.0, cm[0].mu))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for cell, m in results:
            d = m.as_dict()
            row = [cell.k_P, cell.k_I, cell.mu] + [d[k] for k in SUMMARY_FIELDS[3:]]
            w.writerow([_fmt(v) for v in row])


def read_summary_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# (file stem, title, function of (trajectory, config) -> list of (label, values))
def _fig_specs(config):
    scale0 = (config.state_scales or (1.0,))[0]
    scale1 = (config.state_scales or (1.0, 1.0))[1] if len(config.state_scales) > 1 else 1.0
    return [
        ("fig_alpha", "Output state", lambda tr: [("plant", tr.x[:, 0] * scale0),
                                                  ("virtual", tr.x_m[:, 0] * scale0),
                                                  ("command", np.degrees(tr.r) if scale0 != 1.0 else tr.r)]),
        ("fig_q", "Second state", lambda tr: [("plant", tr.x[:, 1] * scale1),
                                              ("virtual", tr.x_m[:, 1] * scale1)]),
        ("fig_u", "Plant input", lambda tr: [("u", tr.u), ("u_base", tr.u_base),
                                             ("u_ad", tr.u_ad), ("u_c", tr.u_c)]),
        ("fig_delta", "Uncertainty", lambda tr: [("Delta", tr.Delta), ("-u_ad", -tr.u_ad),
                                                 ("-u_ad-u_c", -tr.u_ad - tr.u_c)]),
        ("fig_norm_e", "|e|", lambda tr: [("|e|", tr.norm_e)]),
        ("fig_norm_edot", "|de/dt|", lambda tr: [("|de/dt|", tr.norm_edot)]),
        ("fig_norm_theta_tilde", "|theta_tilde|", lambda tr: [("|theta_tilde|", tr.norm_theta_tilde)]),
        ("fig_norm_theta_hat_dot", "|dtheta_hat/dt|", lambda tr: [("|dtheta_hat/dt|", tr.norm_theta_hat_dot)]),
    ]


def write_figures(out: Path, results, config) -> list[Path]:
    """One SVG per quantity, one panel per cell (rows: coupling gain, columns: mu)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    gains = sorted({(c.k_P, c.k_I) for c, _, _ in results}, key=lambda g: (g[0], g[1] or 0.0))
    mus = sorted({c.mu for c, _, _ in results})
    by_cell = {((c.k_P, c.k_I), c.mu): tr for c, tr, _ in results}
    paths = []
    for stem, title, series in _fig_specs(config):
        fig, axes = plt.subplots(len(gains), len(mus), sharex=True, squeeze=False,
                                 figsize=(3.2 * len(mus), 2.0 * len(gains)))
        for i, g in enumerate(gains):
            for j, mu in enumerate(mus):
                ax = axes[i][j]
                tr = by_cell.get((g, mu))
                if tr is None:
                    ax.set_axis_off()
                    continue
                for label, values in series(tr):
                    ax.plot(tr.t, values, lw=0.8, label=label)
                gl = f"k_P={g[0]:g}" + (f", k_I={g[1]:g}" if g[1] is not None else "")
                ax.set_title(f"({gl}, mu={mu:g})", fontsize=8)
                ax.tick_params(labelsize=7)
        axes[0][0].legend(fontsize=6)
        fig.suptitle(title)
        fig.tight_layout()
        path = Path(out) / f"{stem}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(path)
    return paths


def format_summary(results) -> str:
    lines = [f"{'k_P':>8} {'mu':>5} {'peak|y|':>10} {'TV(u)':>10} {'sup|dth|':>10} {'|th~(T)|':>10} {'V mono':>7}"]
    for cell, m in sorted(results, key=lambda cm: (cm[0].k_P, cm[0].k_I or 0.0, cm[0].mu)):
        kp = "-" if math.isnan(cell.k_P) else f"{cell.k_P:g}"
        lines.append(f"{kp:>8} {cell.mu:>5g} {m.peak_abs_output:>10.4g} {m.input_total_variation:>10.4g} "
                     f"{m.peak_theta_rate:>10.4g} {m.final_theta_error:>10.4g} {str(m.lyapunov_monotone):>7}")
    return "\n".join(lines)
