"""Convergence figures written next to the CSV output."""
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 7.0

params = {
    "axes.labelsize": 10,
    "font.family": "serif",
    "font.size": 9,
    "mathtext.fontset": "stix",
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "lines.markersize": 5,
    "lines.linewidth": 1.2,
    "figure.dpi": 150,
}

STYLE = {"curved": ("o-", "#08589e"), "straight": ("s--", "#e34a33"),
         "patch": ("^-", "#31a354")}


def _reference_slope(ax, h, e, order, label):
    """Dotted line of the given slope anchored at the last data point."""
    h = np.asarray(h)
    ref = e[-1] * (h / h[-1]) ** order
    ax.loglog(h, ref, ":", color="0.4", lw=0.9)
    ax.annotate(label, (h[0], ref[0]), textcoords="offset points", xytext=(4, 0),
                fontsize=8, color="0.3")


def plot_convergence(records, path):
    """Velocity energy error and pressure L2 error against the effective mesh size.

    ``records`` maps a geometry label to a ConvergenceRecord.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(params):
        fig, axes = plt.subplots(1, 2, figsize=(fig_width, fig_width * golden_mean / 1.6))
        for ax, attr, title in ((axes[0], "energy_error_u", r"$\|u-u_h\|_{\Omega_h}$"),
                                (axes[1], "l2_error_p", r"$\|p-p_h\|_{L^2(\Omega_h)}$")):
            for geom, rec in records.items():
                if not rec.reports:
                    continue
                h = [r.extra.get("h_eff", r.h) for r in rec.reports]
                e = np.array([getattr(r, attr) for r in rec.reports])
                fmt, color = STYLE.get(geom, ("o-", None))
                ax.loglog(h, e, fmt, color=color, label=geom)
            first = next((r for r in records.values() if len(r.reports) > 1), None)
            if first is not None:
                h = [r.extra.get("h_eff", r.h) for r in first.reports]
                e = np.array([getattr(r, attr) for r in first.reports])
                _reference_slope(ax, h, e, 2.0, r"$h^2$")
                _reference_slope(ax, h, 3 * e, 1.5, r"$h^{3/2}$")
            ax.set_xlabel(r"$h$")
            ax.set_title(title)
            ax.grid(True, which="both", lw=0.3, alpha=0.5)
            ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def plot_residual_history(history, path):
    """Semilog plot of the MINRES relative residual per iteration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(fig_width / 2, fig_width / 2 * golden_mean))
        ax.semilogy(np.arange(len(history)), history, "-", color="#08589e")
        ax.set_xlabel("iteration")
        ax.set_ylabel("relative residual")
        ax.grid(True, which="both", lw=0.3, alpha=0.5)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
