"""Figure rendering for the CLI report paths.

Every subcommand that writes a delimited artifact also renders a small
matplotlib figure next to it; figures are a convenience view of the CSV
content, never the primary record.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["figure.figsize"] = (6.4, 4.2)
plt.rcParams["font.size"] = 9
plt.rcParams["axes.grid"] = True
plt.rcParams["grid.alpha"] = 0.3


def _save(fig, path: str) -> str:
    tmp = path + ".tmp"
    fig.savefig(tmp, dpi=150, bbox_inches="tight", format="png")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def render_flow(path: str, s_values, positions, det_jac) -> str:
    """Trajectory in the plane (first two coordinates) plus the Jacobian determinant."""
    positions = np.asarray(positions)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.plot(positions[:, 0], positions[:, 1], "-o", ms=2.5, lw=0.8)
    ax1.plot(positions[0, 0], positions[0, 1], "ks", ms=5, label="seed")
    ax1.set_xlabel("y1")
    ax1.set_ylabel("y2")
    ax1.set_title("characteristic trajectory")
    ax1.axis("equal")
    ax1.legend(loc="best")
    ax2.plot(s_values, np.asarray(det_jac) - 1.0, lw=0.9)
    ax2.set_xlabel("s")
    ax2.set_ylabel("det dY - 1")
    ax2.set_title("measure preservation")
    return _save(fig, path)


def render_average(path: str, axes, tensor_values) -> str:
    """Heatmaps of the averaged tensor components on the sampling lattice."""
    vals = np.asarray(tensor_values)
    m = vals.shape[-1]
    fig, axs = plt.subplots(m, m, figsize=(3.0 * m, 2.6 * m), constrained_layout=True)
    axs = np.atleast_2d(axs)
    extent = [axes[0], axes[-1], axes[0], axes[-1]]
    for i in range(m):
        for j in range(m):
            im = axs[i, j].imshow(vals[..., i, j].T, origin="lower", extent=extent,
                                  cmap="RdBu_r")
            axs[i, j].set_title(f"component ({i + 1},{j + 1})")
            fig.colorbar(im, ax=axs[i, j], shrink=0.85)
    return _save(fig, path)


def render_solve(path: str, grid_axis, state, energy_trace, title: str) -> str:
    """Final state (heatmap or line) next to the energy ledger."""
    state = np.asarray(state)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.0))
    if state.ndim == 2:
        extent = [grid_axis[0], grid_axis[-1], grid_axis[0], grid_axis[-1]]
        im = ax1.imshow(state.T, origin="lower", extent=extent, cmap="viridis")
        fig.colorbar(im, ax=ax1, shrink=0.85)
    else:
        ax1.plot(grid_axis, state, lw=1.0)
        ax1.set_xlabel("y")
    ax1.set_title(title)
    tr = np.asarray(energy_trace)
    ax2.plot(tr[:, 0], tr[:, 1], label="half squared L2 norm", lw=1.0)
    ax2.plot(tr[:, 0], tr[:, 1] + tr[:, 2], "--", label="norm + dissipation", lw=1.0)
    ax2.set_xlabel("t")
    ax2.legend(loc="best")
    ax2.set_title("energy ledger")
    return _save(fig, path)


def render_converge(path: str, report) -> str:
    """Log-log error ladder with the fitted slope."""
    eps = np.asarray(report.eps_ladder)
    fig, ax = plt.subplots()
    ax.loglog(eps, report.errors_linf_l2, "o-", label="sup-t L2 state error")
    ax.loglog(eps, report.errors_grad_xp, "s-", label="time-L2 weighted gradient error")
    if report.corrected_errors:
        ax.loglog(eps, report.corrected_errors, "d-", label="corrected state error")
    ref = report.errors_linf_l2[0] * eps / eps[0]
    ax.loglog(eps, ref, "k:", lw=1.0, label="first order")
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("error")
    ax.set_title(f"fitted rates: state {report.fitted_rate:.2f}, "
                 f"gradient {report.fitted_rate_grad:.2f}")
    ax.legend(loc="best")
    return _save(fig, path)


def render_pairing(path: str, report) -> str:
    """Pairing deviations along the ladder."""
    eps = np.asarray(report.eps_ladder)
    fig, ax = plt.subplots()
    ax.loglog(eps, report.deviations, "o-", label="|pairing - limit|")
    ref = report.deviations[0] * eps / eps[0]
    ax.loglog(eps, ref, "k:", lw=1.0, label="first order")
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("deviation")
    ax.set_title(f"limit pairing {report.limit_value:.6g}")
    ax.legend(loc="best")
    return _save(fig, path)
