"""Figure builders: convergence loglog, field heatmap, step history.

All output is static PNG via the Agg backend; figures are deterministic for
fixed input (no timestamps in metadata, fixed dpi and layout).
"""

import warnings

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .frames import read_field, read_report, read_steps  # noqa: E402

_SAVE_KWARGS = {"dpi": 110, "metadata": {"Software": None}}


def _tail_slope(n_u, err):
    """Least-squares slope of log(err) vs log(n_u) over the decaying tail."""
    good = np.isfinite(err) & (err > 0)
    n_u, err = n_u[good], err[good]
    if len(n_u) < 2:
        return None
    order = np.argsort(n_u)
    n_u, err = n_u[order], err[order]
    tail = n_u >= n_u[max(0, len(n_u) - 4)]
    return float(np.polyfit(np.log(n_u[tail]), np.log(err[tail]), 1)[0])


def plot_convergence(report_csv, out_path, group_by="k", column="rel_l2"):
    """Loglog error-vs-N_u curves, one series per group, tail slopes annotated."""
    frame = read_report(report_csv)
    fig, ax = plt.subplots(figsize=(5.4, 4.2))
    plotted = 0
    for value in frame.groups(group_by):
        rows = frame.select(group_by, value)
        ok = np.isfinite(rows[column]) & (rows[column] > 0)
        if np.sum(ok) < 2:
            warnings.warn(f"group {group_by}={value} has fewer than two "
                          "valid rows; skipped")
            continue
        n_u, err = rows["n_u"][ok], rows[column][ok]
        slope = _tail_slope(n_u, err)
        label = f"{group_by}={value:g}"
        if slope is not None:
            label += f" (slope {slope:.2f})"
        ax.loglog(n_u, err, "o-", label=label)
        plotted += 1
    if plotted == 0:
        plt.close(fig)
        raise ValueError("no plottable groups in the report")
    ax.set_xlabel("$N_u$")
    ax.set_ylabel(column)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return out_path


def plot_field(field_csv, out_path, cmap="RdBu_r"):
    """Heatmap of a grid field with exterior nodes masked out."""
    frame = read_field(field_csv)
    masked = np.ma.masked_invalid(frame.values)
    fig, ax = plt.subplots(figsize=(5.0, 4.6))
    extent = [-frame.box_half_length, frame.box_half_length,
              -frame.box_half_length, frame.box_half_length]
    # values[ix, iy]: x is the row index, so transpose for imshow's (row=y)
    im = ax.imshow(masked.T, origin="lower", extent=extent, cmap=cmap,
                   interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return out_path


def plot_steps(steps_csv, out_path):
    """Step-size history; accepted steps solid, rejected attempts marked."""
    frame = read_steps(steps_csv)
    fig, ax = plt.subplots(figsize=(5.4, 4.0))
    acc = frame.accepted
    ax.semilogy(frame.t[acc], frame.dt[acc], "o-", ms=3, label="accepted")
    if np.any(~acc):
        ax.semilogy(frame.t[~acc], frame.dt[~acc], "x", color="tab:red",
                    label="rejected")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\delta t$")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KWARGS)
    plt.close(fig)
    return out_path
