"""Report figures, rendered headless to image files next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120
AXIS_LABELS = ("phi", "psi", "theta")


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_prediction(report, path, max_points: int = 2000) -> Path:
    """Predicted against recorded servo angle, one panel per actuator."""
    order = np.argsort(report.t, kind="stable")[:max_points]
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    for j, ax in enumerate(axes):
        ax.plot(np.degrees(report.truth[order, j]), lw=1.0, label="recorded")
        ax.plot(np.degrees(report.prediction[order, j]), lw=0.8, ls="--", label="predicted")
        ax.set_ylabel(f"theta{j + 1} [deg]")
        ax.set_title(f"MAE {report.mae[j]:.3f} deg", fontsize=9)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("test sample")
    return _save(fig, path)


def plot_tracking(report, path) -> Path:
    """Desired and observed Z-Y-X Euler angles over time."""
    des, act = report.desired_euler, report.actual_euler
    mae = report.mae
    fig, axes = plt.subplots(3, 1, figsize=(8, 6), sharex=True)
    for j, ax in enumerate(axes):
        ax.plot(report.t, des[:, j], lw=1.2, label="desired")
        ax.plot(report.t, act[:, j], lw=0.8, label="actual")
        ax.set_ylabel(f"{AXIS_LABELS[j]} [deg]")
        ax.set_title(f"MAE {mae[j]:.3f} deg", fontsize=9)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    return _save(fig, path)


def plot_endpoint(points: np.ndarray, path) -> Path:
    """Path of the unit stick tip along the output z axis."""
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    ax.plot(points[:, 0], points[:, 1], points[:, 2], lw=0.8)
    ax.scatter([0], [0], [0], color="k", s=10)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("z")
    return _save(fig, path)


def plot_scan(scan, path) -> Path:
    """|sin theta5| over the actuator grid; unreachable points left blank."""
    t1 = np.unique(scan.theta1)
    t2 = np.unique(scan.theta2)
    grid = np.full((len(t2), len(t1)), np.nan)
    i = np.searchsorted(t1, scan.theta1)
    j = np.searchsorted(t2, scan.theta2)
    vals = np.where(scan.reachable, np.abs(scan.sin_theta5), np.nan)
    grid[j, i] = vals
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(t1, t2, grid, shading="nearest", cmap="viridis", vmin=0.0, vmax=1.0)
    fig.colorbar(mesh, ax=ax, label="|sin theta5|")
    ax.set_xlabel("theta1 [rad]")
    ax.set_ylabel("theta2 [rad]")
    ax.set_title(f"singular fraction {scan.singular_fraction:.3f}", fontsize=9)
    return _save(fig, path)
