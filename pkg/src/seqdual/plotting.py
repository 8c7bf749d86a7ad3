"""PNG rendering of control trajectories (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import Trajectory  # noqa: E402


def plot_controls(trajs: dict, path, title: str = "", bounds=None) -> None:
    """Overlay the control of each trajectory in ``trajs`` (label -> Trajectory).

    ``bounds`` is an optional ``(alpha, beta)`` pair of scalars drawn as dashed lines.
    """
    fig, ax = plt.subplots(figsize=(6.0, 3.7))
    for label, traj in trajs.items():
        ax.step(traj.grid.times, traj.controls, where="post", lw=1.2, label=str(label))
    if bounds is not None:
        for b in bounds:
            if b is not None and abs(b) < float("inf"):
                ax.axhline(b, color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("u(t)")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trajectory(traj: Trajectory, path, title: str = "") -> None:
    """States and control of one trajectory on stacked axes."""
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
    for j in range(traj.state_dim):
        ax_x.plot(traj.grid.times, traj.states[:, j], label=f"x{j + 1}")
    ax_x.set_ylabel("state")
    ax_x.legend(frameon=False)
    ax_u.step(traj.grid.times, traj.controls, where="post", color="k", lw=1.0)
    ax_u.set_xlabel("t")
    ax_u.set_ylabel("u(t)")
    if title:
        ax_x.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
