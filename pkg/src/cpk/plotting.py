"""Static figures written next to the CSV/JSON outputs (Agg backend, no timestamps)."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_frontier(points: Sequence[tuple], path, pi_points: Sequence[tuple] = (),
                  xlabel: str = "expected cost") -> None:
    """``points`` and ``pi_points`` are ``(cost, return)`` pairs."""
    fig, ax = plt.subplots(figsize=(5, 4))
    if points:
        xs, ys = zip(*points)
        ax.plot(xs, ys, "o-", color="tab:red", label="CMDP")
    if pi_points:
        xs, ys = zip(*pi_points)
        ax.plot(xs, ys, "s--", color="tab:blue", label="PI", alpha=0.7)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("expected return")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_outcomes(starts: Sequence[str], values_b, values_e, names: Sequence[str], path) -> None:
    """Grouped bars of each outcome per start for both policies."""
    M = len(names)
    fig, axes = plt.subplots(M, 1, figsize=(max(4, 0.5 * len(starts) + 2), 2.4 * M), squeeze=False)
    xs = range(len(starts))
    for m, ax in enumerate(axes[:, 0]):
        ax.bar([x - 0.2 for x in xs], [v[m] for v in values_b], 0.4, label="π_b")
        ax.bar([x + 0.2 for x in xs], [v[m] for v in values_e], 0.4, label="π_e")
        ax.set_xticks(list(xs))
        ax.set_xticklabels(starts, fontsize=7)
        ax.set_title(names[m], fontsize=9)
    axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_nav(trajectories: dict, path, region_boxes: Sequence = (), reward_boxes: Sequence = (),
             goal_x: float = 0.95) -> None:
    """Trajectories on the unit square with reward boxes (red) and diverging regions (blue)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for ((x0, x1), (y0, y1)), value in reward_boxes:
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, ec="tab:red", lw=1.5))
        ax.text(x0 + 0.01, y0 + 0.01, f"{value:g}", color="tab:red", fontsize=8)
    for (x0, x1), (y0, y1) in region_boxes:
        ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, color="tab:blue", alpha=0.25))
    ax.axvspan(goal_x, 1.0, color="gold", alpha=0.3)
    for name, traj in trajectories.items():
        xs = [s[0] for s in traj.states]
        ys = [s[1] for s in traj.states]
        ax.plot(xs, ys, "o-", ms=3, label=name)
    ax.set_xlim(0, 1.05)
    ax.set_ylim(0, 1)
    ax.set_aspect("equal")
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    _save(fig, path)
