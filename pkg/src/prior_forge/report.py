"""Matplotlib figure rendering for report outputs.

Every figure-producing CLI path goes through here so reports keep a
consistent look. Uses the Agg backend; figures land next to the delimited
outputs they accompany.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .prior import Heatmap  # noqa: E402


def save_heatmap_figure(heatmap: Heatmap, path: str, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(heatmap.values, cmap="viridis", origin="upper",
                   extent=(0, heatmap.width, heatmap.height, 0))
    fig.colorbar(im, ax=ax, fraction=0.046)
    if title:
        ax.set_title(title)
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_center_histogram_figure(grid: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(grid, cmap="magma", origin="upper", extent=(0, 1, 1, 0))
    fig.colorbar(im, ax=ax, fraction=0.046, label="count")
    ax.set_title("Distribution of object centers")
    ax.set_xlabel("normalized x")
    ax.set_ylabel("normalized y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_area_density_figure(density: np.ndarray, edges: np.ndarray,
                             path: str) -> None:
    mids = np.sqrt(edges[:-1] * edges[1:])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(mids, density, marker="o", lw=1.5)
    ax.set_xscale("log")
    ax.set_title("Density of relative object area")
    ax.set_xlabel("box area / image area")
    ax.set_ylabel("density")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_calibration_figure(step_summaries: list[dict], chosen_step: int,
                            path: str) -> None:
    """Per-step expected cost and pass fraction, with the winner marked."""
    steps = [s["step"] for s in step_summaries]
    costs = [s["expected_cost"] for s in step_summaries]
    fractions = [s["pass_fraction"] for s in step_summaries]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(steps, costs, marker="o")
    ax1.axvline(chosen_step, color="red", ls="--", lw=1)
    ax1.set_xlabel("denoising step checked")
    ax1.set_ylabel("expected cost (time units)")
    ax1.set_title("Cost per calibration step")
    ax2.plot(steps, fractions, marker="s", color="tab:orange")
    ax2.axvline(chosen_step, color="red", ls="--", lw=1)
    ax2.set_xlabel("denoising step checked")
    ax2.set_ylabel("pass fraction")
    ax2.set_title("Proposals surviving the filter")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_eval_figure(metric_values: dict[str, float], path: str) -> None:
    names = list(metric_values)
    values = [metric_values[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values, color="tab:blue")
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.set_title("Placement metrics")
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=9)
    plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
