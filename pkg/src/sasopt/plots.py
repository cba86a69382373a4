"""SVG charts for retrieval accuracy and landing positions.

Figures are written with a fixed hash salt and no date metadata, so the same
data always produces the same SVG bytes.

Licensed under the Apache License, Version 2.0
"""

import io
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "sasopt"


def _save_svg(fig, path: Optional[Path]) -> str:
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    plt.close(fig)
    svg = buffer.getvalue()
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(svg, encoding="utf-8")
        logger.debug(f"Wrote {path}")
    return svg


def retrieval_bar_chart(results, path: Optional[Path] = None) -> str:
    """Grouped Top-1/5/10 bars per objective. Returns the SVG text."""
    labels = [r.objective_id for r in results]
    series = {
        "Top-1": [r.top1 for r in results],
        "Top-5": [r.top5 for r in results],
        "Top-10": [r.top10 for r in results],
    }
    x = np.arange(len(labels))
    width = 0.26

    fig, ax = plt.subplots(figsize=(8, 3.5))
    for offset, (name, values) in zip((-width, 0.0, width), series.items()):
        ax.bar(x + offset, values, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend(loc="upper right", ncol=3, fontsize="small")
    fig.tight_layout()
    return _save_svg(fig, path)


def landing_scatter(
    points: Sequence[Tuple[float, float]],
    path: Optional[Path] = None,
    *,
    seed_points: Sequence[Tuple[float, float]] = (),
    target: Optional[Tuple[float, float]] = None,
    table_half_width: float = 0.7625,
    table_depth: float = 1.37,
    title: str = "",
) -> str:
    """Landing positions on the opponent's half, colored by order of execution."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_patch(Rectangle(
        (-table_half_width, 0.0), 2 * table_half_width, table_depth,
        fill=False, edgecolor="0.3", linewidth=1.0,
    ))
    if len(seed_points):
        seeds = np.asarray(seed_points, dtype=float)
        ax.scatter(seeds[:, 0], seeds[:, 1], c="0.7", s=14, marker="x", label="seed cache")
    if len(points):
        landed = np.asarray(points, dtype=float)
        order = np.arange(1, len(landed) + 1)
        dots = ax.scatter(landed[:, 0], landed[:, 1], c=order, cmap="viridis", s=18,
                          label="iterations")
        fig.colorbar(dots, ax=ax, label="iteration")
    if target is not None:
        ax.scatter([target[0]], [target[1]], c="red", s=60, marker="*", label="goal")
    ax.set_xlim(-table_half_width - 0.3, table_half_width + 0.3)
    ax.set_ylim(-0.2, table_depth + 0.3)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    if title:
        ax.set_title(title)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    return _save_svg(fig, path)
