"""Figure output: a deterministic SVG scatter of 2-d embeddings and a
matplotlib diagnostic of the ELBO trace rendered alongside the reports.

The scatter is hand-assembled SVG so identical inputs produce identical
bytes: one ``circle`` element per point, colors from a fixed 20-color
categorical palette cycling by label, and a rect-swatch legend.
"""

from __future__ import annotations

import numpy as np

from .data import EmbeddingMatrix, LabelVector
from .errors import PreconditionError

PALETTE = (
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c",
    "#98df8a", "#d62728", "#ff9896", "#9467bd", "#c5b0d5",
    "#8c564b", "#c49c94", "#e377c2", "#f7b6d2", "#7f7f7f",
    "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
)


def scatter_svg(embedding: EmbeddingMatrix, labels: LabelVector) -> str:
    """Render a labeled 2-d scatter; requires p == 2."""
    if embedding.p != 2:
        raise PreconditionError(f"plot requires p=2, got p={embedding.p}")
    if labels.n != embedding.n:
        raise PreconditionError("labels do not match embedding rows")
    xy = embedding.values
    lab = labels.labels
    x_min, y_min = xy.min(axis=0)
    x_max, y_max = xy.max(axis=0)
    width = max(x_max - x_min, 1e-9)
    height = max(y_max - y_min, 1e-9)
    margin_x = 0.05 * width
    margin_y = 0.05 * height
    vb = (x_min - margin_x, y_min - margin_y, width + 2 * margin_x, height + 2 * margin_y)
    radius = 0.008 * max(width, height)
    font = 0.03 * max(width, height)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        (
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="{vb[0]:.6f} {vb[1]:.6f} {vb[2]:.6f} {vb[3]:.6f}">'
        ),
        '<g class="points">',
    ]
    # svg y-axis points down; mirror so the plot reads like standard axes
    flip = y_min + y_max
    for i in range(embedding.n):
        color = PALETTE[int(lab[i]) % len(PALETTE)]
        lines.append(
            f'<circle cx="{xy[i, 0]:.6f}" cy="{flip - xy[i, 1]:.6f}" '
            f'r="{radius:.6f}" fill="{color}"/>'
        )
    lines.append("</g>")
    lines.append('<g class="legend">')
    distinct = sorted(int(v) for v in np.unique(lab))
    for rank, value in enumerate(distinct):
        color = PALETTE[value % len(PALETTE)]
        sx = vb[0] + 0.5 * margin_x
        sy = vb[1] + 0.5 * margin_y + rank * 1.4 * font
        lines.append(
            '<g class="legend-entry">'
            f'<rect x="{sx:.6f}" y="{sy:.6f}" width="{font:.6f}" height="{font:.6f}" '
            f'fill="{color}"/>'
            f'<text x="{sx + 1.4 * font:.6f}" y="{sy + 0.85 * font:.6f}" '
            f'font-size="{font:.6f}">{value}</text>'
            "</g>"
        )
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_scatter_svg(embedding: EmbeddingMatrix, labels: LabelVector, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(scatter_svg(embedding, labels))


def write_elbo_figure(traces, path):
    """Plot one ELBO trajectory per replication to a raster file."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, trace in traces.items():
        ax.plot(range(1, len(trace) + 1), trace, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("evidence lower bound")
    if len(traces) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
