"""Figure helpers: one house style, deterministic PNG output."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}

# fixed colour limits so heatmaps from different runs are comparable
IMPROVEMENT_LIMITS = (-30.0, 30.0)

# approximate 2-D layout (x: left-right, y: front-back) of the 22-channel montage
SCALP_XY = {
    "Fz": (0, 2),
    "FC3": (-2, 1), "FC1": (-1, 1), "FCz": (0, 1), "FC2": (1, 1), "FC4": (2, 1),
    "C5": (-3, 0), "C3": (-2, 0), "C1": (-1, 0), "Cz": (0, 0), "C2": (1, 0), "C4": (2, 0), "C6": (3, 0),
    "CP3": (-2, -1), "CP1": (-1, -1), "CPz": (0, -1), "CP2": (1, -1), "CP4": (2, -1),
    "P1": (-1, -2), "Pz": (0, -2), "P2": (1, -2),
    "POz": (0, -3),
}


def figure(width=5.0, height=None):
    plt.rcParams.update(STYLE)
    if height is None:
        height = width * (math.sqrt(5) - 1) / 2
    return plt.subplots(figsize=(width, height))


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamp or version in the metadata, so reruns give identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def grouped_bars(ax, groups, series, values, ylabel="accuracy (%)"):
    """``values[s][g]``: one bar per series within each group; NaN leaves a gap."""
    x = np.arange(len(groups))
    width = 0.8 / max(len(series), 1)
    for k, name in enumerate(series):
        ys = np.array([values[name].get(g, np.nan) for g in groups], dtype=float)
        ax.bar(x + (k - (len(series) - 1) / 2) * width, ys, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(groups, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    if series:
        ax.legend(frameon=False, ncol=min(len(series), 4))
    return ax


def heatmap(ax, values, row_labels, col_labels, limits=IMPROVEMENT_LIMITS, fmt="{:.1f}",
            cmap="RdBu_r", label="relative improvement (%)", missing=None):
    """Annotated heatmap; ``None``/NaN cells are left blank.

    ``missing`` (same shape, bool) marks cells with no data at all; they get
    an ``n/a`` label so gaps are not mistaken for masked values.
    """
    data = np.array([[np.nan if v is None else v for v in row] for row in values], dtype=float)
    masked = np.ma.masked_invalid(data)
    cm = plt.get_cmap(cmap).copy()
    cm.set_bad("white")
    im = ax.imshow(masked, cmap=cm, vmin=limits[0], vmax=limits[1], aspect="auto")
    ax.set_xticks(range(len(col_labels)))
    ax.set_xticklabels(col_labels)
    ax.set_yticks(range(len(row_labels)))
    ax.set_yticklabels(row_labels)
    for i in range(data.shape[0]):
        for j in range(data.shape[1]):
            if np.isfinite(data[i, j]):
                ax.text(j, i, fmt.format(data[i, j]), ha="center", va="center", fontsize=7)
            elif missing is not None and missing[i][j]:
                ax.text(j, i, "n/a", ha="center", va="center", fontsize=6, color="0.5")
    ax.figure.colorbar(im, ax=ax, label=label)
    return im


def scalp_map(ax, scores: dict, title="", cmap="viridis"):
    """Channels drawn at their montage position, coloured by score in [0, 1]."""
    head = plt.Circle((0, -0.5), 3.9, fill=False, lw=1, color="0.4")
    ax.add_patch(head)
    cm = plt.get_cmap(cmap)
    extra = 0
    for ch in sorted(scores):
        if ch in SCALP_XY:
            x, y = SCALP_XY[ch]
        else:  # unknown position: park it under the head
            x, y = -3 + extra, -5
            extra += 1
        ax.scatter([x], [y], s=380, color=cm(float(scores[ch])), edgecolors="0.2", zorder=2)
        ax.text(x, y, ch, ha="center", va="center", fontsize=6, zorder=3,
                color="white" if float(scores[ch]) < 0.5 else "black")
    ax.set_xlim(-4.5, 4.5)
    ax.set_ylim(-5.8, 3.8)
    ax.set_aspect("equal")
    ax.axis("off")
    if title:
        ax.set_title(title)
    sm = plt.cm.ScalarMappable(cmap=cm, norm=matplotlib.colors.Normalize(0, 1))
    ax.figure.colorbar(sm, ax=ax, label="normalised usage", shrink=0.7)
