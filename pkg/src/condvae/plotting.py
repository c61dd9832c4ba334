"""Report figures: training curves and labelled image rows."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def plot_history(history, path, title: str | None = None):
    """Two panels: training loss terms, and test NLL per evaluation point."""
    steps = [rec["step"] for rec in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_nll) = plt.subplots(1, 2, figsize=(8, 3))
        for key in ("total", "recon", "kl"):
            ax_loss.plot(steps, [rec[key] for rec in history], marker="o", ms=3, label=key)
        ax_loss.set_xlabel("step")
        ax_loss.set_ylabel("training loss (nats / image)")
        ax_loss.legend(frameon=False)
        ax_nll.plot(steps, [rec["test_nll"] for rec in history], marker="o", ms=3, color="k")
        best = int(np.argmin([rec["test_nll"] for rec in history]))
        ax_nll.scatter([steps[best]], [history[best]["test_nll"]], color="tab:red", zorder=3, label="best")
        ax_nll.set_xlabel("step")
        ax_nll.set_ylabel("test NLL (nats / image)")
        ax_nll.legend(frameon=False)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_image_rows(rows, path, title: str | None = None):
    """``rows`` is a list of (label, uint8 array (N, H, W, C)); one figure row per entry."""
    n_rows = len(rows)
    n_cols = max(len(images) for _, images in rows)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.1 * n_cols + 1.2, 1.1 * n_rows), squeeze=False)
        for r, (label, images) in enumerate(rows):
            for c in range(n_cols):
                ax = axes[r, c]
                ax.set_xticks([])
                ax.set_yticks([])
                for spine in ax.spines.values():
                    spine.set_visible(False)
                if c < len(images):
                    img = images[c]
                    ax.imshow(img[..., 0] if img.shape[-1] == 1 else img, cmap="gray" if img.shape[-1] == 1 else None,
                              vmin=0, vmax=255, interpolation="nearest")
            axes[r, 0].set_ylabel(label, rotation=0, ha="right", va="center")
        if title:
            fig.suptitle(title)
        fig.savefig(path)
        plt.close(fig)


def plot_metric_bars(reports, path, keys=("test_nll", "fid_recon", "fid_sampled")):
    """Side-by-side bars of the metric reports, one panel per metric; ``reports`` maps a name to a report dict."""
    names = list(reports)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(keys), figsize=(3 * len(keys), 2.8), squeeze=False)
        for ax, key in zip(axes[0], keys):
            ax.bar(range(len(names)), [reports[n][key] for n in names], color="0.6")
            ax.set_xticks(range(len(names)), names, rotation=20, ha="right")
            ax.set_title(key)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
