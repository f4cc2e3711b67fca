"""Figures written next to the CSV exports of a run directory."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120
STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
}
BEFORE = "tab:red"
AFTER = "tab:blue"


def _save(fig, path) -> None:
    fig.savefig(path, dpi=DPI, metadata={"Software": None})
    plt.close(fig)


def energy_per_class(path, counts, nfe_before, nfe_after=None) -> None:
    """Training counts as bars with negative free energies on a twin axis."""
    counts = np.asarray(counts)
    c = np.arange(counts.size)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        ax.bar(c, counts, color="0.8", label="train count")
        ax.set_xlabel("class")
        ax.set_ylabel("training samples")
        ax.set_xticks(c)
        twin = ax.twinx()
        twin.plot(c, nfe_before, "o-", color=BEFORE, label="before")
        if nfe_after is not None:
            twin.plot(c, nfe_after, "s--", color=AFTER, label="after")
        twin.set_ylabel("negative free energy")
        twin.legend(loc="upper right", frameon=False)
        _save(fig, path)


def confusion_pair(path, before, after, title_before="uncorrected", title_after="corrected") -> None:
    """Side-by-side log1p confusion matrices (rows = true class)."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.6))
        vmax = np.log1p(max(np.max(before), np.max(after), 1))
        for ax, cm, title in zip(axes, (before, after), (title_before, title_after)):
            im = ax.imshow(np.log1p(cm), cmap="viridis", vmin=0, vmax=vmax)
            ax.set_title(title)
            ax.set_xlabel("predicted")
            ax.set_ylabel("true")
            ax.grid(False)
        fig.colorbar(im, ax=axes, shrink=0.8, label="log(1 + count)")
        _save(fig, path)


def accuracy_per_step(path, classes_seen, acc_raw, acc_fixed) -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot(classes_seen, acc_raw, "o-", color=BEFORE, label="uncorrected")
        ax.plot(classes_seen, acc_fixed, "s-", color=AFTER, label="corrected")
        ax.set_xlabel("classes seen")
        ax.set_ylabel("top-1 accuracy (%)")
        ax.legend(frameon=False)
        _save(fig, path)
