"""Report figures: precision-recall curves and AP against horizon.

Figures are written to files with the non-interactive Agg backend.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import precision_recall_curve  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "axes.labelsize": 9,
    "font.size": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
}


def pr_curves(probs, truth, names, path, title=None, max_classes: int = 12):
    """One precision-recall curve per class (classes without positives skipped)."""
    probs, truth = np.asarray(probs), np.asarray(truth)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        drawn = 0
        for c, name in enumerate(names):
            if drawn >= max_classes:
                break
            if not (truth[:, c] > 0).any():
                continue
            precision, recall = precision_recall_curve(probs[:, c], truth[:, c])
            ax.plot(np.concatenate([[0.0], recall]), np.concatenate([[1.0], precision]), lw=1, label=name)
            drawn += 1
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        if title:
            ax.set_title(title)
        if drawn:
            ax.legend(loc="lower left", frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path


def ap_vs_horizon(reports, path, baselines=None):
    """mAP per horizon; ``baselines`` maps a name to {horizon: mAP}."""
    horizons = sorted(reports)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(horizons, [reports[h].mean_ap for h in horizons], "o-", label="HGT")
        for name, values in (baselines or {}).items():
            hs = [h for h in horizons if h in values and not math.isnan(values[h])]
            ax.plot(hs, [values[h] for h in hs], "s--", lw=1, label=name)
        ax.set_xlabel("horizon (frames)")
        ax.set_ylabel("mAP")
        ax.set_xticks(horizons)
        ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
