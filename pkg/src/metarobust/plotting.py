"""Matplotlib figures written next to the CSV outputs of the CLI."""

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
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

COLORS = {"worst": "#c0392b", "avg": "#7f8c8d", "best": "#27ae60"}


def _save(fig, path):
    # no timestamp metadata so repeated runs write identical files
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_ranges(results, path):
    """Grouped bars of mean worst/avg/best accuracy with std whiskers."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(results) + 1), 3))
        x = np.arange(len(results))
        for i, key in enumerate(("worst", "avg", "best")):
            means = [100 * r.aggregate[key][0] for r in results]
            stds = [100 * r.aggregate[key][1] for r in results]
            ax.bar(x + (i - 1) * 0.27, means, 0.27, yerr=stds, color=COLORS[key], label=key,
                   capsize=2)
        ax.set_xticks(x)
        ax.set_xticklabels([f"{r.method}\n{r.shot}-shot" for r in results], rotation=0)
        ax.set_ylabel("query accuracy (%)")
        ax.set_ylim(0, 100)
        ax.legend(frameon=False, ncol=3, loc="upper left")
        return _save(fig, path)


def plot_accuracy_histogram(values, path, worst=None, best=None, bins=20, title=None):
    """Histogram of random-support accuracies, worst/best marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        ax.hist(np.asarray(values) * 100, bins=bins, range=(0, 100), color=COLORS["avg"])
        if worst is not None:
            ax.axvline(100 * worst, color=COLORS["worst"], ls="--", label="worst case")
        if best is not None:
            ax.axvline(100 * best, color=COLORS["best"], ls="--", label="best case")
        ax.set_xlabel("query accuracy (%)")
        ax.set_ylabel("support sets")
        if title:
            ax.set_title(title)
        if worst is not None or best is not None:
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_search_trace(report, path):
    """Accuracy after each coordinate update of one search run."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        acc = [report.initial_accuracy] + [r.accuracy for r in report.per_round]
        ax.step(np.arange(len(acc)), np.asarray(acc) * 100, where="post",
                color=COLORS[report.mode])
        for r_idx, r in enumerate(report.per_round):
            if r_idx and r.iteration != report.per_round[r_idx - 1].iteration:
                ax.axvline(r_idx + 0.5, color="0.8", lw=0.8)
        ax.set_xlabel("coordinate update")
        ax.set_ylabel("query accuracy (%)")
        return _save(fig, path)


def plot_convergence(trace, path, initial=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        ys = list(trace) if initial is None else [initial] + list(trace)
        xs = np.arange(len(ys)) + (0 if initial is not None else 1)
        ax.plot(xs, np.asarray(ys) * 100, marker="o")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean accuracy (%)")
        return _save(fig, path)


def plot_projection(projection, path, title=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        xy = projection.mds.coordinates
        if xy.shape[1] < 2:
            xy = np.hstack([xy, np.zeros((len(xy), 2 - xy.shape[1]))])
        labels = projection.labels
        cmap = plt.get_cmap("tab10")
        q = ~projection.is_support
        ax.scatter(xy[q, 0], xy[q, 1], c=[cmap(int(k) % 10) for k in labels[q]], s=8, alpha=0.7)
        h = projection.is_highlighted
        if h.any():
            ax.scatter(xy[h, 0], xy[h, 1], c=[cmap(int(k) % 10) for k in labels[h]], s=90,
                       marker="*", edgecolors="k", linewidths=0.8)
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_margin_errors(report, path):
    """Exact error rates per trial against the proof-variant bound."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        both = report.in_core_1 & report.in_core_0
        err = np.maximum(report.exact_error, 1e-300)
        bins = np.logspace(np.log10(err.min()), 0, 40)
        ax.hist([err[both], err[~both]], bins=bins, stacked=True,
                label=["both in cores", "otherwise"], color=["#2c3e50", "#bdc3c7"])
        ax.axvline(report.error_bound_proof, color=COLORS["worst"], ls="--", label="bound")
        ax.set_xscale("log")
        ax.set_xlabel("exact misclassification rate")
        ax.set_ylabel("trials")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_train_log(log, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.8))
        ax.plot(log.epochs, log.loss, color="#2c3e50", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss")
        ax2 = ax.twinx()
        ax2.plot(log.epochs, np.asarray(log.val_accuracy) * 100, color=COLORS["best"])
        ax2.set_ylabel("validation accuracy (%)")
        return _save(fig, path)
