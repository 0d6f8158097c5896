"""Matplotlib renderings of training, evaluation and drift reports, written to image files.

The reports themselves live in ``evaluation`` and ``training``; this module
only draws them. The Agg backend is selected so figures render headless.
"""

import math

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
}


def _figure(width=6.0, height=None):
    height = height or width * (math.sqrt(5) - 1.0) / 2.0
    return plt.subplots(figsize=(width, height))


def _save(fig, path):
    fig.tight_layout()
    # no software/version metadata, so identical inputs give identical bytes
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def _by_count(counts, classes):
    """Classes sorted from most to fewest training samples."""
    classes = np.asarray(classes)
    return classes[np.argsort(-np.asarray(counts)[classes], kind="stable")]


def plot_prototype_shift(report, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        order = _by_count(report.train_counts, report.classes)
        ax.bar(np.arange(order.size), report.prototype_shift[order], color="tab:blue")
        ax.set_xlabel("class (sorted by training count, descending)")
        ax.set_ylabel("train/test prototype distance")
        return _save(fig, path)


def plot_tail_to_head(report, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        order = np.argsort(-report.train_counts[report.tail_classes], kind="stable")
        x = np.arange(order.size)
        ax.plot(x, report.train_to_head[order], "o-", ms=3, label="train features")
        ax.plot(x, report.test_to_head[order], "s-", ms=3, label="test features")
        ax.set_xlabel("tail class (sorted by training count, descending)")
        ax.set_ylabel("mean distance to nearest head prototype")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_nearest_head_counts(report, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        order = np.argsort(-report.train_counts[report.tail_classes], kind="stable")
        ax.bar(np.arange(order.size), report.distinct_nearest_heads[order], color="tab:green")
        ax.set_xlabel("tail class (sorted by training count, descending)")
        ax.set_ylabel("distinct nearest head classes")
        return _save(fig, path)


def plot_test_to_train(report, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        tail = report.tail_classes
        order = tail[np.argsort(-report.train_counts[tail], kind="stable")]
        x = np.arange(order.size)
        ax.bar(x - 0.2, report.test_to_train[order], width=0.4, label="original")
        ax.bar(x + 0.2, report.test_to_compensated[order], width=0.4, label="compensated")
        ax.set_xlabel("tail class (sorted by training count, descending)")
        ax.set_ylabel("mean distance to closest training feature")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_drift_report(report, outdir):
    """Render all drift figures into ``outdir``; returns the paths written."""
    from pathlib import Path

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [
        plot_prototype_shift(report, out / "prototype_shift.png"),
        plot_test_to_train(report, out / "test_to_train.png"),
    ]
    if report.tail_classes.size:
        paths.append(plot_tail_to_head(report, out / "tail_to_head.png"))
        paths.append(plot_nearest_head_counts(report, out / "nearest_head_count.png"))
    return paths


def plot_training_curves(train_report, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        epochs = np.arange(1, len(train_report.loss) + 1)
        ax.plot(epochs, train_report.loss_uniform, label="uniform branch")
        ax.plot(epochs, train_report.loss_balanced, label="balanced branch")
        ax.plot(epochs, train_report.loss, "k--", label="combined")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_class_accuracy(eval_report, train_counts, path):
    with plt.rc_context(STYLE):
        fig, ax = _figure()
        counts = np.asarray(train_counts)
        order = np.argsort(-counts, kind="stable")
        acc = eval_report.per_class[order]
        ax.bar(np.arange(order.size), np.nan_to_num(acc), color="tab:purple")
        ax.set_ylim(0, 1)
        ax.set_xlabel("class (sorted by training count, descending)")
        ax.set_ylabel("top-1 accuracy")
        ax.set_title(f"overall {eval_report.overall:.3f}")
        return _save(fig, path)
