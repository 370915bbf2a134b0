"""Render training/eval reports to delimited files and matplotlib figures."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_loss_trace(path, trace):
    """Loss trace as CSV: step, loss."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in trace:
            writer.writerow([step, f"{loss:.6f}"])


def loss_curve_figure(path, trace, title="training loss"):
    steps = [s for s, _ in trace]
    losses = [l for _, l in trace]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def iou_histogram_figure(path, ious, title="per-object mIoU"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(ious, bins=20, range=(0, 1), color="#4878cf", edgecolor="white")
    ax.set_xlabel("IoU")
    ax.set_ylabel("objects")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def part_count_figure(path, pred_counts, gt_counts):
    fig, ax = plt.subplots(figsize=(4.5, 4))
    lim = max(max(pred_counts, default=1), max(gt_counts, default=1)) + 1
    ax.plot([0, lim], [0, lim], "k--", lw=0.8, alpha=0.5)
    ax.scatter(gt_counts, pred_counts, s=18, alpha=0.6)
    ax.set_xlabel("ground-truth parts")
    ax.set_ylabel("predicted parts")
    ax.set_xlim(0, lim)
    ax.set_ylim(0, lim)
    ax.set_title("part counts")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(report, out_dir, prefix="report"):
    """JSON + aligned text table + per-object CSV + figures for an EvalReport."""
    os.makedirs(out_dir, exist_ok=True)
    report.save(os.path.join(out_dir, f"{prefix}.json"))
    with open(os.path.join(out_dir, f"{prefix}.txt"), "w") as fh:
        fh.write(report.to_text() + "\n")
    rows = report.per_object
    if rows:
        cols = ["name"] + sorted({k for r in rows for k in r} - {"name"})
        with open(os.path.join(out_dir, f"{prefix}.csv"), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            writer.writerows(rows)
        iou_histogram_figure(os.path.join(out_dir, f"{prefix}_iou.png"),
                             [r["miou"] for r in rows])
        if all("n_pred" in r and "n_gt" in r for r in rows):
            part_count_figure(os.path.join(out_dir, f"{prefix}_parts.png"),
                              [r["n_pred"] for r in rows], [r["n_gt"] for r in rows])
    written = sorted(os.listdir(out_dir))
    return [os.path.join(out_dir, name) for name in written if name.startswith(prefix)]
