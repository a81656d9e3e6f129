"""Report export: one SVG chart per task plus a flat CSV."""
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from pic3d.taskgen import LEVELS, SEGMENTATION, TASKS  # noqa: E402


def report_rows(report: dict) -> list[dict]:
    rows = []
    for task, res in report["results"].items():
        if task == SEGMENTATION:
            rows.append({"task": task, "level": "", "metric": "miou", "value": res["miou"], "count": res["count"]})
            continue
        for lv, v in res["levels"].items():
            rows.append({"task": task, "level": lv, "metric": "cd_x1000", "value": v["cd"], "count": v["count"]})
    return rows


def write_csv(report: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["task", "level", "metric", "value", "count"])
        w.writeheader()
        for row in report_rows(report):
            w.writerow({**row, "value": "" if row["value"] is None else f"{row['value']:.6g}"})


def plot_report(report: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for task in TASKS:
        res = report["results"].get(task)
        if res is None:
            continue
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        if task == SEGMENTATION:
            ax.bar(["mIoU"], [res["miou"]], color="tab:green")
            ax.set_ylim(0, 100)
            ax.set_ylabel("mIoU (%)")
        else:
            labels = [f"L{lv}" for lv in LEVELS]
            vals = [res["levels"][k]["cd"] or 0.0 for k in labels]
            ax.bar(labels, vals, color="tab:blue")
            ax.axhline(res["avg"], color="k", ls="--", lw=1, label=f"avg {res['avg']:.2f}")
            ax.set_ylabel("CD x1000")
            ax.legend(loc="upper left", fontsize=8)
        ax.set_title(f"{task} ({report['model']}, {report['strategy']})", fontsize=9)
        fig.tight_layout()
        path = out_dir / f"{task}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    csv_path = out_dir / "report.csv"
    write_csv(report, csv_path)
    written.append(csv_path)
    return written
