"""Render metric CSVs into markdown tables and simple plots."""

from __future__ import annotations

import csv
import os


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"empty CSV: {path}")
    return rows[0], rows[1:]


def markdown_table(header: list[str], rows: list[list[str]]) -> str:
    widths = [
        max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
        for i, h in enumerate(header)
    ]
    def fmt(cells):
        return "| " + " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)) + " |"
    lines = [fmt(header), "| " + " | ".join("-" * w for w in widths) + " |"]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def _ratio_series(rows: list[list[str]], prefix: str) -> tuple[list[float], list[float]]:
    xs, ys = [], []
    for task, metric, value in rows:
        if metric.startswith(prefix + "@"):
            xs.append(float(metric.split("@", 1)[1]))
            ys.append(float(value))
    return xs, ys


def plot_imputation(csv_path, out_png) -> bool:
    """Line plot of imputation accuracy and RMSE against the missing ratio.

    Returns False when the CSV holds no per-ratio imputation rows.
    """
    _, rows = read_csv(csv_path)
    acc_x, acc_y = _ratio_series(rows, "accuracy")
    rmse_x, rmse_y = _ratio_series(rows, "rmse")
    if not acc_x and not rmse_x:
        return False
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    if acc_x:
        axes[0].plot(acc_x, acc_y, marker="o")
    axes[0].set_xlabel("missing ratio")
    axes[0].set_ylabel("type accuracy")
    if rmse_x:
        axes[1].plot(rmse_x, rmse_y, marker="o", color="tab:red")
    axes[1].set_xlabel("missing ratio")
    axes[1].set_ylabel("time RMSE")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return True


def render_report(csv_paths: list, out_dir) -> str:
    """Markdown report covering each CSV; imputation tables also get a plot."""
    os.makedirs(out_dir, exist_ok=True)
    sections = []
    for path in csv_paths:
        header, rows = read_csv(path)
        name = os.path.splitext(os.path.basename(path))[0]
        section = f"## {name}\n\n" + markdown_table(header, rows)
        if header[:3] == ["task", "metric", "value"]:
            png = os.path.join(out_dir, f"{name}_imputation.png")
            if plot_imputation(path, png):
                section += f"\n![imputation]({os.path.basename(png)})\n"
        sections.append(section)
    text = "\n".join(sections)
    out_md = os.path.join(out_dir, "report.md")
    with open(out_md, "w", encoding="utf-8") as fh:
        fh.write(text)
    return out_md
