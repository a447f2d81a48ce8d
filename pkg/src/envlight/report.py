"""Report emitters for the evaluation protocols: JSON records, CSV tables
mirroring the per-material metric layout, and matplotlib figures rendered to
files alongside the delimited output."""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import MATERIAL_KINDS, MetricReport

METRIC_COLUMNS = ("si_rmse", "angular_error", "rmse")


def write_json(report: MetricReport, path: str | os.PathLike, include_timing: bool = True) -> None:
    payload = report.to_dict()
    if not include_timing:
        payload.pop("runtimes", None)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_entries_jsonl(report: MetricReport, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for entry in report.entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def write_three_sphere_csv(report: MetricReport, path: str | os.PathLike) -> None:
    """One row per metric, one column per material."""
    materials = [m for m in MATERIAL_KINDS if m in report.per_material]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + list(materials))
        for metric in METRIC_COLUMNS:
            row = [metric]
            for material in materials:
                value = report.per_material[material].get(metric)
                row.append("" if value is None else f"{value:.6f}")
            writer.writerow(row)


def write_robustness_csv(report: MetricReport, path: str | os.PathLike) -> None:
    modes = [k for k in ("rmse_on", "rmse_off") if any(k in s for s in report.per_bin.values())]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_id", "count", "mean_abs_log_s"] + modes)
        for bin_id in sorted(report.per_bin):
            stats = report.per_bin[bin_id]
            row = [bin_id, stats.get("count", 0), f"{stats.get('mean_abs_log_s', 0.0):.6f}"]
            row += [f"{stats[m]:.6g}" if m in stats else "" for m in modes]
            writer.writerow(row)


def plot_three_sphere(report: MetricReport, path: str | os.PathLike) -> None:
    """Grouped bar chart of mean metrics per material."""
    materials = [m for m in MATERIAL_KINDS if m in report.per_material]
    fig, axes = plt.subplots(1, len(METRIC_COLUMNS), figsize=(11, 3.2))
    for ax, metric in zip(axes, METRIC_COLUMNS):
        values = [report.per_material[m].get(metric) or 0.0 for m in materials]
        ax.bar(range(len(materials)), values, color="#4878a8")
        ax.set_xticks(range(len(materials)))
        ax.set_xticklabels(materials)
        ax.set_title(metric)
        ax.grid(axis="y", alpha=0.3)
    fig.suptitle("Three-sphere protocol")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_robustness(report: MetricReport, path: str | os.PathLike) -> None:
    """Per-bin RMSE curves, one line per refinement mode."""
    bins = sorted(report.per_bin)
    if not bins:
        return
    fig, ax = plt.subplots(figsize=(7, 3.5))
    x = np.arange(len(bins))
    for mode, style in (("rmse_off", "o--"), ("rmse_on", "s-")):
        values = [report.per_bin[b].get(mode) for b in bins]
        if any(v is not None for v in values):
            ax.plot(x, [v if v is not None else np.nan for v in values], style,
                    label=mode.replace("rmse_", "refinement "))
    ax.set_xticks(x)
    ax.set_xticklabels(bins, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("LDR RMSE")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.suptitle("Robustness protocol")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sphere_grid(
    spheres: dict[str, np.ndarray], path: str | os.PathLike, *, tone_scale: float = 1.0
) -> None:
    """Tile rendered sphere images into one labeled figure."""
    names = list(spheres)
    fig, axes = plt.subplots(1, len(names), figsize=(3 * len(names), 3.2))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        ax.imshow(np.clip(spheres[name] * tone_scale, 0.0, 1.0))
        ax.set_title(name, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_protocol_outputs(
    report: MetricReport,
    output_dir: str | os.PathLike,
    prefix: str,
    fmt: str = "json",
    include_timing: bool = True,
) -> list[Path]:
    """Write the aggregate record, per-entry JSONL, CSV table, and figure
    for a protocol run; returns the created paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    created = []
    json_path = out / f"{prefix}.json"
    write_json(report, json_path, include_timing=include_timing)
    created.append(json_path)
    entries_path = out / f"{prefix}_entries.jsonl"
    write_entries_jsonl(report, entries_path)
    created.append(entries_path)
    if fmt == "csv" or report.per_material:
        csv_path = out / f"{prefix}.csv"
        if report.per_material:
            write_three_sphere_csv(report, csv_path)
        else:
            write_robustness_csv(report, csv_path)
        created.append(csv_path)
    fig_path = out / f"{prefix}.png"
    if report.per_material:
        plot_three_sphere(report, fig_path)
    else:
        plot_robustness(report, fig_path)
    created.append(fig_path)
    return created
