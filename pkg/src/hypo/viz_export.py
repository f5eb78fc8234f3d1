"""Plain-CSV exports of gradient-weight heatmaps, training curves and margin histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import HyperParams
from .metrics import ref_margin_stats
from .objectives import ObjectiveKind, batch_terms
from .trainer import METRIC_FIELDS


def _fmt(value: float) -> str:
    return format(float(value), ".12g")


@dataclass(frozen=True)
class GridSpec:
    theta_range: tuple = (-6.0, 6.0, 121)
    ref_range: tuple = (-6.0, 6.0, 121)

    def __post_init__(self):
        for name in ("theta_range", "ref_range"):
            lo, hi, n = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lo must be < hi")
            if int(n) != n or n < 2:
                raise ValueError(f"{name}: n_steps must be an integer >= 2")

    @property
    def theta_axis(self) -> np.ndarray:
        lo, hi, n = self.theta_range
        return np.linspace(lo, hi, int(n))

    @property
    def ref_axis(self) -> np.ndarray:
        lo, hi, n = self.ref_range
        return np.linspace(lo, hi, int(n))


def weight_heatmap(objective: ObjectiveKind, hp: HyperParams, grid: GridSpec) -> np.ndarray:
    """Gradient weight at every ``(delta_theta_i, delta_ref_j)``; rows index delta_theta."""
    dtheta, dref = np.meshgrid(grid.theta_axis, grid.ref_axis, indexing="ij")
    _, weight, _ = batch_terms(objective, dtheta, dref, hp)
    return weight


def export_heatmap_csv(matrix, grid: GridSpec, path) -> Path:
    """First row holds delta_ref coordinates, first column delta_theta coordinates."""
    matrix = np.asarray(matrix)
    theta, ref = grid.theta_axis, grid.ref_axis
    if matrix.shape != (theta.size, ref.size):
        raise ValueError(f"matrix shape {matrix.shape} does not match grid ({theta.size}, {ref.size})")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["delta_theta\\delta_ref"] + [_fmt(v) for v in ref])
        for i, t in enumerate(theta):
            writer.writerow([_fmt(t)] + [_fmt(v) for v in matrix[i]])
    return path


def read_heatmap_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of :func:`export_heatmap_csv`: ``(theta_axis, ref_axis, matrix)``."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    ref = np.array([float(v) for v in rows[0][1:]])
    theta = np.array([float(r[0]) for r in rows[1:]])
    matrix = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return theta, ref, matrix


def export_curves(runlogs, path, metrics=METRIC_FIELDS) -> Path:
    """Long-format ``run_name, step, metric, value`` rows; missing values are blank."""
    runlogs = list(runlogs)
    if not runlogs:
        raise ValueError("no run logs to export")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run_name", "step", "metric", "value"])
        for log in runlogs:
            for entry in log.entries:
                for metric in metrics:
                    value = getattr(entry, metric)
                    writer.writerow([log.name, entry.step, metric, "" if value is None else _fmt(value)])
    return path


def export_margin_histogram(ref_policy, dataset, n_bins: int, path) -> Path:
    """Histogram of reference margins plus ``mean``/``median``/``fraction_pessimistic`` footer rows."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    margins = ref_policy.margins(dataset.prompt_ids, dataset.chosen_ids, dataset.rejected_ids)
    stats = ref_margin_stats(ref_policy, dataset)
    lo, hi = float(margins.min()), float(margins.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(margins, bins=n_bins, range=(lo, hi))
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_left", "bin_right", "count"])
        for k in range(n_bins):
            writer.writerow([_fmt(edges[k]), _fmt(edges[k + 1]), int(counts[k])])
        for key in ("mean", "median", "fraction_pessimistic"):
            writer.writerow([key, _fmt(stats[key]), ""])
    return path


def read_margin_histogram(path) -> tuple[list, dict]:
    """Return ``([(left, right, count), ...], footer_stats)``."""
    bins, footer = [], {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    for row in rows:
        if row[0] in ("mean", "median", "fraction_pessimistic"):
            footer[row[0]] = float(row[1])
        else:
            bins.append((float(row[0]), float(row[1]), int(row[2])))
    return bins, footer
