"""Flat-file outputs: result CSVs, AMP trace CSVs, complex-matrix dumps and SVG plots."""

from __future__ import annotations

import contextlib
import csv
import math
import os
import tempfile
from collections import defaultdict
from pathlib import Path

import numpy as np

RESULT_COLUMNS = (
    "experiment",
    "algorithm",
    "grid_value",
    "seed",
    "ade",
    "nmse_db",
    "iterations",
    "mac_count",
    "wall_time_s",
    "flags",
    "nmse_trace_db",
)
TRACE_COLUMNS = ("t", "nmse_proxy", "mean_lambda", "mean_phi", "mac_cumulative")


def fmt(value) -> str:
    """Shortest round-trip text for numbers; empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _db(x: float) -> float:
    if math.isnan(x):
        return math.nan
    return 10 * math.log10(x) if x > 0 else -math.inf


@contextlib.contextmanager
def atomic_write(path, mode: str = "w", newline: str | None = ""):
    """Write to a temporary sibling and rename on success; nothing is left behind on failure."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".part")
    try:
        with os.fdopen(fd, mode, newline=newline, encoding="utf-8") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def result_rows(experiment: str, records, wall_time: bool = False):
    for r in records:
        yield [
            experiment,
            r.algorithm,
            fmt(r.grid_value),
            fmt(r.seed),
            fmt(r.ade),
            fmt(r.nmse_db),
            fmt(r.iterations),
            fmt(r.mac_count),
            fmt(r.wall_time) if wall_time else "",
            r.flags,
            ";".join(fmt(_db(v)) for v in r.nmse_trace),
        ]


def write_results_csv(path, experiment: str, records, wall_time: bool = False) -> None:
    """One row per (algorithm, grid value, seed).

    Wall time is machine dependent; it is left blank unless requested so that
    reruns of the same manifest produce identical bytes.
    """
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(result_rows(experiment, records, wall_time))


def read_results_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_trace_csv(path, trace: list[dict]) -> None:
    """Per-iteration AMP trace (the ``trace`` list of an EstimateResult)."""
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([fmt(row[c]) for c in TRACE_COLUMNS])


def write_complex_matrix(path, M: np.ndarray) -> None:
    """Text dump: header ``rows cols``, then one line per row of ``re,im`` pairs."""
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    with atomic_write(path, newline="\n") as fh:
        fh.write(f"{M.shape[0]} {M.shape[1]}\n")
        for row in M:
            fh.write(",".join(f"{repr(float(z.real))},{repr(float(z.imag))}" for z in row))
            fh.write("\n")


def read_complex_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows, cols = (int(v) for v in fh.readline().split())
        out = np.empty((rows, cols), dtype=complex)
        for i in range(rows):
            vals = [float(v) for v in fh.readline().strip().split(",")]
            if len(vals) != 2 * cols:
                raise ValueError(f"row {i} has {len(vals) // 2} entries, expected {cols}")
            out[i] = np.array(vals[0::2]) + 1j * np.array(vals[1::2])
    return out


# ----------------------------------------------------------------------- plots


def _num(s: str) -> float:
    return float(s) if s not in ("", None) else math.nan


def _series_means(rows, metric: str):
    """algorithm -> sorted [(grid, mean)] with NMSE averaged in linear scale."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        if r["flags"].startswith("aborted"):
            continue
        v = _num(r[metric])
        if math.isnan(v):
            continue
        acc[r["algorithm"]][float(r["grid_value"])].append(10 ** (v / 10) if metric == "nmse_db" else v)
    out = {}
    for alg, cells in acc.items():
        pts = []
        for g in sorted(cells):
            m = math.fsum(cells[g]) / len(cells[g])
            pts.append((g, _db(m) if metric == "nmse_db" else m))
        out[alg] = pts
    return out


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "fascsi"
    matplotlib.rcParams["svg.fonttype"] = "none"
    return plt


def plot_results(csv_path, svg_path) -> None:
    """Render the figure for an experiment CSV.

    Convergence CSVs give median NMSE-vs-iteration curves per (algorithm,
    grid value); sweep CSVs give mean ADE, NMSE and multiply count against
    the swept parameter, one series per algorithm.
    """
    rows = read_results_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} holds no rows")
    plt = _figure()
    experiment = rows[0]["experiment"]
    if experiment == "convergence":
        fig, ax = plt.subplots(figsize=(6, 4))
        groups = defaultdict(list)
        for r in rows:
            if r["nmse_trace_db"]:
                groups[(r["algorithm"], r["grid_value"])].append([float(v) for v in r["nmse_trace_db"].split(";")])
        for (alg, g), traces in sorted(groups.items()):
            T = min(len(t) for t in traces)
            med = np.median(np.array([t[:T] for t in traces]), axis=0)
            ax.plot(np.arange(1, T + 1), med, marker="o", label=f"{alg}, K_r={g}")
        ax.set_xlabel("iteration")
        ax.set_ylabel("median NMSE (dB)")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
    else:
        xlabel = {"vs_snr": "SNR (dB)", "vs_ports": "active ports N_o"}.get(experiment, "grid value")
        fig, axes = plt.subplots(1, 3, figsize=(14, 4))
        for ax, metric, label in zip(
            axes, ("ade", "nmse_db", "mac_count"), ("mean ADE", "mean NMSE (dB)", "multiplies per frame")
        ):
            for alg, pts in _series_means(rows, metric).items():
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker="o", label=alg)
            ax.set_xlabel(xlabel)
            ax.set_ylabel(label)
            ax.grid(alpha=0.3)
            if metric == "mac_count":
                ax.set_yscale("log")
        axes[0].legend(fontsize=8)
    fig.tight_layout()
    with atomic_write(svg_path, newline="\n") as fh:
        fig.savefig(fh, format="svg", metadata={"Date": None})
    plt.close(fig)
