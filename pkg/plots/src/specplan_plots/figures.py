"""Render harness CSV outputs into the standard figures.

Three figure kinds, all reading the documented long-format CSV schemas and
nothing else (this package never imports the simulator):

- p1-sweep:     two panels over the route-1 probability, safety rate on the
                left and average speed on the right, one line per planner
                (from sweep_p1.csv);
- planner-bars: safety-rate and speed bars per planner (from metrics.csv);
- ns-tradeoff:  average speed against mean planning time per sample count
                (from sweep_ns.csv plus its timing side file).

Rendering is deterministic: Agg backend, fixed DPI, PNG metadata stripped,
inputs never modified.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

#: Must match the harness CSV schema version.
CSV_SCHEMA_VERSION = 1

DPI = 120

DEFAULT_STYLES = {
    "idm1": "tab:gray",
    "idm2": "tab:brown",
    "idm3": "tab:olive",
    "mpc": "tab:blue",
    "mpc_agg": "tab:cyan",
    "spap": "tab:red",
    "spap_agg": "tab:orange",
}

KINDS = ("p1-sweep", "planner-bars", "ns-tradeoff")


class SchemaError(ValueError):
    """Input CSV is empty, malformed, or from another schema version."""


@dataclass(frozen=True)
class PlotSpec:
    input_csv: str
    kind: str
    output: str
    styles: dict = field(default_factory=dict)
    timings_csv: Optional[str] = None  # ns-tradeoff only

    def style(self, planner: str) -> str:
        return self.styles.get(planner) or DEFAULT_STYLES.get(planner, "tab:green")


def read_rows(path: str) -> list[dict]:
    """Read one long-format CSV, checking the schema version on every row."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    for row in rows:
        if "schema_version" not in row or "metric" not in row or "value" not in row:
            raise SchemaError(f"{path}: missing schema_version/metric/value columns")
        if int(row["schema_version"]) != CSV_SCHEMA_VERSION:
            raise SchemaError(
                f"{path}: schema_version {row['schema_version']} does not match "
                f"the supported version {CSV_SCHEMA_VERSION}"
            )
    return rows


def _metric_map(rows, keys, metric):
    out = {}
    for row in rows:
        if row["metric"] == metric:
            out[tuple(row[k] for k in keys)] = float(row["value"])
    return out


def _save(fig, spec: PlotSpec) -> str:
    fig.savefig(spec.output, dpi=DPI, metadata={"Software": None})
    plt.close(fig)
    return spec.output


def render_p1_sweep(spec: PlotSpec) -> str:
    rows = read_rows(spec.input_csv)
    if "p1" not in rows[0]:
        raise SchemaError(f"{spec.input_csv}: expected a sweep_p1 file with a p1 column")
    planners = sorted({r["planner"] for r in rows})
    safety = _metric_map(rows, ("planner", "p1"), "safety_rate")
    speed = _metric_map(rows, ("planner", "p1"), "avg_speed")
    fig, (ax_s, ax_v) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    for name in planners:
        p1s = sorted({float(p1) for pl, p1 in safety if pl == name})
        ax_s.plot(
            p1s, [100.0 * safety[(name, _fmt(p))] for p in p1s],
            marker="o", color=spec.style(name), label=name,
        )
        ax_v.plot(
            p1s, [speed[(name, _fmt(p))] for p in p1s],
            marker="o", color=spec.style(name), label=name,
        )
    ax_s.set_xlabel("route-1 probability p1")
    ax_s.set_ylabel("safety rate [%]")
    ax_v.set_xlabel("route-1 probability p1")
    ax_v.set_ylabel("average speed [m/s]")
    ax_s.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, spec)


def _fmt(v: float) -> str:
    # mirror the harness float formatting so keys round-trip
    return format(v, ".12g")


def render_planner_bars(spec: PlotSpec) -> str:
    rows = read_rows(spec.input_csv)
    planners = sorted({r["planner"] for r in rows})
    safety = _metric_map(rows, ("planner",), "safety_rate")
    avg = _metric_map(rows, ("planner",), "avg_speed")
    final = _metric_map(rows, ("planner",), "final_speed")
    xs = range(len(planners))
    fig, (ax_s, ax_v) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax_s.bar(xs, [100.0 * safety[(p,)] for p in planners],
             color=[spec.style(p) for p in planners])
    ax_s.set_xticks(list(xs), planners, rotation=30, ha="right")
    ax_s.set_ylabel("safety rate [%]")
    width = 0.38
    ax_v.bar([x - width / 2 for x in xs], [avg[(p,)] for p in planners],
             width, label="average speed", color=[spec.style(p) for p in planners])
    ax_v.bar([x + width / 2 for x in xs], [final[(p,)] for p in planners],
             width, label="final speed", color=[spec.style(p) for p in planners], alpha=0.55)
    ax_v.set_xticks(list(xs), planners, rotation=30, ha="right")
    ax_v.set_ylabel("speed [m/s]")
    ax_v.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, spec)


def render_ns_tradeoff(spec: PlotSpec) -> str:
    rows = read_rows(spec.input_csv)
    if "n_s" not in rows[0]:
        raise SchemaError(f"{spec.input_csv}: expected a sweep_ns file with an n_s column")
    timings_path = spec.timings_csv
    if timings_path is None:
        stem, ext = os.path.splitext(spec.input_csv)
        timings_path = f"{stem}_timings{ext}"
    if not os.path.exists(timings_path):
        raise SchemaError(
            f"ns-tradeoff needs the timing side file ({timings_path}); "
            "pass it explicitly with --timings"
        )
    trows = read_rows(timings_path)
    speed = _metric_map(rows, ("n_s",), "avg_speed")
    times = _metric_map(trows, ("n_s",), "mean_plan_time")
    ns = sorted((int(k[0]) for k in speed), key=int)
    xs = [1e3 * times[(str(n),)] for n in ns]
    ys = [speed[(str(n),)] for n in ns]
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ax.plot(xs, ys, linestyle=":", color="0.6", zorder=1)
    ax.scatter(xs, ys, color=spec.style("spap"), zorder=2)
    for n, x, y in zip(ns, xs, ys):
        ax.annotate(f"N={n}", (x, y), textcoords="offset points", xytext=(6, 4), fontsize=8)
    ax.set_xlabel("mean planning time [ms]")
    ax.set_ylabel("average speed [m/s]")
    fig.tight_layout()
    return _save(fig, spec)


def render(spec: PlotSpec) -> str:
    """Dispatch on the figure kind; returns the output path."""
    if spec.kind == "p1-sweep":
        return render_p1_sweep(spec)
    if spec.kind == "planner-bars":
        return render_planner_bars(spec)
    if spec.kind == "ns-tradeoff":
        return render_ns_tradeoff(spec)
    raise ValueError(f"unknown figure kind {spec.kind!r}; choose from {KINDS}")
