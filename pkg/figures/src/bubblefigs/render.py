"""Figure rendering from the analyzer's plot-data files.

Consumes only the CSV/JSON files the market laboratory's ``analyze`` command
emits (prices.csv, categories.csv, measures.csv, decomposition.csv) and
produces vector figures plus a JSON manifest recording exactly which inputs
(by checksum) and which data series went into each figure. Golden tests
compare manifests and series, never raster pixels.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed style seed: stable SVG ids and no timestamps, so renders are
# byte-reproducible for identical inputs
matplotlib.rcParams["svg.hashsalt"] = "bubblefigs"

FIGURE_KINDS = ("price_paths", "category_histogram", "scatter", "decomposition_bars")


class FigureInputError(ValueError):
    """An input file is missing or lacks the expected columns."""


@dataclass
class PlotSpec:
    """What to render: one figure kind, its inputs, and styling knobs."""

    kind: str
    inputs: list[str]
    output: str
    title: str = ""
    x_column: str = "rd"
    y_column: str = "iqr"

    def __post_init__(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise FigureInputError(f"unknown figure kind {self.kind!r}")
        if not self.inputs:
            raise FigureInputError("spec needs at least one input file")
        for path in self.inputs:
            if not Path(path).is_file():
                raise FigureInputError(f"input file {path} does not exist")


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_csv(path: str | Path, required: set[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = set(reader.fieldnames or [])
        missing = required - columns
        if missing:
            raise FigureInputError(
                f"{path} lacks column(s) {sorted(missing)}; has {sorted(columns)}"
            )
        return list(reader)


def _save(fig, spec: PlotSpec, data_summary: dict) -> dict:
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, format=out.suffix.lstrip(".") or "svg", metadata={"Date": None})
    plt.close(fig)
    manifest = {
        "kind": spec.kind,
        "output": out.name,
        "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in spec.inputs],
        "data": data_summary,
    }
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return manifest


def _render_price_paths(spec: PlotSpec) -> dict:
    rows = _read_csv(spec.inputs[0], {"run", "t", "price", "category"})
    by_category: dict[str, dict[str, list[tuple[int, float]]]] = {}
    for row in rows:
        series = by_category.setdefault(row["category"], {}).setdefault(row["run"], [])
        series.append((int(row["t"]), float(row["price"])))
    categories = sorted(by_category)
    if not categories:
        raise FigureInputError(f"{spec.inputs[0]} holds no price rows")
    fig, axes = plt.subplots(
        1, len(categories), figsize=(4.0 * len(categories), 3.2),
        sharey=True, squeeze=False,
    )
    for ax, category in zip(axes[0], categories):
        for run in sorted(by_category[category]):
            points = sorted(by_category[category][run])
            ax.plot([t for t, _ in points], [p for _, p in points], linewidth=1.0)
        ax.set_title(category, fontsize=9)
        ax.set_xlabel("period")
    axes[0][0].set_ylabel("price")
    if spec.title:
        fig.suptitle(spec.title)
    fig.tight_layout()
    return _save(fig, spec, {
        "categories": categories,
        "runs_per_category": {c: sorted(by_category[c]) for c in categories},
        "points": sum(len(s) for runs in by_category.values() for s in runs.values()),
    })


def _render_category_histogram(spec: PlotSpec) -> dict:
    rows = _read_csv(spec.inputs[0], {"category", "count"})
    counts = {row["category"]: int(row["count"]) for row in rows}
    if not counts:
        warnings.warn(f"{spec.inputs[0]} holds no categories; rendering an empty histogram")
    fig, ax = plt.subplots(figsize=(7.0, 3.4))
    names = list(counts)
    ax.bar(range(len(names)), [counts[n] for n in names])
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("runs")
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return _save(fig, spec, {"counts": counts})


def _render_scatter(spec: PlotSpec) -> dict:
    rows = _read_csv(spec.inputs[0], {"run", spec.x_column, spec.y_column})
    points = []
    skipped = 0
    for row in rows:
        x_raw, y_raw = row[spec.x_column], row[spec.y_column]
        if x_raw == "" or y_raw == "":
            skipped += 1
            continue
        points.append({
            "run": row["run"],
            "x": float(x_raw),
            "y": float(y_raw),
            "bubble": row.get("bubble", ""),
        })
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    for flag, marker in (("1", "o"), ("0", "s"), ("", "x")):
        xs = [p["x"] for p in points if p["bubble"] == flag]
        ys = [p["y"] for p in points if p["bubble"] == flag]
        if xs:
            label = {"1": "bubble", "0": "no bubble", "": "runs"}[flag]
            ax.scatter(xs, ys, marker=marker, label=label)
    ax.set_xlabel(spec.x_column)
    ax.set_ylabel(spec.y_column)
    if any(p["bubble"] for p in points):
        ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return _save(fig, spec, {
        "x_column": spec.x_column,
        "y_column": spec.y_column,
        "points": points,
        "skipped": skipped,
    })


def _render_decomposition_bars(spec: PlotSpec) -> dict:
    rows = _read_csv(spec.inputs[0], {"run", "dispersion_error", "common_error"})
    runs = [row["run"] for row in rows]
    dispersion = [float(row["dispersion_error"]) for row in rows]
    common = [float(row["common_error"]) for row in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(runs) + 2.0), 3.4))
    ax.bar(range(len(runs)), dispersion, label="dispersion error")
    ax.bar(range(len(runs)), common, bottom=dispersion, label="common error")
    ax.set_xticks(range(len(runs)))
    ax.set_xticklabels(runs, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("squared error")
    ax.legend(fontsize=8)
    if spec.title:
        ax.set_title(spec.title)
    fig.tight_layout()
    return _save(fig, spec, {
        "runs": runs,
        "dispersion_error": dispersion,
        "common_error": common,
    })


_RENDERERS = {
    "price_paths": _render_price_paths,
    "category_histogram": _render_category_histogram,
    "scatter": _render_scatter,
    "decomposition_bars": _render_decomposition_bars,
}


def render(spec: PlotSpec) -> dict:
    """Render one figure; returns the manifest that was written next to it."""
    return _RENDERERS[spec.kind](spec)
