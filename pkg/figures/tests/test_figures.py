"""Figure rendering against real analyzer output.

Fixtures come from the primary package's CLI (run + analyze on a scripted
campaign), exercised strictly through its command-line and file interfaces.
"""

import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from bubblefigs import FigureInputError, PlotSpec, render
from bubblefigs.cli import main as figs_main

CAMPAIGN_CONFIG = {
    "schema_version": 1,
    "market": {},
    "agents": (
        [{"kind": "rational_bubble", "bubble_constant": 400.0}] * 3
        + [{"kind": "fundamentalist"}] * 3
    ),
    "repeats": 4,
    "base_seed": 0,
}


def run_primary_cli(*argv):
    result = subprocess.run(
        [sys.executable, "-m", "bubblelab.cli", *map(str, argv)],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    return result.stdout


@pytest.fixture(scope="module")
def plot_data(tmp_path_factory):
    """run + analyze a small scripted campaign; returns the plot_data dir."""
    root = tmp_path_factory.mktemp("campaign")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(CAMPAIGN_CONFIG))
    runs = root / "runs"
    analysis = root / "analysis"
    run_primary_cli("run", "--config", config_path, "--out", runs)
    run_primary_cli("analyze", "--runs", runs, "--out", analysis)
    return analysis / "plot_data"


@pytest.fixture(scope="module")
def analyzer_checksums(plot_data):
    return json.loads((plot_data / "checksums.json").read_text())


class TestRenderAllKinds:
    def test_price_paths(self, plot_data, tmp_path, analyzer_checksums):
        out = tmp_path / "paths.svg"
        manifest = render(PlotSpec("price_paths", [str(plot_data / "prices.csv")], str(out)))
        assert out.exists()
        assert manifest["inputs"][0]["sha256"] == analyzer_checksums["prices.csv"]
        # mixed market of 3 bubble + 3 fundamentalist agents -> one category
        assert manifest["data"]["points"] == 4 * 50
        assert len(manifest["data"]["categories"]) >= 1

    def test_category_histogram_counts_match_analyzer(self, plot_data, tmp_path,
                                                      analyzer_checksums):
        source = plot_data / "categories.csv"
        out = tmp_path / "hist.svg"
        manifest = render(PlotSpec("category_histogram", [str(source)], str(out)))
        assert manifest["inputs"][0]["sha256"] == analyzer_checksums["categories.csv"]
        with open(source, newline="") as fh:
            expected = {row["category"]: int(row["count"]) for row in csv.DictReader(fh)}
        assert manifest["data"]["counts"] == expected
        assert sum(expected.values()) == 4

    def test_scatter(self, plot_data, tmp_path, analyzer_checksums):
        out = tmp_path / "scatter.svg"
        spec = PlotSpec("scatter", [str(plot_data / "measures.csv")], str(out),
                        x_column="rd", y_column="iqr")
        manifest = render(spec)
        assert manifest["inputs"][0]["sha256"] == analyzer_checksums["measures.csv"]
        assert len(manifest["data"]["points"]) == 4
        assert manifest["data"]["x_column"] == "rd"

    def test_decomposition_bars(self, plot_data, tmp_path, analyzer_checksums):
        out = tmp_path / "decomp.svg"
        manifest = render(PlotSpec(
            "decomposition_bars", [str(plot_data / "decomposition.csv")], str(out),
        ))
        assert manifest["inputs"][0]["sha256"] == analyzer_checksums["decomposition.csv"]
        assert len(manifest["data"]["runs"]) == 4
        assert all(v >= 0 for v in manifest["data"]["dispersion_error"])

    def test_manifest_sits_next_to_figure(self, plot_data, tmp_path):
        out = tmp_path / "fig.svg"
        render(PlotSpec("category_histogram", [str(plot_data / "categories.csv")], str(out)))
        sidecar = tmp_path / "fig.svg.manifest.json"
        assert sidecar.exists()
        manifest = json.loads(sidecar.read_text())
        assert manifest["kind"] == "category_histogram"


class TestDeterminism:
    def test_same_inputs_same_bytes(self, plot_data, tmp_path):
        spec_a = PlotSpec("category_histogram", [str(plot_data / "categories.csv")],
                          str(tmp_path / "a.svg"))
        spec_b = PlotSpec("category_histogram", [str(plot_data / "categories.csv")],
                          str(tmp_path / "b.svg"))
        render(spec_a)
        render(spec_b)
        assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


class TestErrorsAndEdges:
    def test_missing_input_diagnosed(self, tmp_path):
        with pytest.raises(FigureInputError) as err:
            PlotSpec("scatter", [str(tmp_path / "nope.csv")], str(tmp_path / "x.svg"))
        assert "nope.csv" in str(err.value)

    def test_wrong_columns_diagnosed(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        with pytest.raises(FigureInputError) as err:
            render(PlotSpec("price_paths", [str(bad)], str(tmp_path / "x.svg")))
        assert "price" in str(err.value)

    def test_unknown_kind_rejected(self, plot_data, tmp_path):
        with pytest.raises(FigureInputError):
            PlotSpec("pie", [str(plot_data / "categories.csv")], str(tmp_path / "x.svg"))

    def test_empty_categories_warns(self, tmp_path):
        empty = tmp_path / "categories.csv"
        empty.write_text("category,count\n")
        out = tmp_path / "empty.svg"
        with pytest.warns(UserWarning):
            manifest = render(PlotSpec("category_histogram", [str(empty)], str(out)))
        assert manifest["data"]["counts"] == {}
        assert out.exists()


class TestCli:
    def test_render_via_cli(self, plot_data, tmp_path, capsys):
        out = tmp_path / "cli.svg"
        code = figs_main([
            "render", "--kind", "category_histogram",
            "--input", str(plot_data / "categories.csv"),
            "--out", str(out),
        ])
        assert code == 0
        assert out.exists()
        assert "wrote" in capsys.readouterr().out

    def test_cli_error_exit_code(self, tmp_path):
        code = figs_main([
            "render", "--kind", "scatter",
            "--input", str(tmp_path / "missing.csv"),
            "--out", str(tmp_path / "x.svg"),
        ])
        assert code == 2
