"""Command-line entry point.

Subcommands:
  run       execute an experiment campaign from a JSON config
  analyze   compute per-run reports, the campaign summary, and plot data
  report    print the summary table for a campaign directory
  probe     query one agent on a frozen snapshot (or run the leakage probe)
  classify  label justifications with an LLM classifier
  scan      keyword-scan justifications for leakage indicators
  grid      bubble-indicator robustness grid (pairwise kappa matrix)

Exit codes: 0 success, 1 partial failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

from . import analytics, leakage, logio, orchestrator
from .agents import AgentSpec
from .errors import BubbleLabError, ConfigError
from .llm import LlmAgentConfig
from .market import RunLog, fundamental_price

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def _test_to_dict(t) -> Optional[dict]:
    if t is None:
        return None
    return {
        "statistic": t.statistic,
        "p_value": t.p_value,
        "dof": list(t.dof) if isinstance(t.dof, tuple) else t.dof,
        "degenerate": t.degenerate,
        "reason": t.reason,
    }


def report_to_dict(report: analytics.RunReport) -> dict:
    m = report.measures
    s = report.shape
    return {
        "measures": {
            "rd": m.rd, "rad": m.rad, "gd": m.gd, "gad": m.gad,
            "rdmax": m.rdmax, "iqr": m.iqr, "std": m.std,
        },
        "bubble": report.bubble,
        "bubble_mean": report.bubble_mean,
        "shape": {
            "detected": s.detected, "start": s.start, "peak": s.peak,
            "peak_price": s.peak_price, "time_to_form": s.time_to_form,
            "half_life": s.half_life,
        },
        "spec_test": _test_to_dict(report.spec_test),
        "spec_flags": report.spec_flags,
        "speculative": report.speculative,
        "bias_tests": [_test_to_dict(t) for t in report.bias_tests],
        "bias_fraction": report.bias_fraction,
        "dispersion_error": report.dispersion_error,
        "common_error": report.common_error,
        "category": report.category,
        "category_flags": report.category_flags,
        "alpha": report.alpha,
        "incomplete": report.incomplete,
    }


def summary_to_dict(summary: analytics.CampaignSummary) -> dict:
    return dataclasses.asdict(summary)


def _cell(value, nd: int = 2) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "1.00" if value else "0.00"
    return f"{value:.{nd}f}"


def summary_table(summary: analytics.CampaignSummary) -> str:
    """Aligned text table mirroring the published summary columns."""
    headers = ["Runs", "RD", "RAD", "GD", "GAD", "RDMAX", "IQR pr", "Std pr",
               "P_bubble", "T_b2p", "HALF", "SPEC", "BIAS"]
    row = [
        str(summary.n_runs), _cell(summary.rd), _cell(summary.rad),
        _cell(summary.gd), _cell(summary.gad), _cell(summary.rdmax),
        _cell(summary.iqr), _cell(summary.std), _cell(summary.p_bubble),
        _cell(summary.time_to_form), _cell(summary.half_life),
        _cell(summary.spec), _cell(summary.bias),
    ]
    widths = [max(len(h), len(v)) for h, v in zip(headers, row)]
    line1 = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    line2 = "  ".join(v.rjust(w) for v, w in zip(row, widths))
    cats = "\n".join(f"  {name}: {count}" for name, count in summary.categories.items())
    return f"{line1}\n{line2}\n\nCategories:\n{cats}"


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _apply_overrides(config: logio.ExperimentConfig, args) -> logio.ExperimentConfig:
    if args.repeats is not None:
        config = dataclasses.replace(config, repeats=args.repeats)
    if args.seed is not None:
        config = dataclasses.replace(config, base_seed=args.seed)
    llm_overrides = {}
    if args.temperature is not None:
        llm_overrides["temperature"] = args.temperature
    if args.memory is not None:
        llm_overrides["memory"] = args.memory
    if args.prompt_variant is not None:
        llm_overrides["prompt_variant"] = args.prompt_variant
    if llm_overrides:
        agents = [
            dataclasses.replace(spec, llm=dataclasses.replace(spec.llm, **llm_overrides))
            if spec.kind == "llm" else spec
            for spec in config.agents
        ]
        config = dataclasses.replace(config, agents=agents)
    return config


def cmd_run(args) -> int:
    config = logio.load_experiment_config(args.config)
    config = _apply_overrides(config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    logs = orchestrator.run_campaign(config, out_dir=out_dir, jobs=args.jobs)
    manifest = {
        "schema_version": logio.SCHEMA_VERSION,
        "config": logio.experiment_config_to_dict(config),
        "runs": [
            {
                "path": f"run_{i:03d}.jsonl",
                "transcripts": f"run_{i:03d}.transcripts.jsonl",
                "status": "incomplete" if log.incomplete else "ok",
                "error": log.error,
            }
            for i, log in enumerate(logs)
        ],
    }
    (out_dir / "campaign.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    failed = sum(1 for log in logs if log.incomplete)
    print(f"ran {len(logs)} run(s), {failed} incomplete -> {out_dir}")
    return EXIT_PARTIAL if failed else EXIT_OK


# ---------------------------------------------------------------------------
# analyze / report
# ---------------------------------------------------------------------------

def _load_runs(runs_dir: str | Path, strict: bool = True) -> list[tuple[str, RunLog]]:
    paths = list(logio.iter_run_paths(runs_dir))
    if not paths:
        raise ConfigError(f"no runs found in {runs_dir}")
    out = []
    for path in paths:
        try:
            out.append((path.stem, logio.read_run_log(path, strict=strict)))
        except ConfigError:
            if strict:
                raise
            print(f"warning: skipping corrupt log {path}", file=sys.stderr)
    if not out:
        raise ConfigError(f"no readable runs in {runs_dir}")
    return out


def _analyze_all(runs, alpha, threshold_multiple, duration):
    return [
        analytics.analyze_run(
            log, alpha=alpha,
            bubble_threshold_multiple=threshold_multiple,
            bubble_duration=duration,
        )
        for _, log in runs
    ]


def _write_plot_data(out_dir: Path, runs, reports) -> dict[str, str]:
    plot_dir = out_dir / "plot_data"
    plot_dir.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []

    prices_path = plot_dir / "prices.csv"
    with open(prices_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", "t", "price", "category"])
        for (name, log), report in zip(runs, reports):
            for t, price in enumerate(log.prices, start=1):
                writer.writerow([name, t, repr(price), report.category])
    files.append(prices_path)

    categories_path = plot_dir / "categories.csv"
    summary = analytics.aggregate_reports(reports)
    with open(categories_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["category", "count"])
        for category in analytics.ALL_CATEGORIES:
            writer.writerow([category, summary.categories.get(category, 0)])
    files.append(categories_path)

    measures_path = plot_dir / "measures.csv"
    with open(measures_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([
            "run", "rd", "rad", "gd", "gad", "rdmax", "iqr", "std",
            "bubble", "bubble_mean", "speculative", "bias_fraction",
            "time_to_form", "half_life", "category",
        ])
        for (name, _), report in zip(runs, reports):
            m = report.measures
            writer.writerow([
                name, repr(m.rd), repr(m.rad),
                "" if m.gd is None else repr(m.gd),
                "" if m.gad is None else repr(m.gad),
                repr(m.rdmax), repr(m.iqr), repr(m.std),
                int(report.bubble), int(report.bubble_mean),
                "" if report.speculative is None else int(report.speculative),
                repr(report.bias_fraction),
                "" if report.shape.time_to_form is None else report.shape.time_to_form,
                "" if report.shape.half_life is None else report.shape.half_life,
                report.category,
            ])
    files.append(measures_path)

    decomposition_path = plot_dir / "decomposition.csv"
    with open(decomposition_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", "dispersion_error", "common_error"])
        for (name, _), report in zip(runs, reports):
            writer.writerow([name, repr(report.dispersion_error), repr(report.common_error)])
    files.append(decomposition_path)

    checksums = {path.name: _sha256(path) for path in files}
    (plot_dir / "checksums.json").write_text(
        json.dumps(checksums, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return checksums


def cmd_analyze(args) -> int:
    runs = _load_runs(args.runs, strict=not args.skip_corrupt)
    p_f = fundamental_price(runs[0][1].params)
    threshold_multiple = (
        args.bubble_threshold / p_f if args.bubble_threshold is not None
        else analytics.BUBBLE_THRESHOLD_MULTIPLE
    )
    reports = _analyze_all(runs, args.alpha, threshold_multiple, args.duration)
    summary = analytics.aggregate_reports(reports)
    out_dir = Path(args.out)
    reports_dir = out_dir / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    for (name, _), report in zip(runs, reports):
        (reports_dir / f"{name}.report.json").write_text(
            json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    (out_dir / "summary.json").write_text(
        json.dumps(summary_to_dict(summary), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    table = summary_table(summary)
    (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        data = summary_to_dict(summary)
        categories = data.pop("categories")
        writer.writerow(list(data) + list(categories))
        writer.writerow([
            "" if v is None else v for v in data.values()
        ] + list(categories.values()))
    _write_plot_data(out_dir, runs, reports)
    print(table)
    incomplete = sum(1 for r in reports if r.incomplete)
    return EXIT_PARTIAL if incomplete else EXIT_OK


def cmd_report(args) -> int:
    runs = _load_runs(args.runs, strict=not args.skip_corrupt)
    reports = _analyze_all(runs, args.alpha, analytics.BUBBLE_THRESHOLD_MULTIPLE,
                           analytics.BUBBLE_MIN_DURATION)
    print(summary_table(analytics.aggregate_reports(reports)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe / classify / scan / grid
# ---------------------------------------------------------------------------

def _load_agent_spec(path: str) -> AgentSpec:
    with open(path, encoding="utf-8") as fh:
        return logio.agent_spec_from_dict(json.load(fh))


def _load_llm_config(path: str) -> LlmAgentConfig:
    spec_data = json.loads(Path(path).read_text(encoding="utf-8"))
    spec_data.setdefault("kind", "llm")
    spec = logio.agent_spec_from_dict(spec_data)
    if spec.kind != "llm" or spec.llm is None:
        raise ConfigError(f"{path} does not describe an llm endpoint")
    return spec.llm


def cmd_probe(args) -> int:
    with orchestrator.MockEndpointPool() as pool:
        if args.leakage_target:
            config = _load_llm_config(args.leakage_target)
            config = dataclasses.replace(config, endpoint=pool.resolve(config.endpoint))
            result = leakage.leakage_probe(
                config, repeats=args.repeats if args.repeats is not None else 5
            )
            payload = {
                "answers": [dataclasses.asdict(a) for a in result.answers],
                "review": result.review,
            }
            print(json.dumps(payload, indent=2))
            errors = sum(1 for a in result.answers if a.error)
            return EXIT_PARTIAL if errors else EXIT_OK
        spec = _load_agent_spec(args.agent_file)
        scenario = orchestrator.DEFAULT_PROBE_SCENARIO
        if args.scenario:
            with open(args.scenario, encoding="utf-8") as fh:
                data = json.load(fh)
            scenario = orchestrator.ProbeScenario(
                prices=data["prices"], own_predictions=data["own_predictions"],
                repeats=data.get("repeats", scenario.repeats),
            )
        if args.repeats is not None:  # the flag wins over the scenario file
            scenario = dataclasses.replace(scenario, repeats=args.repeats)
        result = orchestrator.run_probe(spec, scenario, base_seed=args.seed or 0, pool=pool)
    print(json.dumps({"values": result.values, "mean": result.mean, "errors": result.errors}, indent=2))
    return EXIT_PARTIAL if result.errors else EXIT_OK


def cmd_classify(args) -> int:
    runs = _load_runs(args.runs)
    classifier = _load_llm_config(args.classifier)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    excluded_total = 0
    with orchestrator.MockEndpointPool() as pool, open(out_path, "w", encoding="utf-8") as fh:
        classifier = dataclasses.replace(classifier, endpoint=pool.resolve(classifier.endpoint))
        for name, log in runs:
            result = leakage.classify_justifications(log, classifier, args.task, run_id=name)
            excluded_total += result.excluded
            for label in result.labels:
                fh.write(logio.dumps(dataclasses.asdict(label)) + "\n")
            prop = "-" if result.proportion is None else f"{result.proportion:.3f}"
            print(f"{name}: proportion={prop} labeled={result.labeled} excluded={result.excluded}")
    return EXIT_PARTIAL if excluded_total else EXIT_OK


def cmd_scan(args) -> int:
    runs = _load_runs(args.runs)
    keywords = leakage.load_keywords(args.keywords) if args.keywords else None
    all_hits = []
    for name, log in runs:
        for hit in leakage.keyword_scan(log, keywords):
            record = dataclasses.asdict(hit)
            record["run"] = name
            all_hits.append(record)
    if args.out:
        Path(args.out).write_text(json.dumps(all_hits, indent=2) + "\n", encoding="utf-8")
    totals: dict[str, int] = {}
    for hit in all_hits:
        totals[hit["keyword"]] = totals.get(hit["keyword"], 0) + hit["count"]
    for kw in sorted(totals):
        print(f"{kw}: {totals[kw]}")
    print(f"total hits: {sum(totals.values())} across {len(runs)} run(s)")
    return EXIT_OK


def cmd_grid(args) -> int:
    runs = _load_runs(args.runs)
    p_f = fundamental_price(runs[0][1].params)
    series = [log.prices for _, log in runs]
    labelings, kappas, min_kappa = analytics.robustness_grid(series, p_f)
    payload = {
        "classifiers": (
            [f"consecutive(threshold={m * p_f:g},duration={d})"
             for m in analytics.GRID_THRESHOLD_MULTIPLES for d in analytics.GRID_DURATIONS]
            + [f"mean(threshold={m * p_f:g})" for m in analytics.GRID_MEAN_MULTIPLES]
        ),
        "labelings": labelings,
        "kappa_matrix": kappas,
        "min_kappa": min_kappa,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"min pairwise kappa over {len(labelings)} classifiers: {min_kappa:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblelab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment campaign")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--repeats", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--temperature", type=float)
    p_run.add_argument("--memory", type=int)
    p_run.add_argument("--prompt-variant", choices=["neutral", "nonlinear"], dest="prompt_variant")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(func=cmd_run)

    p_analyze = sub.add_parser("analyze", help="analyze a campaign directory")
    p_analyze.add_argument("--runs", required=True)
    p_analyze.add_argument("--out", required=True)
    p_analyze.add_argument("--alpha", type=float, default=0.05)
    p_analyze.add_argument("--bubble-threshold", type=float, dest="bubble_threshold",
                           help="absolute price threshold for the bubble indicator")
    p_analyze.add_argument("--duration", type=int, default=analytics.BUBBLE_MIN_DURATION)
    p_analyze.add_argument("--skip-corrupt", action="store_true", dest="skip_corrupt")
    p_analyze.set_defaults(func=cmd_analyze)

    p_report = sub.add_parser("report", help="print the summary table")
    p_report.add_argument("--runs", required=True)
    p_report.add_argument("--alpha", type=float, default=0.05)
    p_report.add_argument("--skip-corrupt", action="store_true", dest="skip_corrupt")
    p_report.set_defaults(func=cmd_report)

    p_probe = sub.add_parser("probe", help="probe an agent on a frozen snapshot")
    p_probe.add_argument("--agent-file", dest="agent_file")
    p_probe.add_argument("--scenario")
    p_probe.add_argument("--repeats", type=int, default=None)
    p_probe.add_argument("--seed", type=int)
    p_probe.add_argument("--leakage-target", dest="leakage_target",
                         help="LLM endpoint JSON; runs the direct leakage probe instead")
    p_probe.set_defaults(func=cmd_probe)

    p_classify = sub.add_parser("classify", help="classify justifications with an LLM")
    p_classify.add_argument("--runs", required=True)
    p_classify.add_argument("--classifier", required=True)
    p_classify.add_argument("--task", required=True, choices=list(leakage.CLASSIFIER_TASKS))
    p_classify.add_argument("--out", required=True)
    p_classify.set_defaults(func=cmd_classify)

    p_scan = sub.add_parser("scan", help="keyword-scan justifications")
    p_scan.add_argument("--runs", required=True)
    p_scan.add_argument("--keywords")
    p_scan.add_argument("--out")
    p_scan.set_defaults(func=cmd_scan)

    p_grid = sub.add_parser("grid", help="bubble-indicator robustness grid")
    p_grid.add_argument("--runs", required=True)
    p_grid.add_argument("--out")
    p_grid.set_defaults(func=cmd_grid)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "probe" and not (args.agent_file or args.leakage_target):
        parser.error("probe needs --agent-file or --leakage-target")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BubbleLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
