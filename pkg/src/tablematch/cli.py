"""Command-line entry points.

Subcommands: ``match`` (full pipeline), ``sweep`` (parameter grid),
``ablate`` (stage bypass comparison), ``synth`` (dataset generator) and
``score`` (compare two cluster files). Report paths write figures next to
their CSV/JSON outputs.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click

from .config import PipelineConfig, load_config, normalize_disable
from .evaluate import SweepSpec, ablate as run_ablation, format_report_table
from .evaluate import score as score_clusters
from .evaluate import sweep as run_sweep
from .pipeline import run_pipeline
from .synth import CorruptionSpec, SynthSpec, generate
from .tables import load_dataset, read_clusters_csv, write_dataset

logger = logging.getLogger(__name__)


def _common_overrides(kwargs: dict) -> dict:
    """Collect non-None CLI options into config overrides."""
    overrides = {}
    for key, value in kwargs.items():
        if value is None or key in ("config", "disable"):
            continue
        overrides[key] = value
    if kwargs.get("disable"):
        overrides["disable"] = normalize_disable(kwargs["disable"])
    return overrides


def _build_config(config_path: str | None, kwargs: dict) -> PipelineConfig:
    return load_config(config_path, _common_overrides(kwargs))


def _config_options(fn):
    options = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Key-value config file; flags override it."),
        click.option("--dataset-dir", type=click.Path(), default=None),
        click.option("--out-dir", type=click.Path(), default=None),
        click.option("--cache-dir", type=click.Path(), default=None),
        click.option("--coordination-mode", type=click.Choice(["rules_only", "model_only", "model_with_rule_fallback"]), default=None),
        click.option("--prompt-style", type=click.Choice(["simple", "difficult"]), default=None),
        click.option("--tm-endpoint", default=None, help="Text-model HTTP endpoint."),
        click.option("--tm-model", default=None, help="Text-model name."),
        click.option("--dimension", type=int, default=None),
        click.option("--lambda", "match_threshold", type=float, default=None,
                     help="Max cosine distance for a match pair."),
        click.option("--d", "prune_radius", type=float, default=None,
                     help="Pruning neighborhood radius."),
        click.option("--rho-min", "min_neighbors", type=int, default=None,
                     help="Minimum neighborhood size for a core record."),
        click.option("--hnsw-m", type=int, default=None),
        click.option("--hnsw-ef-construction", type=int, default=None),
        click.option("--hnsw-ef-search", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--workers", type=int, default=None),
        click.option("--disable", multiple=True,
                     help="Stage to bypass: coordination or pruning (repeatable)."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log stage progress.")
def main(verbose: bool):
    """Multi-table entity matching pipeline."""
    logging.basicConfig(
        level=logging.INFO if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@_config_options
def match(config, **kwargs):
    """Run the full pipeline and write clusters, report and figures."""
    cfg = _build_config(config, kwargs)
    try:
        result = run_pipeline(cfg)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    if result.report is not None:
        click.echo(format_report_table(result.report))
    else:
        click.echo(f"clusters written: {len(result.final_clusters)} (no ground truth to score)")
    click.echo(f"artifacts in {cfg.out_dir}")


def _parse_grid(grid: str) -> list[float]:
    parts = grid.split(":")
    if len(parts) != 3:
        raise click.BadParameter("grid must be start:stop:step")
    start, stop, step = (float(p) for p in parts)
    if step <= 0:
        raise click.BadParameter("grid step must be positive")
    values = []
    v = start
    while v <= stop + 1e-9:
        values.append(round(v, 10))
        v += step
    return values


@main.command()
@click.option("--param", type=click.Choice(["lambda", "d"]), required=True)
@click.option("--grid", default=None, help="start:stop:step, endpoints inclusive.")
@click.option("--values", "values_csv", default=None, help="Comma-separated values.")
@_config_options
def sweep(param, grid, values_csv, config, **kwargs):
    """Score the pipeline across a parameter grid; write CSV and a figure."""
    if (grid is None) == (values_csv is None):
        raise click.UsageError("provide exactly one of --grid or --values")
    values = _parse_grid(grid) if grid else [float(v) for v in values_csv.split(",")]
    cfg = _build_config(config, kwargs)
    dataset = load_dataset(cfg.dataset_dir)
    try:
        rows = run_sweep(dataset, cfg, SweepSpec(parameter=param, values=values))
    except Exception as err:  # noqa: BLE001 - CLI boundary
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"sweep_{param}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["value", "precision", "recall", "f1"])
        for value, report in rows:
            writer.writerow([value, report.precision, report.recall, report.f1])
    figures_dir = out_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    from .plots import save_sweep_figure

    figure_path = figures_dir / f"sweep_{param}.png"
    save_sweep_figure(rows, param, figure_path)
    for value, report in rows:
        click.echo(f"{param}={value:g}  P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f}")
    click.echo(f"wrote {csv_path} and {figure_path}")


@main.command()
@_config_options
def ablate(config, **kwargs):
    """Compare the full pipeline against single-stage bypasses."""
    cfg = _build_config(config, kwargs)
    dataset = load_dataset(cfg.dataset_dir)
    variants = [("full", set()), ("no_coordination", {"coordination"}), ("no_pruning", {"pruning"})]
    results = {}
    try:
        for name, disable in variants:
            results[name] = run_ablation(dataset, cfg, disable)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    click.echo(f"{'variant':<16} {'P':>8} {'R':>8} {'F1':>8}")
    for name, report in results.items():
        click.echo(f"{name:<16} {report.precision:>8.4f} {report.recall:>8.4f} {report.f1:>8.4f}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {name: report.to_dict() for name, report in results.items()}
    (out_dir / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    click.echo(f"wrote {out_dir / 'ablation.json'}")


@main.command()
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--tables", "n_tables", type=int, default=4, show_default=True)
@click.option("--entities", "n_entities", type=int, default=100, show_default=True)
@click.option("--presence", type=float, default=0.9, show_default=True)
@click.option("--typo-rate", type=float, default=0.0, show_default=True)
@click.option("--unit-mangle-rate", type=float, default=0.0, show_default=True)
@click.option("--time-format-rate", type=float, default=0.0, show_default=True)
@click.option("--confusion-rate", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth(out_dir, n_tables, n_entities, presence, typo_rate, unit_mangle_rate,
          time_format_rate, confusion_rate, seed):
    """Generate a synthetic dataset with ground truth."""
    spec = SynthSpec(
        n_tables=n_tables,
        n_entities=n_entities,
        presence_prob=presence,
        corruption=CorruptionSpec(
            typo_rate=typo_rate,
            unit_mangle_rate=unit_mangle_rate,
            time_format_rate=time_format_rate,
        ),
        confusion_rate=confusion_rate,
        seed=seed,
    )
    dataset = generate(spec)
    write_dataset(dataset, out_dir)
    truth = len(dataset.ground_truth or [])
    click.echo(
        f"wrote {len(dataset.tables)} tables, {dataset.total_records()} records, "
        f"{truth} ground-truth clusters to {out_dir}"
    )


@main.command()
@click.argument("predicted", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False))
def score(predicted, truth):
    """Tuple-exact P/R/F1 of one cluster file against another."""
    try:
        report = score_clusters(read_clusters_csv(predicted), read_clusters_csv(truth))
    except Exception as err:  # noqa: BLE001 - CLI boundary
        click.echo(f"error: {err}", err=True)
        sys.exit(1)
    click.echo(format_report_table(report))


if __name__ == "__main__":
    main()
