from __future__ import annotations

import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any

import typer
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from lensbench import CSA_IDS, POLICY_IDS, SCORER_IDS, __version__
from lensbench._log import setup_logging
from lensbench.bench import (
    BenchConfig,
    cmd_ablate,
    cmd_gen,
    cmd_heatmap,
    cmd_run,
    cmd_sweep,
    cmd_train,
    load_config,
)
from lensbench.errors import ConfigError, LensbenchError
from lensbench.param_space import format_seconds
from lensbench.replay import load_scores, replay_evaluate
from lensbench.report import BenchReport, write_report
from lensbench.scene_sim import MODES

logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)

app = typer.Typer(
    name="lensbench",
    help="Camera sensor-parameter selection benchmark.",
    no_args_is_help=True,
    add_completion=False,
)


@contextmanager
def _exit_codes() -> Iterator[None]:
    """Turn library errors into their exit codes."""
    try:
        yield
    except LensbenchError as exc:
        err_console.print(f"[bold red]error[/bold red]: {escape(str(exc))}", highlight=False)
        raise typer.Exit(exc.exit_code) from None
    except ValueError as exc:
        err_console.print(f"[bold red]error[/bold red]: {escape(str(exc))}", highlight=False)
        raise typer.Exit(ConfigError.exit_code) from None


def _config(ctx: typer.Context) -> BenchConfig:
    return ctx.obj["config"]


def _version_callback(value: bool) -> None:
    if value:
        typer.echo(f"lensbench {__version__}")
        raise typer.Exit()


@app.callback()
def _global_options(
    ctx: typer.Context,
    config: Annotated[
        Path | None, typer.Option("--config", help="TOML config file", dir_okay=False)
    ] = None,
    seed: Annotated[int | None, typer.Option("--seed", help="Single master seed", min=0)] = None,
    out: Annotated[Path | None, typer.Option("--out", help="Output directory")] = None,
    mode: Annotated[str | None, typer.Option("--mode", help=" | ".join(MODES))] = None,
    scorer: Annotated[str | None, typer.Option("--scorer", help=" | ".join(SCORER_IDS))] = None,
    csa: Annotated[str | None, typer.Option("--csa", help=" | ".join(CSA_IDS))] = None,
    k: Annotated[int | None, typer.Option("--k", help="Candidates per scene for the CSA")] = None,
    jobs: Annotated[int | None, typer.Option("--jobs", help="Worker processes")] = None,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False,
    version: Annotated[
        bool | None,
        typer.Option("--version", callback=_version_callback, is_eager=True, help="Show version"),
    ] = None,
) -> None:
    setup_logging(verbose)
    overrides: list[tuple[str, Any]] = [
        ("seeds", None if seed is None else [seed]),
        ("output_dir", None if out is None else str(out)),
        ("mode", mode),
        ("scorer", scorer),
        ("csa.algorithm", csa),
        ("csa.k", None if k is None else [k]),
        ("jobs", jobs),
    ]
    with _exit_codes():
        ctx.obj = {"config": load_config(config, overrides)}


def _print_report(report: BenchReport) -> None:
    table = Table(title=f"scorer {report.scorer_id}, AE {report.ae_aggregate}")
    table.add_column("policy")
    table.add_column("accuracy", justify="right")
    table.add_column("std", justify="right")
    table.add_column("mean cost (s)", justify="right")
    table.add_column("worst light", justify="right")
    for label, summary in report.policies.items():
        table.add_row(
            label,
            f"{summary.accuracy_mean:.4f}",
            f"{summary.accuracy_std:.4f}",
            format_seconds(summary.mean_cost_s),
            f"{summary.worst_light} {summary.worst_light_accuracy:.4f}",
        )
    console.print(table)


@app.command()
def gen(
    ctx: typer.Context,
    previews: Annotated[
        bool, typer.Option("--previews", help="Also write PGM calibration captures")
    ] = False,
) -> None:
    """Write the scene set."""
    with _exit_codes():
        typer.echo(cmd_gen(_config(ctx), previews=previews))


@app.command()
def train(ctx: typer.Context) -> None:
    """Train the target models and write their checkpoints."""
    with _exit_codes():
        for path in cmd_train(_config(ctx)):
            typer.echo(path)


@app.command()
def run(ctx: typer.Context) -> None:
    """Evaluate every configured policy and write the report."""
    with _exit_codes():
        _print_report(cmd_run(_config(ctx)))


@app.command()
def sweep(
    ctx: typer.Context,
    algorithms: Annotated[
        list[str] | None, typer.Option("--algorithm", help="CSA to sweep (repeatable)")
    ] = None,
    ks: Annotated[list[int] | None, typer.Option("--ks", help="k value (repeatable)")] = None,
    seeds: Annotated[
        list[int] | None, typer.Option("--seeds", help="Master seed (repeatable)")
    ] = None,
) -> None:
    """Cost/accuracy sweep over CSAs and k."""
    with _exit_codes():
        path = cmd_sweep(
            _config(ctx), csa_list=algorithms or CSA_IDS, k_list=ks or None, seeds=seeds or None
        )
        typer.echo(path)


@app.command()
def heatmap(
    ctx: typer.Context,
    light: Annotated[str, typer.Option("--light", help="Light id, e.g. L3")],
    scene: Annotated[str | None, typer.Option("--scene", help="Scene id")] = None,
    class_id: Annotated[
        int | None, typer.Option("--class", help="Average over all scenes of a class")
    ] = None,
    model: Annotated[int, typer.Option("--model", help="Model index", min=0)] = 0,
) -> None:
    """Quality scores of all options for one scene (or class) under one light."""
    with _exit_codes():
        path = cmd_heatmap(
            _config(ctx), light_id=light, scene_id=scene, class_id=class_id, model_index=model
        )
        typer.echo(path)


@app.command()
def ablate(ctx: typer.Context) -> None:
    """Lens with every quality scorer, next to the baselines."""
    with _exit_codes():
        report = cmd_ablate(_config(ctx))
        table = Table(title="scorer ablation")
        table.add_column("policy")
        table.add_column("accuracy", justify="right")
        table.add_column("std", justify="right")
        for label, row in (report.ablation or {}).items():
            table.add_row(label, f"{row['accuracy_mean']:.4f}", f"{row['accuracy_std']:.4f}")
        console.print(table)


@app.command()
def replay(
    ctx: typer.Context,
    paths: Annotated[
        list[Path], typer.Argument(help="Score CSV files, one per model", dir_okay=False)
    ],
    policies: Annotated[
        list[str] | None, typer.Option("--policy", help=" | ".join(POLICY_IDS) + " (repeatable)")
    ] = None,
    seeds: Annotated[
        list[int] | None, typer.Option("--seeds", help="Master seed (repeatable)")
    ] = None,
    ae_aggregate: Annotated[
        str | None, typer.Option("--ae-aggregate", help="top1 | best_of_5")
    ] = None,
) -> None:
    """Evaluate the policies over exported score matrices."""
    config = _config(ctx)
    with _exit_codes():
        grid = config.build_grid()
        matrices = [
            load_scores(path, scorer_id=config.scorer, model_id=path.stem, grid=grid)
            for path in paths
        ]
        selected = list(policies or config.policies)
        unknown = [p for p in selected if p not in POLICY_IDS]
        if unknown:
            raise ConfigError("cli", f"unknown policies {unknown}. Available: {list(POLICY_IDS)}")
        if not policies and not all(m.has_ae for m in matrices):
            logger.warning("no AE rows in the input, skipping the ae policy")
            selected = [p for p in selected if p != "ae"]
        aggregate = ae_aggregate or config.ae_aggregate
        if aggregate not in ("top1", "best_of_5"):
            raise ConfigError("cli", f"invalid AE aggregate {aggregate!r}")
        csa = config.csa.algorithm
        report = replay_evaluate(
            matrices,
            policies=selected,  # type: ignore[arg-type]
            csa=csa,
            k_values=config.csa.k if csa != "full" else (),
            seeds=seeds or config.seeds,
            ae_aggregate=aggregate,  # type: ignore[arg-type]
        )
        path = write_report(config.out / "replay-report.json", report)
        _print_report(report)
        typer.echo(path)


def main() -> None:
    app()
