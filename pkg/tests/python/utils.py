from __future__ import annotations

import os
from fractions import Fraction
from pathlib import Path

import numpy as np

from lensbench.param_space import ParamGrid, build_default_grid, capture_cost
from lensbench.replay import HEADER, AeRows, ScoreMatrix, quantize_cost

PROJECT_ROOT = Path(__file__).parent.parent.parent
DEFAULT_GRID = build_default_grid()


def subprocess_env() -> dict[str, str]:
    """Environment that lets ``python -m lensbench`` import the source tree."""
    env = dict(os.environ)
    source = str(PROJECT_ROOT / "python")
    env["PYTHONPATH"] = os.pathsep.join(filter(None, [source, env.get("PYTHONPATH")]))
    return env


def default_costs() -> tuple[Fraction, ...]:
    return tuple(quantize_cost(capture_cost(p)) for p in DEFAULT_GRID.options)


def make_matrix(
    scores: np.ndarray,
    correct: np.ndarray,
    *,
    lights: list[str] | None = None,
    ae_ids: np.ndarray | None = None,
    model_id: str = "m",
) -> ScoreMatrix:
    """Matrix over the default grid; group ``g`` is scene ``s{g}`` under ``lights[g]``."""
    num_groups = scores.shape[0]
    lights = lights or ["L1"] * num_groups
    groups = tuple((f"s{g:03d}", lights[g]) for g in range(num_groups))
    costs = (default_costs(),) * num_groups
    ae = None
    if ae_ids is not None:
        rows = np.arange(num_groups)[:, np.newaxis]
        ae = AeRows(
            params=tuple(tuple(DEFAULT_GRID.options[i] for i in ids) for ids in ae_ids),
            scores=scores[rows, ae_ids],
            correct=correct[rows, ae_ids],
            costs=tuple(tuple(costs[0][i] for i in ids) for ids in ae_ids),
        )
    return ScoreMatrix(
        dataset_id="synthetic",
        scorer_id="confidence",
        model_id=model_id,
        grid=DEFAULT_GRID,
        groups=groups,
        scores=np.asarray(scores, dtype=np.float64),
        correct=np.asarray(correct, dtype=bool),
        costs=costs,
        ae=ae,
    )


def csv_rows(
    groups: list[tuple[str, str]], *, skip: int | None = None, grid: ParamGrid = DEFAULT_GRID
) -> list[str]:
    """Well-formed score rows (without header); ``skip`` drops one param_id per group."""
    lines = []
    for scene_id, light_id in groups:
        for i, params in enumerate(grid.options):
            if i == skip:
                continue
            lines.append(
                f"{scene_id},{light_id},{i},{params.iso},{params.shutter_text},"
                f"{params.aperture_f},{0.01 * i},{int(i == 3)},{float(params.shutter_s):.12f}"
            )
    return lines


def write_csv(path: Path, lines: list[str], header: str = ",".join(HEADER)) -> Path:
    path.write_text("\n".join([header, *lines]) + "\n", encoding="utf-8")
    return path
