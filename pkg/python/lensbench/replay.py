"""Policy evaluation over score matrices.

A score matrix holds, for every (scene, light) group, one row per grid option with the
quality score of its capture, whether the model classified it correctly and what the
shot cost. Auto-exposure shots travel in the same file as rows ``N .. N+4`` where ``N``
is the grid size. The simulator benchmark builds these matrices in memory and runs the
same evaluation as ``lensbench replay``, so an exported matrix replays to the same
accuracies.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path

import numpy as np
import numpy.typing as npt

from lensbench import POLICY_IDS, AeAggregate, CsaId, PolicyId, ScorerId
from lensbench._io import canonical_json
from lensbench._seeds import rng_for
from lensbench.errors import (
    ConfigError,
    FormatError,
    InvariantViolation,
    ParseError,
    StructureError,
)
from lensbench.param_space import (
    ParamGrid,
    SensorParams,
    build_default_grid,
    format_seconds,
    format_shutter,
    parse_shutter,
)
from lensbench.report import (
    NO_SINGLE_OPTION,
    BenchReport,
    PolicyOutcome,
    RunEvaluation,
    build_report,
    lens_label,
)
from lensbench.scene_sim import AE_SHOTS
from lensbench.selection import argmax_canonical, candidate_ids, oracle_f

logger = logging.getLogger(__name__)

HEADER = (
    "scene_id",
    "light_id",
    "param_id",
    "iso",
    "shutter",
    "aperture",
    "score",
    "correct",
    "cost_s",
)
COST_PLACES = 12

Group = tuple[str, str]
FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]


def quantize_cost(cost: Fraction) -> Fraction:
    """Cost as written to a score-matrix file (12 decimals).

    Live runs keep exact fractions; this rounding only applies to what a CSV can carry.
    """
    return Fraction(Decimal(format_seconds(cost, places=COST_PLACES)))


@dataclass(frozen=True, eq=False)
class AeRows:
    params: tuple[tuple[SensorParams, ...], ...]
    scores: FloatArray
    correct: BoolArray
    costs: tuple[tuple[Fraction, ...], ...]


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    dataset_id: str
    scorer_id: ScorerId | str
    model_id: str
    grid: ParamGrid
    groups: tuple[Group, ...]
    scores: FloatArray
    correct: BoolArray
    costs: tuple[tuple[Fraction, ...], ...]
    ae: AeRows | None = None

    def __post_init__(self) -> None:
        shape = (len(self.groups), len(self.grid))
        if self.scores.shape != shape or self.correct.shape != shape:
            raise ValueError(
                f"replay: score/correct tables must be {shape}, "
                f"got {self.scores.shape} and {self.correct.shape}"
            )
        if len(self.costs) != shape[0] or any(len(row) != shape[1] for row in self.costs):
            raise ValueError(f"replay: cost table must be {shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("replay: scores must be finite")
        if any(c <= 0 for row in self.costs for c in row):
            raise ValueError("replay: costs must be positive")
        if len(set(self.groups)) != len(self.groups):
            raise ValueError("replay: duplicate (scene, light) groups")
        if self.ae is not None and self.ae.scores.shape != (shape[0], AE_SHOTS):
            raise ValueError(f"replay: AE table must be {(shape[0], AE_SHOTS)}")

    @property
    def has_ae(self) -> bool:
        return self.ae is not None

    @property
    def cost_totals(self) -> list[Fraction]:
        """Per-option cost summed over groups."""
        return [sum(column, Fraction(0)) for column in zip(*self.costs, strict=True)]


def _row_fields(
    group: Group, param_id: int, params: SensorParams, score: float, hit: bool, cost: Fraction
) -> list[str]:
    return [
        group[0],
        group[1],
        str(param_id),
        str(params.iso),
        format_shutter(params.shutter_s),
        str(params.aperture_f),
        repr(float(score)),
        "1" if hit else "0",
        format_seconds(cost, places=COST_PLACES),
    ]


def format_scores(matrix: ScoreMatrix) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(HEADER)
    n = len(matrix.grid)
    for g, group in enumerate(matrix.groups):
        for i, params in enumerate(matrix.grid.options):
            hit, cost = matrix.correct[g, i], matrix.costs[g][i]
            writer.writerow(_row_fields(group, i, params, matrix.scores[g, i], hit, cost))
        if matrix.ae is not None:
            for j in range(AE_SHOTS):
                writer.writerow(
                    _row_fields(
                        group,
                        n + j,
                        matrix.ae.params[g][j],
                        matrix.ae.scores[g, j],
                        matrix.ae.correct[g, j],
                        matrix.ae.costs[g][j],
                    )
                )
    return buffer.getvalue()


def write_scores(path: Path, matrix: ScoreMatrix) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_scores(matrix), encoding="utf-8", newline="\n")
    return path


def matrix_digest(matrix: ScoreMatrix) -> str:
    return hashlib.sha256(format_scores(matrix).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class _Row:
    params: SensorParams
    score: float
    correct: bool
    cost: Fraction


def _parse_row(fields: list[str], line: int, grid: ParamGrid) -> tuple[Group, int, _Row]:
    if len(fields) != len(HEADER):
        raise ParseError("replay", f"expected {len(HEADER)} fields, got {len(fields)}", line=line)
    scene_id, light_id, pid_text, iso_text, shutter_text, aperture_text = fields[:6]
    score_text, correct_text, cost_text = fields[6:]
    if not scene_id or not light_id:
        raise ParseError("replay", "empty scene_id or light_id", line=line)

    try:
        param_id = int(pid_text)
    except ValueError:
        raise ParseError("replay", f"invalid param_id {pid_text!r}", line=line) from None
    n = len(grid)
    if not 0 <= param_id < n + AE_SHOTS:
        message = f"has param_id {param_id} outside [0, {n + AE_SHOTS - 1}] (line {line})"
        raise StructureError("replay", message, group=(scene_id, light_id))

    try:
        aperture = float(aperture_text)
        if not math.isfinite(aperture):
            raise ValueError(aperture_text)
        params = SensorParams(int(iso_text), parse_shutter(shutter_text), aperture)
    except (ValueError, ZeroDivisionError):
        raise ParseError(
            "replay",
            f"invalid sensor parameters ({iso_text}, {shutter_text}, {aperture_text})",
            line=line,
        ) from None
    if param_id < n and params != grid.options[param_id]:
        raise ParseError(
            "replay",
            f"param_id {param_id} is {grid.options[param_id].label}, row says {params.label}",
            line=line,
        )

    try:
        score = float(score_text)
    except ValueError:
        raise ParseError("replay", f"invalid score {score_text!r}", line=line) from None
    if not math.isfinite(score):
        raise ParseError("replay", f"non-finite score {score_text!r}", line=line)

    if correct_text not in ("0", "1"):
        raise ParseError("replay", f"correct must be 0 or 1, got {correct_text!r}", line=line)

    try:
        cost_decimal = Decimal(cost_text)
    except InvalidOperation:
        raise ParseError("replay", f"invalid cost_s {cost_text!r}", line=line) from None
    if not cost_decimal.is_finite() or cost_decimal <= 0:
        message = f"cost_s must be a positive decimal, got {cost_text!r}"
        raise ParseError("replay", message, line=line)

    row = _Row(params, score, correct_text == "1", Fraction(cost_decimal))
    return (scene_id, light_id), param_id, row


def load_scores(
    path: Path,
    *,
    scorer_id: ScorerId | str = "confidence",
    model_id: str | None = None,
    dataset_id: str | None = None,
    grid: ParamGrid | None = None,
) -> ScoreMatrix:
    grid = grid or build_default_grid()
    n = len(grid)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError("replay", f"cannot read {path}: {exc}") from exc

    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(header) != HEADER:
        raise FormatError("replay", f"{path}: header must be {','.join(HEADER)}, got {header}")

    rows: dict[Group, dict[int, _Row]] = {}
    for line, fields in enumerate(reader, start=2):
        if not fields:
            continue
        group, param_id, row = _parse_row(fields, line, grid)
        members = rows.setdefault(group, {})
        if param_id in members:
            raise StructureError("replay", f"has duplicate param_id {param_id}", group=group)
        members[param_id] = row
    if not rows:
        raise FormatError("replay", f"{path}: no data rows")

    ae_ids = range(n, n + AE_SHOTS)
    with_ae = {group for group, members in rows.items() if any(i in members for i in ae_ids)}
    for group, members in rows.items():
        missing = [i for i in range(n) if i not in members]
        if missing:
            raise StructureError("replay", f"is missing param_id {missing[0]}", group=group)
        if with_ae:
            missing_ae = [i for i in ae_ids if i not in members]
            if missing_ae:
                raise StructureError(
                    "replay", f"is missing AE row param_id {missing_ae[0]}", group=group
                )

    groups = tuple(rows)
    table = [[rows[group][i] for i in range(n)] for group in groups]
    ae = None
    if with_ae:
        shots = [[rows[group][i] for i in ae_ids] for group in groups]
        ae = AeRows(
            params=tuple(tuple(r.params for r in shot) for shot in shots),
            scores=np.array([[r.score for r in shot] for shot in shots], dtype=np.float64),
            correct=np.array([[r.correct for r in shot] for shot in shots], dtype=bool),
            costs=tuple(tuple(r.cost for r in shot) for shot in shots),
        )
    matrix = ScoreMatrix(
        dataset_id=dataset_id or path.stem,
        scorer_id=scorer_id,
        model_id=model_id or path.stem,
        grid=grid,
        groups=groups,
        scores=np.array([[r.score for r in row] for row in table], dtype=np.float64),
        correct=np.array([[r.correct for r in row] for row in table], dtype=bool),
        costs=tuple(tuple(r.cost for r in row) for row in table),
        ae=ae,
    )
    logger.info("loaded %d groups from %s (AE rows: %s)", len(groups), path, "yes" if ae else "no")
    return matrix


def _lens(matrix: ScoreMatrix, csa: CsaId, k: int, seed: int) -> PolicyOutcome:
    hits = np.empty(len(matrix.groups))
    chosen = np.empty(len(matrix.groups), dtype=np.int64)
    costs = []
    for g, (scene_id, light_id) in enumerate(matrix.groups):
        row_costs = matrix.costs[g]
        rng = rng_for(seed, "plan", scene_id, light_id, csa, k)
        ids = candidate_ids(matrix.grid, csa, k, rng, row_costs)
        best = argmax_canonical(matrix.scores[g], ids)
        hits[g] = float(matrix.correct[g, best])
        chosen[g] = best
        costs.append(sum((row_costs[i] for i in ids), Fraction(0)))
    return PolicyOutcome(hits, tuple(costs), chosen)


def _random(matrix: ScoreMatrix) -> PolicyOutcome:
    n = len(matrix.grid)
    return PolicyOutcome(
        hits=matrix.correct.mean(axis=1),
        costs=tuple(sum(row, Fraction(0)) / n for row in matrix.costs),
        chosen=np.full(len(matrix.groups), NO_SINGLE_OPTION, dtype=np.int64),
    )


def _oracle_s(matrix: ScoreMatrix) -> PolicyOutcome:
    # AE shots count as captures too, so the oracle also bounds AE on external data
    hits = np.zeros(len(matrix.groups))
    chosen = np.zeros(len(matrix.groups), dtype=np.int64)
    costs = []
    for g in range(len(matrix.groups)):
        correct = np.flatnonzero(matrix.correct[g])
        if correct.size:
            hits[g], chosen[g] = 1.0, int(correct[0])
            costs.append(matrix.costs[g][int(correct[0])])
            continue
        if matrix.ae is not None and matrix.ae.correct[g].any():
            shot = int(np.flatnonzero(matrix.ae.correct[g])[0])
            hits[g], chosen[g] = 1.0, NO_SINGLE_OPTION
            costs.append(matrix.ae.costs[g][shot])
            continue
        costs.append(matrix.costs[g][0])
    return PolicyOutcome(hits, tuple(costs), chosen)


def _oracle_f(matrix: ScoreMatrix, param_id: int) -> PolicyOutcome:
    return PolicyOutcome(
        hits=matrix.correct[:, param_id].astype(np.float64),
        costs=tuple(row[param_id] for row in matrix.costs),
        chosen=np.full(len(matrix.groups), param_id, dtype=np.int64),
    )


def _ae(matrix: ScoreMatrix, aggregate: AeAggregate) -> PolicyOutcome:
    if matrix.ae is None:
        first_ae = len(matrix.grid)
        raise ConfigError(
            "replay",
            f"policy 'ae' needs AE rows (param_id {first_ae}..{first_ae + AE_SHOTS - 1}) "
            f"but {matrix.dataset_id} has none",
        )
    shots = matrix.ae.correct
    hits = shots.any(axis=1) if aggregate == "best_of_5" else shots[:, 0]
    chosen = [
        matrix.grid.index(shots_params[0]) if shots_params[0] in matrix.grid else NO_SINGLE_OPTION
        for shots_params in matrix.ae.params
    ]
    return PolicyOutcome(
        hits=hits.astype(np.float64),
        costs=tuple(sum(row, Fraction(0)) for row in matrix.ae.costs),
        chosen=np.array(chosen, dtype=np.int64),
    )


def pooled_oracle_f(matrices: Sequence[ScoreMatrix]) -> int:
    """Oracle-F option pooled over every model's matrix of one dataset."""
    totals = [
        sum(column, Fraction(0))
        for column in zip(*(m.cost_totals for m in matrices), strict=True)
    ]
    return oracle_f([m.correct for m in matrices], totals)


def check_dominance(
    groups: Sequence[Group], outcomes: dict[str, PolicyOutcome], *, context: str = ""
) -> None:
    """Oracle-S must be at least as accurate as every other policy on every group."""
    bound = outcomes["oracle_s"].hits
    for label, outcome in outcomes.items():
        above = np.flatnonzero(outcome.hits > bound + 1e-12)
        if above.size:
            group = groups[int(above[0])]
            raise InvariantViolation("replay", f"{label} beats oracle_s on group {group}{context}")


def evaluate_matrix(
    matrix: ScoreMatrix,
    *,
    policies: Sequence[PolicyId],
    csa: CsaId,
    k_values: Sequence[int],
    seed: int,
    ae_aggregate: AeAggregate = "top1",
    oracle_f_param: int | None = None,
) -> RunEvaluation:
    unknown = [p for p in policies if p not in POLICY_IDS]
    if unknown:
        raise ConfigError("replay", f"unknown policies {unknown}. Available: {list(POLICY_IDS)}")
    if oracle_f_param is None:
        oracle_f_param = pooled_oracle_f([matrix])

    bound = _oracle_s(matrix)
    outcomes: dict[str, PolicyOutcome] = {}
    for policy in policies:
        if policy == "oracle_s":
            outcomes["oracle_s"] = bound
        elif policy == "oracle_f":
            outcomes["oracle_f"] = _oracle_f(matrix, oracle_f_param)
        elif policy == "ae":
            outcomes["ae"] = _ae(matrix, ae_aggregate)
        elif policy == "random":
            outcomes["random"] = _random(matrix)
        elif policy == "lens":
            outcomes["lens"] = _lens(matrix, "full", len(matrix.grid), seed)
            if csa != "full":
                for k in k_values:
                    outcomes[lens_label(csa, k)] = _lens(matrix, csa, k, seed)

    check_dominance(
        matrix.groups,
        {"oracle_s": bound, **outcomes},
        context=f" (seed {seed}, model {matrix.model_id})",
    )
    return RunEvaluation(
        seed=seed,
        model_id=matrix.model_id,
        groups=matrix.groups,
        outcomes=outcomes,
        oracle_f_param=oracle_f_param if "oracle_f" in policies else None,
    )


def evaluate_runs(
    batches: Sequence[tuple[int, Sequence[ScoreMatrix]]],
    *,
    policies: Sequence[PolicyId],
    csa: CsaId,
    k_values: Sequence[int],
    ae_aggregate: AeAggregate = "top1",
) -> list[RunEvaluation]:
    """Evaluate every (seed, model) matrix; Oracle-F is pooled over the models of a seed."""
    runs = []
    for seed, matrices in batches:
        pooled = pooled_oracle_f(matrices)
        for matrix in matrices:
            runs.append(
                evaluate_matrix(
                    matrix,
                    policies=policies,
                    csa=csa,
                    k_values=k_values,
                    seed=seed,
                    ae_aggregate=ae_aggregate,
                    oracle_f_param=pooled,
                )
            )
            logger.debug("evaluated seed %d model %s", seed, matrix.model_id)
    return runs


def replay_fingerprint(
    matrices: Sequence[ScoreMatrix],
    *,
    policies: Sequence[PolicyId],
    csa: CsaId,
    k_values: Sequence[int],
    seeds: Sequence[int],
    ae_aggregate: AeAggregate,
) -> str:
    doc = {
        "matrices": [matrix_digest(m) for m in matrices],
        "policies": list(policies),
        "csa": csa,
        "k": list(k_values),
        "seeds": list(seeds),
        "ae_aggregate": ae_aggregate,
    }
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


def replay_evaluate(
    matrices: ScoreMatrix | Sequence[ScoreMatrix],
    *,
    policies: Sequence[PolicyId] = POLICY_IDS,
    csa: CsaId = "full",
    k_values: Sequence[int] = (),
    seeds: Sequence[int] = (0,),
    ae_aggregate: AeAggregate = "top1",
) -> BenchReport:
    """Run every policy over one matrix per model, once per seed."""
    if isinstance(matrices, ScoreMatrix):
        matrices = [matrices]
    if not matrices:
        raise ValueError("replay: no score matrices given")
    if not seeds:
        raise ValueError("replay: seed list must not be empty")
    if csa != "full" and not k_values:
        raise ValueError(f"replay: {csa} needs at least one k value")
    n = len(matrices[0].grid)
    for k in k_values:
        if not 1 <= k <= n:
            raise ValueError(f"replay: k must be in [1, {n}], got {k}")

    runs = evaluate_runs(
        [(seed, matrices) for seed in seeds],
        policies=policies,
        csa=csa,
        k_values=k_values,
        ae_aggregate=ae_aggregate,
    )
    return build_report(
        runs,
        config_fingerprint=replay_fingerprint(
            matrices,
            policies=policies,
            csa=csa,
            k_values=k_values,
            seeds=seeds,
            ae_aggregate=ae_aggregate,
        ),
        scorer_id=matrices[0].scorer_id,  # type: ignore[arg-type]
        ae_aggregate=ae_aggregate,
        csa=csa,
        k_values=k_values,
        seeds=seeds,
    )
