"""Lens selection loop, candidate selection algorithms (CSAs), baselines and oracles."""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

import numpy as np
import numpy.typing as npt

from lensbench import AeAggregate, CsaId, ScorerId
from lensbench._seeds import derive_seed
from lensbench.param_space import (
    CaptureCostModel,
    ParamGrid,
    SensorParams,
    capture_cost,
    format_seconds,
    partition_grid,
    total_cost,
)
from lensbench.perception import (
    ClassifierModel,
    QualityScore,
    extract_features,
    predict,
    score_image,
)
from lensbench.scene_sim import (
    CapturedImage,
    ExposureConstants,
    LightCondition,
    Scene,
    auto_expose,
)

Camera = Callable[[Scene, LightCondition, SensorParams, int], CapturedImage]
Scorer = Callable[[ClassifierModel, CapturedImage], QualityScore]


@dataclass(frozen=True)
class CandidatePlan:
    algorithm: CsaId
    k: int
    chosen: tuple[SensorParams, ...]
    param_ids: tuple[int, ...]
    total_cost_s: Fraction


@dataclass(frozen=True)
class SelectionResult:
    scene_id: str
    light_id: str
    policy_id: str
    chosen_param: SensorParams
    param_id: int
    quality: QualityScore | None
    predicted_class: int
    correct: bool
    candidates_evaluated: int
    capture_cost_s: Fraction

    def to_record(self) -> dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "light_id": self.light_id,
            "policy_id": self.policy_id,
            "param_id": self.param_id,
            "iso": self.chosen_param.iso,
            "shutter": self.chosen_param.shutter_text,
            "aperture": self.chosen_param.aperture_f,
            "quality": None if self.quality is None else self.quality.value,
            "scorer_id": None if self.quality is None else self.quality.scorer_id,
            "predicted_class": self.predicted_class,
            "correct": self.correct,
            "candidates_evaluated": self.candidates_evaluated,
            "capture_cost_s": format_seconds(self.capture_cost_s),
        }


def shot_seed(scene_seed: int, param_id: int) -> int:
    """Noise seed of one capture; shared by every policy that shoots the same option."""
    return derive_seed(scene_seed, "shot", param_id)


def _check_k(grid_size: int, k: int) -> None:
    if not 1 <= k <= grid_size:
        raise ValueError(f"selection: k must be in [1, {grid_size}], got {k}")


def _make_plan(
    grid: ParamGrid, algorithm: CsaId, ids: Sequence[int], cost_model: CaptureCostModel | None
) -> CandidatePlan:
    ordered = tuple(sorted(int(i) for i in ids))
    chosen = tuple(grid.options[i] for i in ordered)
    return CandidatePlan(algorithm, len(ordered), chosen, ordered, total_cost(chosen, cost_model))


def plan_full(grid: ParamGrid, cost_model: CaptureCostModel | None = None) -> CandidatePlan:
    return _make_plan(grid, "full", range(len(grid)), cost_model)


def _csa1_ids(num_options: int, k: int, rng: np.random.Generator) -> list[int]:
    _check_k(num_options, k)
    return [int(i) for i in rng.choice(num_options, size=k, replace=False)]


def plan_csa1(
    grid: ParamGrid,
    k: int,
    rng: np.random.Generator,
    cost_model: CaptureCostModel | None = None,
) -> CandidatePlan:
    """Uniform sample of k options without replacement."""
    return _make_plan(grid, "csa1", _csa1_ids(len(grid), k, rng), cost_model)


def round_robin(
    cell_sizes: Sequence[int], k: int, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """(cell, member) picks: one per non-exhausted cell per round, random order inside cells."""
    orders = [rng.permutation(size) for size in cell_sizes]
    picks: list[tuple[int, int]] = []
    depth = 0
    while len(picks) < k:
        for cell, order in enumerate(orders):
            if depth < len(order) and len(picks) < k:
                picks.append((cell, int(order[depth])))
        depth += 1
    return picks


def plan_csa2(
    grid: ParamGrid,
    k: int,
    rng: np.random.Generator,
    cost_model: CaptureCostModel | None = None,
) -> CandidatePlan:
    """Grid-cell random selection: picks spread round-robin over the CSA2 cells."""
    return _make_plan(grid, "csa2", _csa2_ids(grid, k, rng), cost_model)


def _csa2_ids(grid: ParamGrid, k: int, rng: np.random.Generator) -> list[int]:
    _check_k(len(grid), k)
    cells = partition_grid(grid, k)
    picks = round_robin([len(cell) for cell in cells], k, rng)
    return [grid.index(cells[c][m]) for c, m in picks]


def cheapest_indices(
    costs: Sequence[Fraction], k: int, rng: np.random.Generator
) -> list[int]:
    """Indices of the k lowest costs; ties at the boundary are drawn uniformly."""
    _check_k(len(costs), k)
    chosen: list[int] = []
    for level in sorted(set(costs)):
        tied = [i for i, cost in enumerate(costs) if cost == level]
        room = k - len(chosen)
        if len(tied) <= room:
            chosen.extend(tied)
        else:
            chosen.extend(int(i) for i in rng.choice(tied, size=room, replace=False))
        if len(chosen) == k:
            break
    return chosen


def plan_csa3(
    grid: ParamGrid,
    k: int,
    cost_model: CaptureCostModel | None,
    rng: np.random.Generator,
) -> CandidatePlan:
    costs = [capture_cost(p, cost_model) for p in grid.options]
    return _make_plan(grid, "csa3", cheapest_indices(costs, k, rng), cost_model)


def plan(
    grid: ParamGrid,
    algorithm: CsaId,
    k: int,
    rng: np.random.Generator,
    cost_model: CaptureCostModel | None = None,
) -> CandidatePlan:
    if algorithm == "full":
        return plan_full(grid, cost_model)
    if algorithm == "csa1":
        return plan_csa1(grid, k, rng, cost_model)
    if algorithm == "csa2":
        return plan_csa2(grid, k, rng, cost_model)
    if algorithm == "csa3":
        return plan_csa3(grid, k, cost_model, rng)
    raise ValueError(f"selection: unknown candidate selection algorithm {algorithm!r}")


def candidate_ids(
    grid: ParamGrid,
    algorithm: CsaId,
    k: int,
    rng: np.random.Generator,
    costs: Sequence[Fraction],
) -> list[int]:
    """Canonical indices a CSA draws when per-option costs are given explicitly.

    Consumes the generator exactly like :func:`plan`, so a table replay draws the same
    candidates as a live capture loop seeded identically.
    """
    if algorithm == "full":
        return list(range(len(grid)))
    if algorithm == "csa1":
        ids = _csa1_ids(len(grid), k, rng)
    elif algorithm == "csa2":
        ids = _csa2_ids(grid, k, rng)
    elif algorithm == "csa3":
        ids = cheapest_indices(costs, k, rng)
    else:
        raise ValueError(f"selection: unknown candidate selection algorithm {algorithm!r}")
    return sorted(ids)


def argmax_canonical(
    scores: Mapping[int, float] | Sequence[float] | npt.NDArray[np.float64],
    candidate_ids: Sequence[int],
) -> int:
    """Candidate with the highest score; ties go to the lowest canonical index."""
    if len(candidate_ids) == 0:
        raise ValueError("selection: no candidates to select from")
    return min(candidate_ids, key=lambda i: (-float(scores[i]), i))


def _score(model: ClassifierModel, image: CapturedImage, scorer: ScorerId | Scorer) -> QualityScore:
    if callable(scorer):
        return scorer(model, image)
    return score_image(model, image, scorer)


def lens_select(
    scene: Scene,
    light: LightCondition,
    candidate_plan: CandidatePlan,
    camera: Camera,
    scorer: ScorerId | Scorer,
    model: ClassifierModel,
    noise_seed: int,
    *,
    policy_id: str = "lens",
) -> SelectionResult:
    """Shoot every candidate, keep the capture with the highest quality score.

    Lens pays for every candidate shot, so the result carries the plan's total cost.
    """
    if not candidate_plan.chosen:
        raise ValueError("selection: plan has no candidates")
    scores: dict[int, QualityScore] = {}
    images: dict[int, CapturedImage] = {}
    for params, param_id in zip(candidate_plan.chosen, candidate_plan.param_ids, strict=True):
        image = camera(scene, light, params, shot_seed(noise_seed, param_id))
        images[param_id] = image
        scores[param_id] = _score(model, image, scorer)

    values = {i: q.value for i, q in scores.items()}
    best = argmax_canonical(values, candidate_plan.param_ids)
    predicted = int(predict(model, extract_features(images[best]))[0])
    return SelectionResult(
        scene_id=scene.scene_id,
        light_id=light.id,
        policy_id=policy_id,
        chosen_param=images[best].params,
        param_id=best,
        quality=scores[best],
        predicted_class=predicted,
        correct=predicted == scene.class_id,
        candidates_evaluated=len(candidate_plan.chosen),
        capture_cost_s=candidate_plan.total_cost_s,
    )


def policy_random(per_option_correct: Sequence[bool] | npt.NDArray[np.bool_]) -> float:
    """Expected accuracy of a uniformly random option: the mean over all options."""
    values = np.asarray(per_option_correct, dtype=bool)
    if values.size == 0:
        raise ValueError("selection: no options to average over")
    return float(values.mean())


def oracle_s(per_option_correct: Sequence[bool] | npt.NDArray[np.bool_]) -> tuple[int, bool]:
    """First correct option in canonical order, or option 0 when none is correct."""
    values = np.asarray(per_option_correct, dtype=bool)
    hits = np.flatnonzero(values)
    if hits.size:
        return int(hits[0]), True
    return 0, False


def oracle_f(
    correctness: Sequence[npt.NDArray[np.bool_]] | npt.NDArray[np.bool_],
    costs: Sequence[Fraction] | None = None,
) -> int:
    """Best single fixed option pooled over every model and scene.

    ``correctness`` holds one ``scenes x options`` boolean array per model. Ties go to the
    cheaper option (when costs are given), then to canonical order.
    """
    tensors = [np.asarray(t, dtype=bool) for t in correctness]
    if not tensors:
        raise ValueError("selection: oracle_f needs at least one correctness tensor")
    num_options = tensors[0].shape[-1]
    for tensor in tensors:
        if tensor.ndim != 2 or tensor.shape[-1] != num_options:
            raise ValueError(
                f"selection: option axes differ ({tensor.shape[-1]} vs {num_options})"
            )
    if costs is not None and len(costs) != num_options:
        raise ValueError(f"selection: {len(costs)} costs for {num_options} options")
    hits = sum(tensor.sum(axis=0, dtype=np.int64) for tensor in tensors)
    return min(
        range(num_options),
        key=lambda i: (-int(hits[i]), costs[i] if costs is not None else 0, i),
    )


def policy_ae(
    scene: Scene,
    light: LightCondition,
    grid: ParamGrid,
    camera: Camera,
    model: ClassifierModel,
    constants: ExposureConstants,
    noise_seed: int,
    *,
    scorer: ScorerId | Scorer = "confidence",
    aggregate: AeAggregate = "top1",
    cost_model: CaptureCostModel | None = None,
) -> SelectionResult:
    """Auto-exposure baseline: five shots, the first-ranked one is reported.

    With ``aggregate="best_of_5"`` the pair counts as correct when any shot is correct.
    """
    shots = auto_expose(scene, light, grid, constants)
    outcomes = []
    for params in shots:
        param_id = grid.index(params)
        image = camera(scene, light, params, shot_seed(noise_seed, param_id))
        predicted = int(predict(model, extract_features(image))[0])
        outcomes.append((param_id, image, predicted))

    pick = 0
    if aggregate == "best_of_5":
        pick = next((i for i, o in enumerate(outcomes) if o[2] == scene.class_id), 0)
    param_id, image, predicted = outcomes[pick]
    return SelectionResult(
        scene_id=scene.scene_id,
        light_id=light.id,
        policy_id="ae",
        chosen_param=image.params,
        param_id=param_id,
        quality=_score(model, image, scorer),
        predicted_class=predicted,
        correct=predicted == scene.class_id,
        candidates_evaluated=len(shots),
        capture_cost_s=total_cost(shots, cost_model),
    )
