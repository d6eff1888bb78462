"""Per-run policy outcomes and the aggregated benchmark report."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt

from lensbench import AeAggregate, CsaId, ScorerId
from lensbench._io import write_json
from lensbench.param_space import format_seconds

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]

NO_SINGLE_OPTION = -1


def lens_label(csa: CsaId, k: int) -> str:
    """Report label of a Lens variant; the exhaustive plan is plain ``lens``."""
    return "lens" if csa == "full" else f"lens_{csa}_k{k}"


@dataclass(frozen=True, eq=False)
class PolicyOutcome:
    """One policy over every (scene, light) group of one run.

    ``hits`` is 0/1 per group except for Random, which carries its expected accuracy.
    ``chosen`` holds the selected option index, or ``NO_SINGLE_OPTION``.
    """

    hits: FloatArray
    costs: tuple[Fraction, ...]
    chosen: IntArray

    @property
    def accuracy(self) -> float:
        return float(self.hits.mean())

    @property
    def mean_cost(self) -> Fraction:
        return sum(self.costs, Fraction(0)) / len(self.costs)


@dataclass(frozen=True, eq=False)
class RunEvaluation:
    seed: int
    model_id: str
    groups: tuple[tuple[str, str], ...]
    outcomes: dict[str, PolicyOutcome]
    oracle_f_param: int | None = None

    @property
    def light_ids(self) -> list[str]:
        return list(dict.fromkeys(light for _, light in self.groups))

    def per_light(self, label: str) -> dict[str, float]:
        hits = self.outcomes[label].hits
        lights = np.array([light for _, light in self.groups])
        return {light: float(hits[lights == light].mean()) for light in self.light_ids}


@dataclass(frozen=True)
class PolicySummary:
    label: str
    accuracy_mean: float
    accuracy_std: float
    mean_cost_s: Fraction
    per_light: dict[str, float]
    worst_light: str
    worst_light_accuracy: float
    runs: int

    def to_json(self) -> dict[str, Any]:
        return {
            "accuracy_mean": self.accuracy_mean,
            "accuracy_std": self.accuracy_std,
            "mean_cost_s": format_seconds(self.mean_cost_s),
            "per_light": self.per_light,
            "worst_light": self.worst_light,
            "worst_light_accuracy": self.worst_light_accuracy,
            "runs": self.runs,
        }


def summarize(runs: Sequence[RunEvaluation], label: str) -> PolicySummary:
    """Mean/std over runs; per-light accuracy is averaged run by run."""
    if not runs:
        raise ValueError("report: nothing to summarize")
    accuracies = np.array([run.outcomes[label].accuracy for run in runs])
    cost = sum((run.outcomes[label].mean_cost for run in runs), Fraction(0)) / len(runs)

    lights = list(dict.fromkeys(light for run in runs for light in run.light_ids))
    per_run = [run.per_light(label) for run in runs]
    per_light = {
        light: float(np.mean([entry[light] for entry in per_run if light in entry]))
        for light in lights
    }
    worst = min(lights, key=lambda light: (per_light[light], lights.index(light)))
    return PolicySummary(
        label=label,
        accuracy_mean=float(accuracies.mean()),
        accuracy_std=float(accuracies.std()),
        mean_cost_s=cost,
        per_light=per_light,
        worst_light=worst,
        worst_light_accuracy=per_light[worst],
        runs=len(runs),
    )


@dataclass(frozen=True)
class BenchReport:
    config_fingerprint: str
    scorer_id: ScorerId
    ae_aggregate: AeAggregate
    csa: CsaId
    k_values: tuple[int, ...]
    seeds: tuple[int, ...]
    policies: dict[str, PolicySummary]
    runs: tuple[RunEvaluation, ...] = field(repr=False)
    ablation: dict[str, dict[str, float]] | None = None
    separation: dict[str, dict[str, Any]] | None = None

    def accuracy(self, label: str) -> float:
        try:
            return self.policies[label].accuracy_mean
        except KeyError:
            raise KeyError(f"report: no policy {label!r} in report") from None

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "config_fingerprint": self.config_fingerprint,
            "scorer_id": self.scorer_id,
            "ae_aggregate": self.ae_aggregate,
            "csa": {"algorithm": self.csa, "k": list(self.k_values)},
            "seeds": list(self.seeds),
            "policies": {label: s.to_json() for label, s in self.policies.items()},
            "runs": [
                {
                    "seed": run.seed,
                    "model_id": run.model_id,
                    "oracle_f_param": run.oracle_f_param,
                    "accuracy": {label: o.accuracy for label, o in run.outcomes.items()},
                    "mean_cost_s": {
                        label: format_seconds(o.mean_cost) for label, o in run.outcomes.items()
                    },
                }
                for run in self.runs
            ],
        }
        if self.ablation is not None:
            doc["ablation"] = self.ablation
        if self.separation is not None:
            doc["separation"] = self.separation
        return doc


def build_report(
    runs: Sequence[RunEvaluation],
    *,
    config_fingerprint: str,
    scorer_id: ScorerId,
    ae_aggregate: AeAggregate,
    csa: CsaId,
    k_values: Sequence[int],
    seeds: Sequence[int],
) -> BenchReport:
    labels = list(dict.fromkeys(label for run in runs for label in run.outcomes))
    return BenchReport(
        config_fingerprint=config_fingerprint,
        scorer_id=scorer_id,
        ae_aggregate=ae_aggregate,
        csa=csa,
        k_values=tuple(k_values),
        seeds=tuple(seeds),
        policies={label: summarize(runs, label) for label in labels},
        runs=tuple(runs),
    )


def write_report(path: Path, report: BenchReport) -> Path:
    return write_json(path, report.to_json())
