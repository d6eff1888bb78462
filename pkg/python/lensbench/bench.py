"""Benchmark configuration and end-to-end orchestration.

Every command follows the same pipeline per master seed: generate the test scenes,
train the target models on auto-exposure captures of a separate training split, shoot
every grid option of every (scene, light) group once, and score those captures with
each model. The resulting tables are evaluated by :mod:`lensbench.replay`, which is
also what ``lensbench replay`` runs over exported score files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import sys
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed

from lensbench import (
    CSA_IDS,
    POLICY_IDS,
    SCORER_IDS,
    AeAggregate,
    CsaId,
    Mode,
    PolicyId,
    ScorerId,
)
from lensbench._io import canonical_json, write_json, write_jsonl
from lensbench._seeds import SEED_MASK, derive_seed
from lensbench.errors import ConfigError
from lensbench.param_space import (
    DEFAULT_APERTURE_LEVELS,
    DEFAULT_ISO_LEVELS,
    DEFAULT_SHUTTER_LEVELS,
    CaptureCostModel,
    ParamGrid,
    capture_cost,
    format_seconds,
    format_shutter,
    grid_from_levels,
    parse_shutter,
)
from lensbench.perception import (
    DEFAULT_KNN_K,
    POOL_GRID,
    ClassifierModel,
    TrainHyper,
    extract_batch,
    predict,
    save_model,
    score_features,
    score_separation,
    train,
)
from lensbench.replay import (
    AeRows,
    ScoreMatrix,
    evaluate_runs,
    write_scores,
)
from lensbench.report import (
    NO_SINGLE_OPTION,
    BenchReport,
    RunEvaluation,
    build_report,
    lens_label,
    summarize,
    write_report,
)
from lensbench.scene_sim import (
    AE_SHOTS,
    CALIBRATION_PARAMS,
    LIGHTS,
    MODES,
    ExposureConstants,
    LightCondition,
    Scene,
    auto_expose,
    generate_dataset,
    get_light,
    render,
    write_pgm,
    write_scenes,
)
from lensbench.selection import shot_seed

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

SWEEP_MIN_SEEDS = 5
SWEEP_HEADER = ("csa", "k", "mean_cost_s", "accuracy_mean", "accuracy_std")

Group = tuple[str, str]
FloatArray = npt.NDArray[np.float64]


def _int_tuple(value: Any) -> tuple[int, ...]:
    items = value if isinstance(value, list | tuple) else [value]
    if any(isinstance(v, bool) or not isinstance(v, int) for v in items):
        raise TypeError(f"expected integers, got {value!r}")
    return tuple(items)


def _float_tuple(value: Any) -> tuple[float, ...]:
    return tuple(float(v) for v in value)


def _str_tuple(value: Any) -> tuple[str, ...]:
    items = value if isinstance(value, list | tuple) else [value]
    return tuple(str(v) for v in items)


def _shutter_tuple(value: Any) -> tuple[str, ...]:
    return tuple(format_shutter(parse_shutter(str(v))) for v in _str_tuple(value))


def _seconds(value: Any) -> str:
    if isinstance(value, float):
        value = repr(value)
    return str(Fraction(str(value)))


def _int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"expected an integer, got {value!r}")
    return value


def _bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError(f"expected a boolean, got {value!r}")
    return value


def _opt(default: Any, coerce: Callable[[Any], Any]) -> Any:
    return field(default=default, metadata={"coerce": coerce})


@dataclass(frozen=True)
class GridSpec:
    iso_levels: tuple[int, ...] = _opt(DEFAULT_ISO_LEVELS, _int_tuple)
    shutter_levels: tuple[str, ...] = _opt(
        tuple(format_shutter(s) for s in DEFAULT_SHUTTER_LEVELS), _shutter_tuple
    )
    aperture_levels: tuple[float, ...] = _opt(DEFAULT_APERTURE_LEVELS, _float_tuple)

    def build(self) -> ParamGrid:
        return grid_from_levels(
            iso_levels=self.iso_levels,
            shutter_levels=self.shutter_levels,
            aperture_levels=self.aperture_levels,
        )


@dataclass(frozen=True)
class ExposureSpec:
    f_ref: float = _opt(9.0, float)
    sigma_read: float = _opt(0.01, float)
    sigma_shot: float = _opt(0.02, float)
    emissive_scale: float = _opt(30.0, float)
    ambient_coupling: float = _opt(0.05, float)

    def build(self) -> ExposureConstants:
        return ExposureConstants(**asdict(self))


@dataclass(frozen=True)
class TrainSpec:
    steps: int = _opt(500, _int)
    learning_rate: float = _opt(0.1, float)
    l2: float = _opt(1e-4, float)
    cap_step: bool = _opt(False, _bool)

    def build(self) -> TrainHyper:
        return TrainHyper(**asdict(self))


@dataclass(frozen=True)
class CsaSpec:
    algorithm: CsaId = _opt("full", str)
    k: tuple[int, ...] = _opt((), _int_tuple)


@dataclass(frozen=True)
class BenchConfig:
    num_classes: int = _opt(20, _int)
    samples_per_class: int = _opt(5, _int)
    train_samples_per_class: int = _opt(10, _int)
    mode: Mode = _opt("reflective", str)
    lights: tuple[str, ...] = _opt(tuple(LIGHTS), _str_tuple)
    scorer: ScorerId = _opt("confidence", str)
    policies: tuple[PolicyId, ...] = _opt(POLICY_IDS, _str_tuple)
    ae_aggregate: AeAggregate = _opt("top1", str)
    seeds: tuple[int, ...] = _opt((0, 1, 2, 3, 4), _int_tuple)
    num_models: int = _opt(1, _int)
    jobs: int = _opt(1, _int)
    output_dir: str = _opt("lensbench-out", str)
    per_shot_overhead_s: str = _opt("0", _seconds)
    grid: GridSpec = field(default_factory=GridSpec, metadata={"table": GridSpec})
    exposure: ExposureSpec = field(default_factory=ExposureSpec, metadata={"table": ExposureSpec})
    train: TrainSpec = field(default_factory=TrainSpec, metadata={"table": TrainSpec})
    csa: CsaSpec = field(default_factory=CsaSpec, metadata={"table": CsaSpec})

    def __post_init__(self) -> None:
        for name in ("num_classes", "samples_per_class", "train_samples_per_class", "num_models"):
            if getattr(self, name) < (2 if name == "num_classes" else 1):
                raise ConfigError("bench", f"{name} is too small: {getattr(self, name)}")
        if self.jobs == 0:
            raise ConfigError("bench", "jobs must be non-zero")
        _check_choice("mode", [self.mode], MODES)
        _check_choice("lights", self.lights, tuple(LIGHTS))
        _check_choice("scorer", [self.scorer], SCORER_IDS)
        _check_choice("policies", self.policies, POLICY_IDS)
        _check_choice("ae_aggregate", [self.ae_aggregate], ("top1", "best_of_5"))
        _check_choice("csa.algorithm", [self.csa.algorithm], CSA_IDS)
        for name in ("lights", "policies", "seeds"):
            values = getattr(self, name)
            if not values:
                raise ConfigError("bench", f"{name} must not be empty")
            if len(set(values)) != len(values):
                raise ConfigError("bench", f"{name} contains duplicates: {list(values)}")
        if any(not 0 <= s <= SEED_MASK for s in self.seeds):
            raise ConfigError("bench", "seeds must be unsigned 64-bit integers")

        bank = self.num_classes * self.train_samples_per_class * len(self.lights)
        if bank < DEFAULT_KNN_K:
            raise ConfigError(
                "bench", f"training set of {bank} captures is smaller than knn k={DEFAULT_KNN_K}"
            )
        try:
            grid = self.grid.build()
            self.exposure.build()
            self.train.build()
            self.cost_model()
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError("bench", str(exc)) from exc
        if len(grid) < AE_SHOTS:
            raise ConfigError("bench", f"grid needs at least {AE_SHOTS} options for AE")
        for k in self.csa.k:
            if not 1 <= k <= len(grid):
                raise ConfigError("bench", f"csa.k must be in [1, {len(grid)}], got {k}")
        if self.csa.algorithm != "full" and not self.csa.k:
            raise ConfigError("bench", f"csa.algorithm = {self.csa.algorithm} needs csa.k")

    def build_grid(self) -> ParamGrid:
        return self.grid.build()

    def constants(self) -> ExposureConstants:
        return self.exposure.build()

    def hyper(self) -> TrainHyper:
        return self.train.build()

    def light_conditions(self) -> list[LightCondition]:
        return [get_light(light_id) for light_id in self.lights]

    def cost_model(self) -> CaptureCostModel:
        return CaptureCostModel(Fraction(self.per_shot_overhead_s))

    @property
    def out(self) -> Path:
        return Path(self.output_dir)


def _check_choice(name: str, values: Sequence[str], allowed: Sequence[str]) -> None:
    bad = [v for v in values if v not in allowed]
    if bad:
        raise ConfigError("bench", f"invalid {name} {bad}. Available: {list(allowed)}")


def _build(cls: type, table: Any, where: str) -> Any:
    if not isinstance(table, Mapping):
        raise ConfigError("bench", f"{where} must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError("bench", f"unknown key(s) in {where}: {', '.join(unknown)}")
    values = {}
    for name, raw in table.items():
        meta = known[name].metadata
        if "table" in meta:
            values[name] = _build(meta["table"], raw, f"[{name}]")
            continue
        try:
            values[name] = meta["coerce"](raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError("bench", f"invalid value for {name} in {where}: {exc}") from None
    return cls(**values)


def config_from_dict(raw: Mapping[str, Any]) -> BenchConfig:
    return _build(BenchConfig, raw, "config")


def _merge_overrides(raw: dict[str, Any], overrides: list[tuple[str, Any]]) -> dict[str, Any]:
    """Apply ``dotted.key`` overrides, skipping unset (``None``) ones."""
    for key, value in overrides:
        if value is None:
            continue
        *tables, name = key.split(".")
        target = raw
        for table in tables:
            target = target.setdefault(table, {})
        target[name] = value
    return raw


def load_config(
    path: Path | None = None, overrides: list[tuple[str, Any]] | None = None
) -> BenchConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = tomllib.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("bench", f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("bench", f"{path}: {exc}") from exc
    merged = _merge_overrides(raw, overrides or [])
    config = config_from_dict(merged)
    logger.debug("config %s", config_fingerprint(config)[:12])
    return config


def config_to_json(config: BenchConfig) -> dict[str, Any]:
    return asdict(config)


def config_fingerprint(config: BenchConfig) -> str:
    """SHA-256 of the canonical config; ``output_dir`` and ``jobs`` do not affect results."""
    doc = config_to_json(config)
    del doc["output_dir"], doc["jobs"]
    return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class SeedBundle:
    seed: int
    scenes: list[Scene]
    models: list[ClassifierModel]


@dataclass(frozen=True, eq=False)
class CaptureTable:
    """Every grid option of every group, shot once and scored by one model."""

    seed: int
    model_id: str
    grid: ParamGrid
    groups: tuple[Group, ...]
    scores: dict[str, FloatArray]
    predicted: npt.NDArray[np.int64]
    correct: npt.NDArray[np.bool_]
    costs: tuple[tuple[Fraction, ...], ...]
    ae_ids: npt.NDArray[np.int64]

    def matrix(self, scorer_id: ScorerId) -> ScoreMatrix:
        rows = np.arange(len(self.groups))[:, np.newaxis]
        ae = AeRows(
            params=tuple(tuple(self.grid.options[i] for i in ids) for ids in self.ae_ids),
            scores=self.scores[scorer_id][rows, self.ae_ids],
            correct=self.correct[rows, self.ae_ids],
            costs=tuple(
                tuple(self.costs[g][i] for i in ids) for g, ids in enumerate(self.ae_ids)
            ),
        )
        return ScoreMatrix(
            dataset_id=f"seed{self.seed}",
            scorer_id=scorer_id,
            model_id=self.model_id,
            grid=self.grid,
            groups=self.groups,
            scores=self.scores[scorer_id],
            correct=self.correct,
            costs=self.costs,
            ae=ae,
        )


def model_seed(master_seed: int, model_index: int) -> int:
    return derive_seed(master_seed, "model", model_index)


def group_seed(master_seed: int, scene_id: str, light_id: str) -> int:
    """Base noise seed of a (scene, light) group; each shot derives from it by option index."""
    return derive_seed(master_seed, "scene", scene_id, light_id)


def train_models(config: BenchConfig, seed: int) -> list[ClassifierModel]:
    train_scenes = generate_dataset(
        config.num_classes,
        config.train_samples_per_class,
        config.mode,
        seed,
        split="train",
        highlights=False,
    )
    return [
        train(
            train_scenes,
            config.light_conditions(),
            config.build_grid(),
            config.constants(),
            config.hyper(),
            model_seed(seed, m),
            num_classes=config.num_classes,
        )
        for m in range(config.num_models)
    ]


def prepare_seed(config: BenchConfig, seed: int) -> SeedBundle:
    scenes = generate_dataset(config.num_classes, config.samples_per_class, config.mode, seed)
    return SeedBundle(seed, scenes, train_models(config, seed))


def _capture_scene(
    scene: Scene,
    lights: Sequence[LightCondition],
    grid: ParamGrid,
    constants: ExposureConstants,
    seed: int,
) -> tuple[FloatArray, npt.NDArray[np.int64]]:
    features = np.empty((len(lights), len(grid), POOL_GRID * POOL_GRID))
    ae_ids = np.empty((len(lights), AE_SHOTS), dtype=np.int64)
    for li, light in enumerate(lights):
        base = group_seed(seed, scene.scene_id, light.id)
        images = [
            render(scene, light, params, constants, shot_seed(base, i))
            for i, params in enumerate(grid.options)
        ]
        features[li] = extract_batch(images)
        ae_ids[li] = [grid.index(p) for p in auto_expose(scene, light, grid, constants)]
    return features, ae_ids


def capture_features(
    config: BenchConfig, seed: int, scenes: Sequence[Scene]
) -> tuple[tuple[Group, ...], FloatArray, npt.NDArray[np.int64]]:
    """Features of all captures, shaped ``groups x options x dims``, and the AE option ids."""
    lights = config.light_conditions()
    grid = config.build_grid()
    constants = config.constants()
    parts = Parallel(n_jobs=config.jobs)(
        delayed(_capture_scene)(scene, lights, grid, constants, seed) for scene in scenes
    )
    groups = tuple((scene.scene_id, light.id) for scene in scenes for light in lights)
    features = np.concatenate([f for f, _ in parts])
    ae_ids = np.concatenate([a for _, a in parts])
    return groups, features, ae_ids


def build_tables(config: BenchConfig, bundle: SeedBundle) -> list[CaptureTable]:
    grid = config.build_grid()
    cost_model = config.cost_model()
    option_costs = tuple(capture_cost(p, cost_model) for p in grid.options)

    groups, features, ae_ids = capture_features(config, bundle.seed, bundle.scenes)
    num_groups, num_options, dims = features.shape
    flat = features.reshape(num_groups * num_options, dims)
    labels = np.repeat([scene.class_id for scene in bundle.scenes], len(config.lights))

    tables = []
    for m, model in enumerate(bundle.models):
        predicted = predict(model, flat).reshape(num_groups, num_options)
        scores = {
            scorer: score_features(model, flat, scorer).reshape(num_groups, num_options)
            for scorer in SCORER_IDS
        }
        tables.append(
            CaptureTable(
                seed=bundle.seed,
                model_id=str(m),
                grid=grid,
                groups=groups,
                scores=scores,
                predicted=predicted,
                correct=predicted == labels[:, np.newaxis],
                costs=(option_costs,) * num_groups,
                ae_ids=ae_ids,
            )
        )
    logger.info(
        "seed %d: %d groups x %d options captured, %d model(s) scored",
        bundle.seed,
        num_groups,
        num_options,
        len(tables),
    )
    return tables


def collect_tables(
    config: BenchConfig, seeds: Sequence[int] | None = None
) -> dict[int, list[CaptureTable]]:
    return {
        seed: build_tables(config, prepare_seed(config, seed)) for seed in seeds or config.seeds
    }


def evaluate_tables(
    tables: Mapping[int, Sequence[CaptureTable]],
    *,
    scorer: ScorerId,
    policies: Sequence[PolicyId],
    csa: CsaId,
    k_values: Sequence[int],
    ae_aggregate: AeAggregate,
) -> list[RunEvaluation]:
    return evaluate_runs(
        [(seed, [t.matrix(scorer) for t in seed_tables]) for seed, seed_tables in tables.items()],
        policies=policies,
        csa=csa,
        k_values=k_values,
        ae_aggregate=ae_aggregate,
    )


def _records(run: RunEvaluation, table: CaptureTable, scorer: ScorerId) -> list[dict[str, Any]]:
    records = []
    for g, (scene_id, light_id) in enumerate(run.groups):
        for label, outcome in run.outcomes.items():
            chosen = int(outcome.chosen[g])
            record: dict[str, Any] = {
                "seed": run.seed,
                "model_id": run.model_id,
                "scene_id": scene_id,
                "light_id": light_id,
                "policy_id": label,
                "param_id": None,
                "iso": None,
                "shutter": None,
                "aperture": None,
                "quality": None,
                "scorer_id": scorer,
                "predicted_class": None,
                "hit": float(outcome.hits[g]),
                "capture_cost_s": format_seconds(outcome.costs[g]),
            }
            if chosen != NO_SINGLE_OPTION:
                params = table.grid.options[chosen]
                record.update(
                    param_id=chosen,
                    iso=params.iso,
                    shutter=params.shutter_text,
                    aperture=params.aperture_f,
                    quality=float(table.scores[scorer][g, chosen]),
                    predicted_class=int(table.predicted[g, chosen]),
                )
            records.append(record)
    return records


def cmd_gen(config: BenchConfig, *, previews: bool = False) -> Path:
    """Write the test scene set of the first seed (and optional calibration-capture previews)."""
    seed = config.seeds[0]
    scenes = generate_dataset(config.num_classes, config.samples_per_class, config.mode, seed)
    directory = config.out / "scenes"
    index = write_scenes(directory, scenes)
    if previews:
        constants = config.constants()
        light = get_light(config.lights[0])
        for scene in scenes:
            noise = group_seed(seed, scene.scene_id, light.id)
            image = render(scene, light, CALIBRATION_PARAMS, constants, noise)
            write_pgm(directory / "previews" / f"{scene.scene_id}.pgm", image)
    logger.info("wrote %d scenes to %s", len(scenes), directory)
    return index


def cmd_train(config: BenchConfig) -> list[Path]:
    paths = []
    for seed in config.seeds:
        for m, model in enumerate(train_models(config, seed)):
            paths.append(save_model(config.out / "models" / f"seed{seed}-model{m}.json", model))
    logger.info("wrote %d checkpoint(s)", len(paths))
    return paths


def _k_values(config: BenchConfig) -> tuple[int, ...]:
    return config.csa.k if config.csa.algorithm != "full" else ()


def cmd_run(config: BenchConfig) -> BenchReport:
    tables = collect_tables(config)
    runs = evaluate_tables(
        tables,
        scorer=config.scorer,
        policies=config.policies,
        csa=config.csa.algorithm,
        k_values=_k_values(config),
        ae_aggregate=config.ae_aggregate,
    )
    report = build_report(
        runs,
        config_fingerprint=config_fingerprint(config),
        scorer_id=config.scorer,
        ae_aggregate=config.ae_aggregate,
        csa=config.csa.algorithm,
        k_values=_k_values(config),
        seeds=config.seeds,
    )

    out = config.out
    by_key = {(t.seed, t.model_id): t for seed_tables in tables.values() for t in seed_tables}
    for run in runs:
        table = by_key[(run.seed, run.model_id)]
        stem = f"seed{run.seed}-model{run.model_id}"
        write_jsonl(out / f"results-{stem}.jsonl", _records(run, table, config.scorer))
        write_scores(out / f"scores-{stem}.csv", table.matrix(config.scorer))
    write_report(out / "report.json", report)
    logger.info("wrote report for %d run(s) to %s", len(runs), out)
    return report


@dataclass(frozen=True)
class SweepPoint:
    csa: CsaId
    k: int
    mean_cost_s: Fraction
    accuracy_mean: float
    accuracy_std: float


def sweep_points(
    tables: Mapping[int, Sequence[CaptureTable]],
    *,
    scorer: ScorerId,
    csa_list: Sequence[CsaId],
    k_list: Sequence[int],
) -> list[SweepPoint]:
    points = []
    num_options = len(next(iter(tables.values()))[0].grid)
    for csa in csa_list:
        ks = [num_options] if csa == "full" else list(k_list)
        for k in ks:
            runs = evaluate_tables(
                tables,
                scorer=scorer,
                policies=("lens",),
                csa=csa,
                k_values=[k],
                ae_aggregate="top1",
            )
            summary = summarize(runs, lens_label(csa, k))
            points.append(
                SweepPoint(csa, k, summary.mean_cost_s, summary.accuracy_mean, summary.accuracy_std)
            )
    return points


def format_sweep(points: Sequence[SweepPoint]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for p in points:
        writer.writerow(
            [p.csa, p.k, format_seconds(p.mean_cost_s), repr(p.accuracy_mean), repr(p.accuracy_std)]
        )
    return buffer.getvalue()


def cmd_sweep(
    config: BenchConfig,
    *,
    csa_list: Sequence[CsaId] = CSA_IDS,
    k_list: Sequence[int] | None = None,
    seeds: Sequence[int] | None = None,
) -> Path:
    seeds = tuple(seeds or config.seeds)
    if len(seeds) < SWEEP_MIN_SEEDS:
        logger.warning(
            "sweep over %d seed(s); %d or more are recommended", len(seeds), SWEEP_MIN_SEEDS
        )
    num_options = len(config.build_grid())
    k_list = list(k_list or range(1, num_options + 1))
    bad = [k for k in k_list if not 1 <= k <= num_options]
    if bad:
        raise ConfigError("bench", f"k must be in [1, {num_options}], got {bad}")
    _check_choice("csa", csa_list, CSA_IDS)

    points = sweep_points(
        collect_tables(config, seeds), scorer=config.scorer, csa_list=csa_list, k_list=k_list
    )
    path = config.out / "sweep.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_sweep(points), encoding="utf-8", newline="\n")
    logger.info("wrote %d sweep points to %s", len(points), path)
    return path


def heatmap_grid(
    grid: ParamGrid, scores: Sequence[float] | FloatArray
) -> tuple[list[str], FloatArray]:
    """Arrange option scores as aperture rows by (iso, shutter) columns."""
    values = np.asarray(scores, dtype=np.float64)
    if values.shape != (len(grid),):
        raise ValueError(f"bench: expected {len(grid)} scores, got {values.shape}")
    isos, shutters, apertures = grid.shape
    cube = values.reshape(isos, shutters, apertures)
    columns = [
        f"ISO{iso} {format_shutter(shutter)}s"
        for iso in grid.iso_levels
        for shutter in grid.shutter_levels
    ]
    return columns, cube.transpose(2, 0, 1).reshape(apertures, isos * shutters)


def solution_space(
    config: BenchConfig,
    seed: int,
    scenes: Sequence[Scene],
    model: ClassifierModel,
    light: LightCondition,
    scorer: ScorerId,
) -> FloatArray:
    """Mean quality score per option over ``scenes`` under one light."""
    grid = config.build_grid()
    constants = config.constants()
    rows = [_capture_scene(scene, [light], grid, constants, seed)[0][0] for scene in scenes]
    scores = [score_features(model, features, scorer) for features in rows]
    return np.mean(scores, axis=0)


def cmd_heatmap(
    config: BenchConfig,
    *,
    light_id: str,
    scene_id: str | None = None,
    class_id: int | None = None,
    model_index: int = 0,
) -> Path:
    if (scene_id is None) == (class_id is None):
        raise ConfigError("bench", "heatmap needs exactly one of scene_id or class_id")
    if light_id not in LIGHTS:
        raise ConfigError("bench", f"unknown light {light_id!r}. Available: {list(LIGHTS)}")
    if not 0 <= model_index < config.num_models:
        raise ConfigError("bench", f"model index {model_index} outside [0, {config.num_models})")
    seed = config.seeds[0]
    scenes = generate_dataset(config.num_classes, config.samples_per_class, config.mode, seed)
    if scene_id is not None:
        selected = [s for s in scenes if s.scene_id == scene_id]
        name = scene_id
    else:
        selected = [s for s in scenes if s.class_id == class_id]
        name = f"class{class_id:03d}"
    if not selected:
        raise ConfigError("bench", f"no scene matches {scene_id or f'class {class_id}'}")

    models = train_models(config, seed)
    model = models[model_index]
    space = solution_space(config, seed, selected, model, get_light(light_id), config.scorer)
    columns, cells = heatmap_grid(config.build_grid(), space)

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["aperture", *columns])
    for aperture, row in zip(config.build_grid().aperture_levels, cells, strict=True):
        writer.writerow([f"f{aperture:g}", *(repr(float(v)) for v in row)])
    path = config.out / f"heatmap-{name}-{light_id}-{config.scorer}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buffer.getvalue(), encoding="utf-8", newline="\n")
    logger.info("wrote heatmap %s", path)
    return path


def _accuracy_row(runs: Sequence[RunEvaluation], label: str) -> dict[str, float]:
    summary = summarize(runs, label)
    return {"accuracy_mean": summary.accuracy_mean, "accuracy_std": summary.accuracy_std}


def format_ablation(ablation: Mapping[str, Mapping[str, float]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(("policy", "accuracy_mean", "accuracy_std"))
    for label, row in ablation.items():
        writer.writerow([label, repr(row["accuracy_mean"]), repr(row["accuracy_std"])])
    return buffer.getvalue()


def cmd_ablate(config: BenchConfig) -> BenchReport:
    """Lens over the full grid with every scorer, next to the baselines."""
    tables = collect_tables(config)
    common: dict[str, Any] = {"csa": "full", "k_values": (), "ae_aggregate": config.ae_aggregate}
    baselines = [p for p in config.policies if p != "lens"]
    base_runs = evaluate_tables(tables, scorer=config.scorer, policies=baselines, **common)

    ablation: dict[str, dict[str, float]] = {}
    separation: dict[str, dict[str, Any]] = {}
    all_tables = [t for seed_tables in tables.values() for t in seed_tables]
    correct = np.concatenate([t.correct for t in all_tables])
    for scorer in SCORER_IDS:
        runs = evaluate_tables(tables, scorer=scorer, policies=("lens",), **common)
        ablation[scorer] = _accuracy_row(runs, "lens")
        scores = np.concatenate([t.scores[scorer] for t in all_tables])
        separation[scorer] = score_separation(scores, correct)
    for label in baselines:
        ablation[label] = _accuracy_row(base_runs, label)

    report = build_report(
        base_runs,
        config_fingerprint=config_fingerprint(config),
        scorer_id=config.scorer,
        ae_aggregate=config.ae_aggregate,
        csa="full",
        k_values=(),
        seeds=config.seeds,
    )
    report = replace(report, ablation=ablation, separation=separation)
    write_json(config.out / "ablation.json", report.to_json())
    path = config.out / "ablation.csv"
    path.write_text(format_ablation(ablation), encoding="utf-8", newline="\n")
    logger.info("wrote ablation over %d scorer(s)", len(SCORER_IDS))
    return report
