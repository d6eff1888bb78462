from __future__ import annotations

import csv
import json
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from lensbench._io import canonical_json, read_jsonl
from lensbench.bench import (
    SWEEP_HEADER,
    BenchConfig,
    _merge_overrides,
    cmd_ablate,
    cmd_gen,
    cmd_heatmap,
    cmd_run,
    cmd_sweep,
    cmd_train,
    collect_tables,
    config_fingerprint,
    config_from_dict,
    evaluate_tables,
    heatmap_grid,
    load_config,
    solution_space,
    sweep_points,
    train_models,
)
from lensbench.errors import ConfigError
from lensbench.param_space import format_seconds
from lensbench.perception import load_model, score_separation
from lensbench.replay import COST_PLACES, load_scores, replay_evaluate
from lensbench.scene_sim import LIGHTS, generate_dataset, read_scenes, with_mode


def test_default_config():
    config = BenchConfig()
    assert len(config.build_grid()) == 27
    assert config.seeds == (0, 1, 2, 3, 4)
    assert config.lights == ("L1", "L2", "L3", "L4", "L6", "L7")
    assert config.policies == ("oracle_s", "oracle_f", "ae", "random", "lens")
    assert config_fingerprint(config) == config_fingerprint(BenchConfig())


@pytest.mark.parametrize(
    ("raw", "message"),
    [
        # Unknown keys
        ({"bogus": 1}, r"unknown key\(s\) in config: bogus"),
        ({"grid": {"iso": [100]}}, r"unknown key\(s\) in \[grid\]: iso"),
        ({"grid": 3}, r"\[grid\] must be a table"),
        # Bad values
        ({"seeds": ["a"]}, "invalid value for seeds"),
        ({"num_classes": 1.5}, "invalid value for num_classes"),
        ({"grid": {"shutter_levels": ["fast"]}}, "invalid value for shutter_levels"),
        ({"train": {"cap_step": "yes"}}, "invalid value for cap_step"),
        # Semantic checks
        ({"num_classes": 1}, "num_classes is too small"),
        ({"jobs": 0}, "jobs must be non-zero"),
        ({"lights": ["L5"]}, "invalid lights"),
        ({"mode": "ambient"}, "invalid mode"),
        ({"scorer": "entropy"}, "invalid scorer"),
        ({"seeds": []}, "seeds must not be empty"),
        ({"seeds": [1, 1]}, "seeds contains duplicates"),
        ({"seeds": [-1]}, "unsigned 64-bit"),
        ({"csa": {"algorithm": "csa1"}}, "needs csa.k"),
        ({"csa": {"algorithm": "csa1", "k": [28]}}, r"csa.k must be in \[1, 27\]"),
        ({"lights": ["L1"], "num_classes": 2, "train_samples_per_class": 1}, "smaller than knn"),
        (
            {"grid": {"iso_levels": [100], "shutter_levels": ["1/60"], "aperture_levels": [2.0]}},
            "at least 5 options",
        ),
    ],
)
def test_config_errors(raw, message):
    with pytest.raises(ConfigError, match=message) as info:
        config_from_dict(raw)
    assert info.value.exit_code == 2


def test_training_uses_fixed_rate_unless_capped():
    hyper = BenchConfig().hyper()
    assert hyper.learning_rate == 0.1
    assert hyper.cap_step is False
    assert config_from_dict({"train": {"cap_step": True}}).hyper().cap_step is True


def test_load_config_file_and_overrides(tmp_path):
    path = tmp_path / "bench.toml"
    path.write_text(
        'mode = "luminous"\nseeds = [3]\n\n[csa]\nalgorithm = "csa3"\nk = [18]\n\n'
        '[grid]\nshutter_levels = ["1/4", "1/60", "1/1000"]\n',
        encoding="utf-8",
    )
    config = load_config(path, [("mode", None), ("csa.k", [6]), ("jobs", 2)])
    assert config.mode == "luminous"
    assert config.seeds == (3,)
    assert config.csa.algorithm == "csa3"
    assert config.csa.k == (6,)
    assert config.jobs == 2


def test_load_config_without_file():
    config = load_config(None, [("seeds", [9]), ("scorer", "knn")])
    assert config.seeds == (9,)
    assert config.scorer == "knn"


def test_merge_overrides_skips_unset():
    raw = {"mode": "luminous", "csa": {"algorithm": "csa1"}}
    result = _merge_overrides(
        raw,
        [
            ("mode", None),  # skipped
            ("csa.k", [6]),
            ("train.steps", 10),  # creates the table
            ("jobs", None),  # skipped
        ],
    )
    assert result == {
        "mode": "luminous",
        "csa": {"algorithm": "csa1", "k": [6]},
        "train": {"steps": 10},
    }


@pytest.mark.parametrize(
    ("content", "message"),
    [
        ("mode = ", "bench.toml"),
        ("[grid\n", "bench.toml"),
    ],
)
def test_load_config_bad_toml(tmp_path, content, message):
    path = tmp_path / "bench.toml"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(ConfigError, match=message):
        load_config(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "absent.toml")


def test_fingerprint_ignores_output_and_jobs():
    base = BenchConfig()
    assert config_fingerprint(replace(base, output_dir="/elsewhere", jobs=4)) == (
        config_fingerprint(base)
    )


def test_fingerprint_normalizes_values():
    decimal = config_from_dict({"grid": {"shutter_levels": ["0.25", "1/60", "0.001"]}})
    assert config_fingerprint(decimal) == config_fingerprint(BenchConfig())
    overhead = config_from_dict({"per_shot_overhead_s": 0.5})
    assert config_fingerprint(overhead) == config_fingerprint(
        config_from_dict({"per_shot_overhead_s": "1/2"})
    )


@pytest.mark.parametrize(
    "raw",
    [
        {"seeds": [0, 1, 2, 3, 5]},
        {"mode": "luminous"},
        {"scorer": "vim"},
        {"per_shot_overhead_s": "0.01"},
        {"train": {"steps": 499}},
        {"exposure": {"sigma_read": 0.02}},
        {"grid": {"aperture_levels": [5.0, 9.0, 11.0]}},
    ],
)
def test_fingerprint_tracks_meaningful_fields(raw):
    assert config_fingerprint(config_from_dict(raw)) != config_fingerprint(BenchConfig())


def test_overhead_enters_costs():
    config = config_from_dict({"per_shot_overhead_s": "1/10"})
    assert config.cost_model().per_shot_overhead_s == Fraction(1, 10)


def test_cmd_gen(tiny_config, tmp_path):
    config = replace(tiny_config, output_dir=str(tmp_path))
    index = cmd_gen(config, previews=True)
    scenes = read_scenes(index.parent)
    assert len(scenes) == 8
    assert len(list((tmp_path / "scenes" / "previews").glob("*.pgm"))) == 8


def test_cmd_train_matches_bundled_models(tiny_config, tiny_bundles, tmp_path):
    config = replace(tiny_config, output_dir=str(tmp_path))
    paths = cmd_train(config)
    assert [p.name for p in paths] == [
        "seed0-model0.json",
        "seed0-model1.json",
        "seed1-model0.json",
        "seed1-model1.json",
    ]
    restored = load_model(paths[3])
    np.testing.assert_array_equal(restored.weights, tiny_bundles[1].models[1].weights)


@pytest.fixture(scope="module")
def tiny_run(tiny_config, tmp_path_factory):
    config = replace(tiny_config, output_dir=str(tmp_path_factory.mktemp("run")))
    return config, cmd_run(config)


def test_cmd_run_outputs(tiny_run):
    config, report = tiny_run
    assert list(report.policies) == ["oracle_s", "oracle_f", "ae", "random", "lens"]
    assert len(report.runs) == 4
    out = config.out
    assert (out / "report.json").is_file()
    for seed in (0, 1):
        for model in (0, 1):
            assert (out / f"results-seed{seed}-model{model}.jsonl").is_file()
            assert (out / f"scores-seed{seed}-model{model}.csv").is_file()
    doc = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert doc["config_fingerprint"] == config_fingerprint(config)
    assert format_seconds(report.policies["lens"].mean_cost_s) == "2.409"
    assert report.policies["lens"].mean_cost_s == Fraction(2409, 1000)


def test_cmd_run_dominance(tiny_run):
    _, report = tiny_run
    for run in report.runs:
        bound = run.outcomes["oracle_s"].hits
        for outcome in run.outcomes.values():
            assert np.all(outcome.hits <= bound)


def test_cmd_run_is_reproducible(tiny_run, tmp_path):
    config, _ = tiny_run
    again = replace(config, output_dir=str(tmp_path), jobs=2)
    cmd_run(again)
    for name in ("report.json", "results-seed1-model0.jsonl", "scores-seed0-model1.csv"):
        assert (tmp_path / name).read_bytes() == (config.out / name).read_bytes()


def test_jsonl_records(tiny_run, tiny_tables):
    config, _ = tiny_run
    path = config.out / "results-seed0-model1.jsonl"
    lines = path.read_text(encoding="utf-8").splitlines()
    records = list(read_jsonl(path))
    assert [canonical_json(r) for r in records] == lines
    # 4 classes x 2 samples x 3 lights, 5 policies each
    assert len(records) == 24 * 5
    table = tiny_tables[0][1]
    groups = {group: g for g, group in enumerate(table.groups)}
    for record in records:
        g = groups[(record["scene_id"], record["light_id"])]
        if record["policy_id"] == "random":
            assert record["param_id"] is None
            assert record["hit"] == pytest.approx(table.correct[g].mean(), abs=1e-12)
        elif record["policy_id"] == "lens":
            assert record["param_id"] == int(np.argmax(table.scores["confidence"][g]))
            assert record["capture_cost_s"] == "2.409"


def test_random_is_mean_option_accuracy(tiny_run, tiny_tables):
    _, report = tiny_run
    per_run = [t.correct.mean() for seed in (0, 1) for t in tiny_tables[seed]]
    assert report.accuracy("random") == pytest.approx(float(np.mean(per_run)), abs=1e-12)


def test_exported_scores_replay_to_the_same_report(tiny_run):
    config, report = tiny_run
    for seed in config.seeds:
        matrices = [
            load_scores(config.out / f"scores-seed{seed}-model{m}.csv", model_id=str(m))
            for m in range(config.num_models)
        ]
        replayed = replay_evaluate(matrices, seeds=(seed,))
        live = [run for run in report.runs if run.seed == seed]
        for run, again in zip(live, replayed.runs, strict=True):
            assert run.oracle_f_param == again.oracle_f_param
            for label, outcome in run.outcomes.items():
                np.testing.assert_array_equal(outcome.hits, again.outcomes[label].hits)
                # Replayed costs carry the 12-decimal rounding of each option
                pairs = zip(outcome.costs, again.outcomes[label].costs, strict=True)
                for exact, rounded in pairs:
                    assert abs(exact - rounded) <= Fraction(27, 2 * 10**COST_PLACES)


def test_exhaustive_csa_matches_full_lens(tiny_config, tiny_tables):
    for csa in ("csa1", "csa2", "csa3"):
        runs = evaluate_tables(
            tiny_tables,
            scorer="confidence",
            policies=("lens",),
            csa=csa,
            k_values=(27,),
            ae_aggregate="top1",
        )
        for run in runs:
            full = run.outcomes["lens"]
            exhaustive = run.outcomes[f"lens_{csa}_k27"]
            np.testing.assert_array_equal(full.chosen, exhaustive.chosen)
            assert full.costs == exhaustive.costs


def test_sweep_points(tiny_tables):
    points = sweep_points(
        tiny_tables, scorer="confidence", csa_list=("full", "csa1", "csa3"), k_list=range(1, 28)
    )
    by_key = {(p.csa, p.k): p for p in points}
    assert ("full", 27) in by_key
    assert ("full", 1) not in by_key
    assert format_seconds(by_key[("csa3", 18)].mean_cost_s) == "0.159"
    assert by_key[("csa3", 18)].mean_cost_s == Fraction(159, 1000)
    assert by_key[("csa1", 27)].accuracy_mean == by_key[("full", 27)].accuracy_mean
    csa3_costs = [by_key[("csa3", k)].mean_cost_s for k in range(1, 28)]
    assert csa3_costs == sorted(csa3_costs)


def test_cmd_sweep_writes_csv(tiny_config, tmp_path):
    config = replace(tiny_config, output_dir=str(tmp_path))
    path = cmd_sweep(config, csa_list=("full", "csa2"), k_list=[1, 27], seeds=[0])
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SWEEP_HEADER
    assert [(r[0], r[1]) for r in rows[1:]] == [("full", "27"), ("csa2", "1"), ("csa2", "27")]
    assert rows[1][2] == "2.409"


@pytest.mark.parametrize(
    ("kwargs", "message"),
    [
        ({"k_list": [0]}, "k must be in"),
        ({"csa_list": ["csa7"]}, "invalid csa"),
    ],
)
def test_cmd_sweep_rejects(tiny_config, tmp_path, kwargs, message):
    config = replace(tiny_config, output_dir=str(tmp_path))
    with pytest.raises(ConfigError, match=message):
        cmd_sweep(config, **kwargs)


def test_heatmap_layout(grid):
    columns, cells = heatmap_grid(grid, np.arange(27.0))
    assert cells.shape == (3, 9)
    assert columns[0] == "ISO250 1/4s"
    assert columns[-1] == "ISO16000 1/1000s"
    # Row = aperture, column = (iso, shutter)
    assert cells[0].tolist() == [0.0, 3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0, 24.0]
    assert cells[2, 0] == 2.0
    with pytest.raises(ValueError, match="expected 27 scores"):
        heatmap_grid(grid, np.zeros(26))


def test_cmd_heatmap_scene(tiny_config, tmp_path):
    config = replace(tiny_config, output_dir=str(tmp_path))
    path = cmd_heatmap(config, light_id="L3", scene_id="test-001-00")
    assert path.name == "heatmap-test-001-00-L3-confidence.csv"
    with path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "aperture"
    assert [r[0] for r in rows[1:]] == ["f5", "f9", "f16"]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert values.shape == (3, 9)
    assert np.isfinite(values).all()


def test_cmd_heatmap_class(tiny_config, tiny_bundles, tmp_path):
    config = replace(tiny_config, output_dir=str(tmp_path))
    path = cmd_heatmap(config, light_id="L1", class_id=2, model_index=1)
    assert path.name == "heatmap-class002-L1-confidence.csv"
    seed = config.seeds[0]
    scenes = [s for s in tiny_bundles[seed].scenes if s.class_id == 2]
    model = tiny_bundles[seed].models[1]
    space = solution_space(config, seed, scenes, model, LIGHTS["L1"], "confidence")
    assert space.shape == (27,)


@pytest.mark.parametrize(
    ("kwargs", "message"),
    [
        ({"light_id": "L1"}, "exactly one of"),
        ({"light_id": "L1", "scene_id": "x", "class_id": 0}, "exactly one of"),
        ({"light_id": "L5", "scene_id": "test-000-00"}, "unknown light"),
        ({"light_id": "L1", "scene_id": "nowhere"}, "no scene matches"),
        ({"light_id": "L1", "class_id": 0, "model_index": 2}, "model index"),
    ],
)
def test_cmd_heatmap_rejects(tiny_config, tmp_path, kwargs, message):
    config = replace(tiny_config, output_dir=str(tmp_path))
    with pytest.raises(ConfigError, match=message):
        cmd_heatmap(config, **kwargs)


def test_cmd_ablate(tiny_config, tmp_path):
    config = replace(tiny_config, output_dir=str(tmp_path))
    report = cmd_ablate(config)
    assert report.ablation is not None
    assert report.separation is not None
    assert list(report.ablation) == [
        "confidence",
        "knn",
        "react",
        "ash",
        "vim",
        "oracle_s",
        "oracle_f",
        "ae",
        "random",
    ]
    assert list(report.separation) == ["confidence", "knn", "react", "ash", "vim"]
    with (tmp_path / "ablation.csv").open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["policy", "accuracy_mean", "accuracy_std"]
    assert len(rows) == 10
    doc = json.loads((tmp_path / "ablation.json").read_text(encoding="utf-8"))
    assert set(doc["ablation"]) == set(report.ablation)

    again = cmd_ablate(replace(config, output_dir=str(tmp_path / "again")))
    assert again.ablation == report.ablation


@pytest.fixture(scope="module")
def default_tables():
    return collect_tables(BenchConfig())


@pytest.mark.slow
def test_default_benchmark_ordering(default_tables):
    config = BenchConfig()
    runs = evaluate_tables(
        default_tables,
        scorer="confidence",
        policies=config.policies,
        csa="full",
        k_values=(),
        ae_aggregate="top1",
    )

    def accuracy(label: str) -> float:
        return float(np.mean([run.outcomes[label].accuracy for run in runs]))

    lens = accuracy("lens")
    assert accuracy("oracle_s") > lens
    assert lens >= accuracy("ae") + 0.10
    assert lens >= accuracy("random") + 0.10


@pytest.mark.slow
def test_default_benchmark_confidence_separation(default_tables):
    tables = [t for seed_tables in default_tables.values() for t in seed_tables]
    summary = score_separation(
        np.concatenate([t.scores["confidence"] for t in tables]),
        np.concatenate([t.correct for t in tables]),
    )
    raw_correct = np.concatenate([t.scores["confidence"][t.correct] for t in tables])
    raw_incorrect = np.concatenate([t.scores["confidence"][~t.correct] for t in tables])
    assert summary["count_correct"] > 0
    assert raw_correct.mean() - raw_incorrect.mean() >= 0.1


@pytest.mark.slow
def test_default_benchmark_confidence_leads_ablation(default_tables):
    accuracy = {}
    for scorer in ("confidence", "knn", "react", "ash", "vim"):
        runs = evaluate_tables(
            default_tables,
            scorer=scorer,
            policies=("lens",),
            csa="full",
            k_values=(),
            ae_aggregate="top1",
        )
        accuracy[scorer] = float(np.mean([run.outcomes["lens"].accuracy for run in runs]))
    for scorer in ("knn", "react", "ash", "vim"):
        assert accuracy["confidence"] >= accuracy[scorer] - 0.02


@pytest.mark.slow
def test_mode_changes_best_parameters():
    base = BenchConfig(seeds=(0,))
    models = train_models(base, 0)
    scenes = generate_dataset(base.num_classes, 1, "reflective", 0)
    light = LIGHTS["L4"]
    changed = 0
    for scene in scenes:
        spaces = [
            solution_space(base, 0, [with_mode(scene, mode)], models[0], light, "confidence")
            for mode in ("reflective", "luminous")
        ]
        changed += int(np.argmax(spaces[0]) != np.argmax(spaces[1]))
    assert changed / len(scenes) >= 0.05
