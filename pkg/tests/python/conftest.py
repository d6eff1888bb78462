from __future__ import annotations

import pytest

from lensbench.bench import (
    BenchConfig,
    CaptureTable,
    SeedBundle,
    TrainSpec,
    build_tables,
    prepare_seed,
)
from lensbench.param_space import ParamGrid, build_default_grid
from lensbench.scene_sim import ExposureConstants


@pytest.fixture(scope="session")
def grid() -> ParamGrid:
    return build_default_grid()


@pytest.fixture(scope="session")
def constants() -> ExposureConstants:
    return ExposureConstants()


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory) -> BenchConfig:
    return BenchConfig(
        num_classes=4,
        samples_per_class=2,
        train_samples_per_class=2,
        lights=("L1", "L3", "L6"),
        seeds=(0, 1),
        num_models=2,
        train=TrainSpec(steps=150),
        output_dir=str(tmp_path_factory.mktemp("tiny")),
    )


@pytest.fixture(scope="session")
def tiny_bundles(tiny_config) -> dict[int, SeedBundle]:
    return {seed: prepare_seed(tiny_config, seed) for seed in tiny_config.seeds}


@pytest.fixture(scope="session")
def tiny_tables(tiny_config, tiny_bundles) -> dict[int, list[CaptureTable]]:
    return {seed: build_tables(tiny_config, bundle) for seed, bundle in tiny_bundles.items()}
