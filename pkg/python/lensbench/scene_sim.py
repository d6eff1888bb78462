"""Synthetic labelled scenes and the exposure pipeline that turns them into 8-bit captures.

Radiometry, per pixel column ``x`` of a ``W``-wide scene::

    irradiance  = left/255 * (1 - x/(W-1)) + right/255 * x/(W-1)
    radiance    = pattern * irradiance                          (reflective)
                = emissive_scale * pattern + eps * irradiance   (luminous)
    H           = radiance * shutter * gain(iso) * (f_ref/f)**2 * exposure_scale(mode)
    pixel       = round(255 * clip(H + N(0, sigma_read*gain + sigma_shot*sqrt(H)), 0, 1))
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import zoom

from lensbench import LightId, Mode
from lensbench._io import read_json, write_json
from lensbench._seeds import rng_for
from lensbench.errors import FormatError
from lensbench.param_space import ParamGrid, SensorParams

logger = logging.getLogger(__name__)

DEFAULT_SIZE = 32
AE_TARGET = 0.18
AE_SHOTS = 5
CALIBRATION_TARGET = 0.5
CALIBRATION_REFLECTANCE = 0.5
CALIBRATION_PARAMS = SensorParams(2000, Fraction(1, 60), 9.0)

_MIN_TEMPLATE_SEPARATION = 0.10  # fraction of pixels ...
_TEMPLATE_PIXEL_DELTA = 0.1  # ... differing by more than this
_MAX_TEMPLATE_ATTEMPTS = 1000

# Objects are dim matte surfaces; a highlight patch reaches full reflectance.
OBJECT_PEAK_REFLECTANCE = 0.3
HIGHLIGHT_REFLECTANCE = 1.0
_HIGHLIGHT_SIDE_FRACTION = 0.3

MODES: tuple[Mode, ...] = ("luminous", "reflective")


@dataclass(frozen=True)
class LightCondition:
    id: LightId
    left: int
    right: int

    def __post_init__(self) -> None:
        if (self.left, self.right) not in _ALLOWED_LEVELS:
            raise ValueError(
                f"scene_sim: light ({self.left}, {self.right}) is not an available condition"
            )


_ALLOWED_LEVELS = {(255, 255), (127, 127), (255, 0), (0, 255), (127, 0), (0, 127)}

LIGHTS: dict[str, LightCondition] = {
    light.id: light
    for light in (
        LightCondition("L1", 255, 255),
        LightCondition("L2", 127, 127),
        LightCondition("L3", 255, 0),
        LightCondition("L4", 0, 255),
        LightCondition("L6", 127, 0),
        LightCondition("L7", 0, 127),
    )
}


def get_light(light_id: str) -> LightCondition:
    try:
        return LIGHTS[light_id]
    except KeyError:
        raise ValueError(
            f"scene_sim: unknown light {light_id!r}. Available: {list(LIGHTS)}"
        ) from None


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    class_id: int
    pattern: np.ndarray
    mode: Mode

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.shape  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class CapturedImage:
    pixels: np.ndarray  # uint8 codes k, pixel value k/255
    params: SensorParams
    light: LightCondition
    scene_id: str
    mode: Mode

    @property
    def values(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0


@dataclass(frozen=True)
class ExposureConstants:
    f_ref: float = 9.0
    iso_ref: int = 2000
    sigma_read: float = 0.01
    sigma_shot: float = 0.02
    emissive_scale: float = 30.0
    ambient_coupling: float = 0.05
    _scales: dict[str, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("f_ref", "emissive_scale", "ambient_coupling"):
            if getattr(self, name) <= 0:
                raise ValueError(f"scene_sim: {name} must be positive")
        if self.sigma_read < 0 or self.sigma_shot < 0:
            raise ValueError("scene_sim: noise sigmas must be non-negative")
        object.__setattr__(self, "_scales", {mode: _solve_scale(self, mode) for mode in MODES})

    def gain(self, iso: int) -> float:
        """ISO gain anchored at ``iso_ref`` (250 -> 0.125, 2000 -> 1.0, 16000 -> 8.0)."""
        return iso / self.iso_ref

    def exposure_scale(self, mode: Mode) -> float:
        return self._scales[mode]

    def product(self, params: SensorParams) -> float:
        """Exposure product shutter * gain * (f_ref/f)^2 of one option."""
        aperture_gain = (self.f_ref / params.aperture_f) ** 2
        return float(params.shutter_s) * self.gain(params.iso) * aperture_gain


def calibrate(constants: ExposureConstants, mode: Mode) -> float:
    """Mean pre-noise exposure of the calibration scene; equals the calibration target."""
    scene = _calibration_scene(mode)
    return float(pre_noise_exposure(scene, LIGHTS["L1"], CALIBRATION_PARAMS, constants).mean())


def _calibration_scene(mode: Mode, size: int = DEFAULT_SIZE) -> Scene:
    pattern = np.full((size, size), CALIBRATION_REFLECTANCE)
    return Scene("calibration", 0, pattern, mode)


def _solve_scale(constants: ExposureConstants, mode: Mode) -> float:
    scene = _calibration_scene(mode)
    unit = _radiance(scene, LIGHTS["L1"], constants).mean() * constants.product(CALIBRATION_PARAMS)
    return CALIBRATION_TARGET / float(unit)


def _irradiance(light: LightCondition, shape: tuple[int, int]) -> np.ndarray:
    _, width = shape
    x = np.arange(width, dtype=np.float64)
    w_right = x / (width - 1) if width > 1 else np.full(width, 0.5)
    w_left = 1.0 - w_right
    row = (light.left / 255.0) * w_left + (light.right / 255.0) * w_right
    return np.broadcast_to(row, shape)


def _radiance(scene: Scene, light: LightCondition, constants: ExposureConstants) -> np.ndarray:
    irradiance = _irradiance(light, scene.shape)
    if scene.mode == "reflective":
        return scene.pattern * irradiance
    return constants.emissive_scale * scene.pattern + constants.ambient_coupling * irradiance


def pre_noise_exposure(
    scene: Scene,
    light: LightCondition,
    params: SensorParams,
    constants: ExposureConstants,
) -> np.ndarray:
    scale = constants.exposure_scale(scene.mode)
    return _radiance(scene, light, constants) * (constants.product(params) * scale)


def render(
    scene: Scene,
    light: LightCondition,
    params: SensorParams,
    constants: ExposureConstants,
    noise_seed: int,
) -> CapturedImage:
    exposure = pre_noise_exposure(scene, light, params, constants)
    gain = constants.gain(params.iso)
    sigma = constants.sigma_read * gain + constants.sigma_shot * np.sqrt(np.maximum(exposure, 0.0))
    rng = np.random.default_rng(noise_seed)
    noisy = exposure + sigma * rng.standard_normal(exposure.shape)
    pixels = np.rint(np.clip(noisy, 0.0, 1.0) * 255.0).astype(np.uint8)
    return CapturedImage(pixels, params, light, scene.scene_id, scene.mode)


@dataclass(frozen=True)
class SimulatedCamera:
    """Callable camera bound to one set of exposure constants."""

    constants: ExposureConstants = field(default_factory=ExposureConstants)

    def __call__(
        self, scene: Scene, light: LightCondition, params: SensorParams, noise_seed: int
    ) -> CapturedImage:
        return render(scene, light, params, self.constants, noise_seed)


def auto_expose(
    scene: Scene,
    light: LightCondition,
    grid: ParamGrid,
    constants: ExposureConstants,
    *,
    shots: int = AE_SHOTS,
) -> list[SensorParams]:
    """Rank grid options by log-distance to the mid-gray exposure product.

    Ties go to the lower ISO, then canonical order.
    """
    if len(grid) == 0:
        raise ValueError("scene_sim: grid must not be empty")
    mean_radiance = float(_radiance(scene, light, constants).mean())
    scale = constants.exposure_scale(scene.mode)

    def distance(params: SensorParams) -> float:
        log_product = math.log(constants.product(params))
        if mean_radiance <= 0.0:
            return -log_product  # nothing to meter, prefer the brightest options
        return abs(log_product - math.log(AE_TARGET / (mean_radiance * scale)))

    ranked = sorted(
        grid.options,
        key=lambda p: (round(distance(p), 12), p.iso, grid.index(p)),
    )
    return ranked[: min(shots, len(ranked))]


def _low_frequency(rng: np.random.Generator, cells: int, size: int) -> np.ndarray:
    return zoom(rng.uniform(size=(cells, cells)), size / cells, order=1)


def _make_template(rng: np.random.Generator, size: int) -> np.ndarray:
    field_ = 0.6 * _low_frequency(rng, 4, size) + 0.4 * _low_frequency(rng, 8, size)
    lo, hi = field_.min(), field_.max()
    normalized = (field_ - lo) / (hi - lo) if hi > lo else np.zeros_like(field_)
    # Reflectance skewed towards dark values
    return normalized**1.5


def _separated(candidate: np.ndarray, templates: Sequence[np.ndarray]) -> bool:
    return all(
        np.mean(np.abs(candidate - other) > _TEMPLATE_PIXEL_DELTA) >= _MIN_TEMPLATE_SEPARATION
        for other in templates
    )


def class_templates(
    num_classes: int, master_seed: int, size: int = DEFAULT_SIZE
) -> list[np.ndarray]:
    if size % 8 != 0:
        raise ValueError(f"scene_sim: pattern size must be a multiple of 8, got {size}")
    rng = rng_for(master_seed, "templates", size)
    templates: list[np.ndarray] = []
    resampled = 0
    for class_id in range(num_classes):
        for _ in range(_MAX_TEMPLATE_ATTEMPTS):
            candidate = _make_template(rng, size)
            if _separated(candidate, templates):
                templates.append(candidate)
                break
            resampled += 1
        else:
            raise RuntimeError(f"scene_sim: could not separate template for class {class_id}")
    logger.debug("templates ready for %d classes (%d resampled)", num_classes, resampled)
    return templates


def _jitter(template: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    size = template.shape[0]
    dy, dx = rng.integers(-1, 2, size=2)
    shifted = np.roll(template, (int(dy), int(dx)), axis=(0, 1))
    albedo = rng.uniform(0.8, 1.0)
    texture = 0.05 * zoom(rng.standard_normal((8, 8)), size / 8, order=1)
    surface = np.clip(albedo * shifted + texture, 0.0, 1.0)
    return OBJECT_PEAK_REFLECTANCE * surface


def _add_highlight(pattern: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Overlay a square specular highlight at a random position."""
    size = pattern.shape[0]
    side = max(1, round(size * _HIGHLIGHT_SIDE_FRACTION))
    top, left = rng.integers(0, size - side + 1, size=2)
    lit = pattern.copy()
    lit[top : top + side, left : left + side] = HIGHLIGHT_REFLECTANCE
    return lit


def generate_dataset(
    num_classes: int,
    samples_per_class: int,
    mode: Mode,
    master_seed: int,
    *,
    split: str = "test",
    size: int = DEFAULT_SIZE,
    highlights: bool = True,
) -> list[Scene]:
    """Scenes ``{split}-{class:03d}-{sample:02d}``; templates depend only on the master seed.

    Object surfaces peak at ``OBJECT_PEAK_REFLECTANCE``. With ``highlights`` every scene
    also carries a full-reflectance patch: mean metering then exposes for the patch and
    leaves the object dark, while a brighter exposure clips the patch into the object's
    own highlights. Training scenes are generated without it.
    """
    if num_classes < 2:
        raise ValueError(f"scene_sim: num_classes must be >= 2, got {num_classes}")
    if samples_per_class < 1:
        raise ValueError(f"scene_sim: samples_per_class must be >= 1, got {samples_per_class}")
    if mode not in MODES:
        raise ValueError(f"scene_sim: unknown mode {mode!r}")

    templates = class_templates(num_classes, master_seed, size)
    scenes = []
    for class_id, template in enumerate(templates):
        for sample in range(samples_per_class):
            rng = rng_for(master_seed, "sample", split, class_id, sample)
            scene_id = f"{split}-{class_id:03d}-{sample:02d}"
            pattern = _jitter(template, rng)
            if highlights:
                pattern = _add_highlight(
                    pattern, rng_for(master_seed, "highlight", split, class_id, sample)
                )
            scenes.append(Scene(scene_id, class_id, pattern, mode))
    logger.info(
        "generated %d %s scenes (%s split, highlights=%s)", len(scenes), mode, split, highlights
    )
    return scenes


def with_mode(scene: Scene, mode: Mode) -> Scene:
    return replace(scene, mode=mode)


SCENE_INDEX = "index.json"
_SCENE_FORMAT = "lensbench-scenes"


def write_scenes(directory: Path, scenes: Sequence[Scene]) -> Path:
    """Write ``index.json`` plus one raw float32 little-endian row-major file per pattern."""
    patterns_dir = directory / "patterns"
    patterns_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for scene in scenes:
        file_name = f"patterns/{scene.scene_id}.f32"
        (directory / file_name).write_bytes(scene.pattern.astype("<f4").tobytes(order="C"))
        height, width = scene.shape
        entries.append(
            {
                "scene_id": scene.scene_id,
                "class_id": scene.class_id,
                "mode": scene.mode,
                "height": height,
                "width": width,
                "file": file_name,
            }
        )
    index = {
        "format": _SCENE_FORMAT,
        "version": 1,
        "layout": "float32 little-endian row-major",
        "scenes": entries,
    }
    return write_json(directory / SCENE_INDEX, index)


def read_scenes(directory: Path) -> list[Scene]:
    index_path = directory / SCENE_INDEX
    if not index_path.is_file():
        raise FormatError("scene_sim", f"missing scene index {index_path}")
    index = read_json(index_path)
    if index.get("format") != _SCENE_FORMAT:
        raise FormatError("scene_sim", f"{index_path} is not a scene index")
    scenes = []
    for entry in index["scenes"]:
        raw = np.frombuffer((directory / entry["file"]).read_bytes(), dtype="<f4")
        pattern = raw.reshape(entry["height"], entry["width"]).astype(np.float64)
        scenes.append(Scene(entry["scene_id"], int(entry["class_id"]), pattern, entry["mode"]))
    return scenes


def write_pgm(path: Path, image: CapturedImage) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image.pixels).save(path, format="PPM")
    return path
