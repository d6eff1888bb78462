"""Sensor-parameter space: options, canonical order, capture cost and CSA2 grid cells."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from fractions import Fraction
from itertools import product
from typing import Any

DEFAULT_ISO_LEVELS: tuple[int, ...] = (250, 2000, 16000)
DEFAULT_SHUTTER_LEVELS: tuple[Fraction, ...] = (Fraction(1, 4), Fraction(1, 60), Fraction(1, 1000))
DEFAULT_APERTURE_LEVELS: tuple[float, ...] = (5.0, 9.0, 16.0)


def parse_shutter(text: str | Fraction | int) -> Fraction:
    """Parse a rational shutter string such as ``"1/60"`` (decimals are accepted too)."""
    value = Fraction(text)
    if value <= 0:
        raise ValueError(f"param_space: shutter must be positive, got {text!r}")
    return value


def format_shutter(value: Fraction) -> str:
    return str(value)


def format_seconds(value: Fraction | Decimal | int, *, places: int = 6) -> str:
    """Render seconds rounded to ``places`` decimals with trailing zeros stripped."""
    quantum = Decimal(1).scaleb(-places)
    with localcontext() as ctx:
        ctx.prec = 50
        if isinstance(value, Fraction):
            exact = Decimal(value.numerator) / Decimal(value.denominator)
        else:
            exact = Decimal(value)
        rounded = exact.quantize(quantum, rounding=ROUND_HALF_EVEN).normalize()
    return format(rounded, "f")


@dataclass(frozen=True, order=False)
class SensorParams:
    iso: int
    shutter_s: Fraction
    aperture_f: float

    def __post_init__(self) -> None:
        if self.iso <= 0:
            raise ValueError(f"param_space: iso must be positive, got {self.iso}")
        if self.shutter_s <= 0:
            raise ValueError(f"param_space: shutter must be positive, got {self.shutter_s}")
        if self.aperture_f <= 0:
            raise ValueError(f"param_space: aperture must be positive, got {self.aperture_f}")

    @property
    def shutter_text(self) -> str:
        return format_shutter(self.shutter_s)

    @property
    def label(self) -> str:
        return f"ISO{self.iso} {self.shutter_text}s f{self.aperture_f:g}"


@dataclass(frozen=True)
class ParamGrid:
    """Cartesian option space; ``options`` is row-major (iso outer, aperture inner)."""

    iso_levels: tuple[int, ...]
    shutter_levels: tuple[Fraction, ...]
    aperture_levels: tuple[float, ...]
    options: tuple[SensorParams, ...] = field(init=False)
    _index: dict[SensorParams, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        for name in ("iso_levels", "shutter_levels", "aperture_levels"):
            levels = getattr(self, name)
            if not levels:
                raise ValueError(f"param_space: {name} must not be empty")
            if len(set(levels)) != len(levels):
                raise ValueError(f"param_space: {name} contains duplicates: {levels}")
        options = tuple(
            SensorParams(iso, shutter, aperture)
            for iso, shutter, aperture in product(
                self.iso_levels, self.shutter_levels, self.aperture_levels
            )
        )
        object.__setattr__(self, "options", options)
        object.__setattr__(self, "_index", {p: i for i, p in enumerate(options)})

    def __len__(self) -> int:
        return len(self.options)

    def __contains__(self, params: object) -> bool:
        return params in self._index

    def index(self, params: SensorParams) -> int:
        try:
            return self._index[params]
        except KeyError:
            raise ValueError(f"param_space: {params.label} is not a grid option") from None

    def level_index(self, params: SensorParams) -> tuple[int, int, int]:
        return (
            self.iso_levels.index(params.iso),
            self.shutter_levels.index(params.shutter_s),
            self.aperture_levels.index(params.aperture_f),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.iso_levels), len(self.shutter_levels), len(self.aperture_levels)


@dataclass(frozen=True)
class CaptureCostModel:
    per_shot_overhead_s: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        overhead = Fraction(self.per_shot_overhead_s)
        if overhead < 0:
            raise ValueError("param_space: per_shot_overhead_s must be non-negative")
        object.__setattr__(self, "per_shot_overhead_s", overhead)


def build_default_grid() -> ParamGrid:
    return ParamGrid(DEFAULT_ISO_LEVELS, DEFAULT_SHUTTER_LEVELS, DEFAULT_APERTURE_LEVELS)


def capture_cost(params: SensorParams, model: CaptureCostModel | None = None) -> Fraction:
    """Seconds needed for one shot; exact rational."""
    overhead = model.per_shot_overhead_s if model is not None else Fraction(0)
    return params.shutter_s + overhead


def total_cost(params: Iterable[SensorParams], model: CaptureCostModel | None = None) -> Fraction:
    return sum((capture_cost(p, model) for p in params), Fraction(0))


def _axis_bins(num_levels: int, num_bins: int) -> list[list[int]]:
    # Leading levels get their own bin; the remainder shares the last one.
    if num_bins >= num_levels:
        return [[i] for i in range(num_levels)]
    return [[i] for i in range(num_bins - 1)] + [list(range(num_bins - 1, num_levels))]


def partition_grid(grid: ParamGrid, k: int) -> list[list[SensorParams]]:
    """Split the grid into the cells CSA2 samples from.

    The number of bins per axis is the largest ``b`` with ``b**3 <= k`` (capped by the
    axis size), so the default 3x3x3 grid gives 1 cell for k in 1-7, 8 cells for 8-26
    and 27 singletons for k = 27. With two bins an axis splits into {lowest} and the rest.
    """
    n = len(grid)
    if not 1 <= k <= n:
        raise ValueError(f"param_space: k must be in [1, {n}], got {k}")

    num_bins = 1
    while (num_bins + 1) ** 3 <= k:
        num_bins += 1

    axis_bins = [_axis_bins(levels, min(num_bins, levels)) for levels in grid.shape]
    cells: list[list[SensorParams]] = []
    for iso_bin, shutter_bin, aperture_bin in product(*axis_bins):
        cells.append(
            [
                SensorParams(
                    grid.iso_levels[i], grid.shutter_levels[j], grid.aperture_levels[a]
                )
                for i, j, a in product(iso_bin, shutter_bin, aperture_bin)
            ]
        )
    # Cell members in canonical order
    return [sorted(cell, key=grid.index) for cell in cells]


def grid_to_json(grid: ParamGrid) -> dict[str, Any]:
    return {
        "iso_levels": list(grid.iso_levels),
        "shutter_levels": [format_shutter(s) for s in grid.shutter_levels],
        "aperture_levels": list(grid.aperture_levels),
    }


def grid_from_json(obj: dict[str, Any]) -> ParamGrid:
    try:
        return grid_from_levels(
            iso_levels=obj["iso_levels"],
            shutter_levels=obj["shutter_levels"],
            aperture_levels=obj["aperture_levels"],
        )
    except KeyError as exc:
        raise ValueError(f"param_space: grid is missing key {exc.args[0]!r}") from None


def grid_from_levels(
    *,
    iso_levels: Sequence[int],
    shutter_levels: Sequence[str | Fraction],
    aperture_levels: Sequence[float],
) -> ParamGrid:
    return ParamGrid(
        tuple(int(v) for v in iso_levels),
        tuple(parse_shutter(v) for v in shutter_levels),
        tuple(float(v) for v in aperture_levels),
    )
