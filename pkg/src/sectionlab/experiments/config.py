"""Experiment configuration: TOML (or JSON) documents validated by pydantic."""

from __future__ import annotations

import json
import tomllib
from pathlib import Path
from typing import Any, Literal, get_args

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..utils.errors import ConfigError

ExperimentName = Literal[
    "sections", "normalize", "slide", "measure", "doubling", "decay", "harnack", "cover", "all"
]
FamilyName = Literal["quadratic", "eccentric", "radial", "cosine"]
SolutionFamily = Literal["harmonic", "radial", "bump-sum", "potential-composed"]

EXPERIMENT_NAMES: tuple[str, ...] = get_args(ExperimentName)

PARAM_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "quadratic": {},
    "eccentric": {"s": (1.0, 16.0)},
    "radial": {"kappa": (0.0, 10.0)},
    "cosine": {"eta": (0.0, 0.999), "omega": (0.1, 10.0)},
}


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridConfig(_Section):
    resolution: int = Field(ge=8)
    dim: int = Field(default=2, ge=1, le=3)
    half_width: float = Field(default=1.5, gt=0)

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v: int) -> int:
        if v % 2:
            raise ValueError("resolution must be even so that the origin is a node")
        return v


class PotentialConfig(_Section):
    family: FamilyName
    params: dict[str, float] = Field(default_factory=dict)
    sampled: bool = False

    @model_validator(mode="after")
    def validate_params(self) -> PotentialConfig:
        ranges = PARAM_RANGES[self.family]
        for name, value in self.params.items():
            if name not in ranges:
                raise ValueError(f"unknown parameter '{name}' for family {self.family}")
            lo, hi = ranges[name]
            if not lo <= value <= hi:
                raise ValueError(f"{name}={value} outside [{lo}, {hi}]")
        return self


class ConstantsConfig(_Section):
    """Structural and estimate constants; unset ones fall back to defaults or calibration."""

    lam: float | None = Field(default=None, gt=0)
    Lam: float | None = Field(default=None, gt=0)
    lam_tilde: float = Field(default=1.0, gt=0)
    Lam_tilde: float = Field(default=1.0, gt=0)
    p: float = Field(default=6.0, gt=0)
    opening: float = Field(default=4.0, gt=0)
    alpha1: float = Field(default=0.25, gt=0, lt=1)
    M: float = Field(default=2.0, gt=1)
    delta: float = Field(default=0.2, gt=0, lt=1)
    k: int = Field(default=1, ge=0)
    eps3: float = Field(default=0.05, gt=0)
    eps4: float | None = Field(default=None, gt=0)
    eps5: float = Field(default=0.05, gt=0)
    h0: float | None = Field(default=None, gt=0)
    tau: float = Field(default=1.0 / 16.0, gt=0, lt=0.125)
    doubling_alpha: float = Field(default=0.1, gt=0, lt=1)
    doubling_eps: float = Field(default=0.2, gt=0)
    barrier_delta: float = Field(default=1.0, gt=0)
    harnack_C: float | None = Field(default=None, gt=0)
    jacobian_C: float | None = Field(default=None, gt=0)
    ink_c2: float | None = Field(default=None, gt=0)

    @model_validator(mode="after")
    def validate_ordering(self) -> ConstantsConfig:
        if self.lam is not None and self.Lam is not None and self.lam > self.Lam:
            raise ValueError("need lam <= Lam")
        if self.lam_tilde > self.Lam_tilde:
            raise ValueError("need lam_tilde <= Lam_tilde")
        return self

    def provenance(self) -> dict[str, str]:
        return {
            name: "config" if name in self.model_fields_set else "default"
            for name in type(self).model_fields
        }


class ExperimentSection(_Section):
    name: ExperimentName
    samples: int = Field(default=8, ge=1)
    calibration: int = Field(default=4, ge=1)
    workers: int = Field(default=1, ge=1)
    solution_family: SolutionFamily = "bump-sum"
    coefficient_mode: Literal["isotropic", "modulated"] = "isotropic"
    drift: list[float] | None = None
    zero_order: float = 0.0
    t0: float = Field(default=0.2, gt=0)
    heights: list[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.4])
    harnack_calibration: int = Field(default=25, ge=1)
    harnack_samples: int = Field(default=50, ge=1)
    eccentricities: list[float] = Field(default_factory=lambda: [1.0, 4.0, 16.0])

    @field_validator("eccentricities")
    @classmethod
    def validate_eccentricities(cls, v: list[float]) -> list[float]:
        lo, hi = PARAM_RANGES["eccentric"]["s"]
        if not v:
            raise ValueError("need at least one eccentricity")
        bad = [s for s in v if not lo <= s <= hi]
        if bad:
            raise ValueError(f"eccentricities {bad} outside [{lo:g}, {hi:g}]")
        return v


class OutputConfig(_Section):
    directory: Path = Path("runs")


class ExperimentConfig(_Section):
    seed: int = 0
    grid: GridConfig
    potential: PotentialConfig
    constants: ConstantsConfig = Field(default_factory=ConstantsConfig)
    experiment: ExperimentSection
    output: OutputConfig = Field(default_factory=OutputConfig)

    @model_validator(mode="after")
    def validate_exponent(self) -> ExperimentConfig:
        if self.constants.p <= self.grid.dim:
            raise ValueError(f"p={self.constants.p} must exceed the dimension {self.grid.dim}")
        if self.experiment.drift is not None and len(self.experiment.drift) != self.grid.dim:
            raise ValueError("drift must have one entry per dimension")
        return self


def read_document(path: Path) -> dict[str, Any]:
    """Raw mapping from a ``.toml`` or ``.json`` file."""
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as f:
                return tomllib.load(f)
        if path.suffix == ".json":
            with open(path) as f:
                return json.load(f)
    except FileNotFoundError:
        raise ConfigError("path", f"{path} does not exist") from None
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError("path", f"{path} does not parse: {e}") from e
    raise ConfigError("path", f"unsupported config format '{path.suffix}'")


def apply_overrides(raw: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Set dotted keys (``grid.resolution``) on a copy of the raw document."""
    doc = json.loads(json.dumps(raw, default=str))
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = doc
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return doc


def validate_document(doc: dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(field, first["msg"]) from e


def load_config(path: Path | str, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read, override and validate an experiment configuration.

    Raises:
        ConfigError: with the dotted field location of the first problem.
    """
    raw = read_document(Path(path))
    return validate_document(apply_overrides(raw, overrides or {}))
