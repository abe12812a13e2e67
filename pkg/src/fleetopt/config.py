"""Run configuration: strict JSON schema, defaults, and conversion to domain objects.

Unknown keys anywhere are errors, so a typo such as ``epsilonn`` cannot
silently fall back to a default.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .bayesopt import AcquisitionSpec
from .core import Fleet, Technique, Thresholds
from .errors import ConfigParseError, ConfigValidationError, InvalidSpec
from .fleet_eval import SyntheticFleetSpec
from .mmo import MmoConfig
from .sensitivity import ExposurePolicy


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True, frozen=True)


class ThresholdsModel(_Strict):
    alpha: float = Field(0.0005, ge=0)
    epsilon: float = Field(0.1, ge=0, le=1)
    tau: float = Field(0.0005, ge=0)


class AcquisitionModel(_Strict):
    mc_samples: int = Field(256, ge=1)
    candidate_pool: int = Field(1024, ge=1)
    initial_design_size: Optional[int] = Field(None, ge=1)


class MmoModel(_Strict):
    iterations_per_technique: int = Field(50, ge=1)
    evaluation_repeats: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    surrogate_starts: int = Field(16, ge=1)
    acquisition: AcquisitionModel = AcquisitionModel()


class RepresentativesModel(_Strict):
    k_range: tuple[int, int] = (2, 30)
    restarts: int = Field(10, ge=1)
    holdout_fraction: float = Field(0.2, gt=0, le=1)

    @field_validator("k_range")
    @classmethod
    def _ordered(cls, v):
        if not 2 <= v[0] < v[1]:
            raise ValueError("k_range must satisfy 2 <= k_min < k_max")
        return v


class PolicyModel(_Strict):
    beta_threshold_fraction: float = Field(0.1, gt=0, le=1)
    variance_threshold_fraction: float = Field(0.1, gt=0, le=1)


class SyntheticBackendModel(_Strict):
    backend: Literal["synthetic"]
    spec: dict[str, Any]


class CommandBackendModel(_Strict):
    backend: Literal["command"]
    argv: list[str] = Field(min_length=1)
    timeout_s: float = Field(300.0, gt=0)
    max_workers: Optional[int] = Field(None, ge=1)


class FleetFileModel(_Strict):
    file: str


class RunConfigModel(_Strict):
    seed: int = 0
    fleet: Optional[Union[list[dict[str, Any]], FleetFileModel]] = None
    techniques: list[dict[str, Any]] = Field(min_length=1)
    thresholds: ThresholdsModel = ThresholdsModel()
    mmo: MmoModel = MmoModel()
    representatives: RepresentativesModel = RepresentativesModel()
    sensitivity: PolicyModel = PolicyModel()
    backend: Optional[Union[SyntheticBackendModel, CommandBackendModel]] = Field(None, discriminator="backend")
    out_dir: str = "out"


class RunConfig:
    """Validated configuration with domain objects built."""

    def __init__(self, model: RunConfigModel, base_dir: Path):
        synthetic = isinstance(model.backend, SyntheticBackendModel)
        if synthetic and model.fleet is not None:
            raise ConfigValidationError("fleet", "the synthetic backend generates its own fleet; drop 'fleet'")
        if not synthetic and model.fleet is None:
            raise ConfigValidationError("fleet", "required unless the backend is synthetic")
        self.model = model
        self.base_dir = base_dir
        self.seed = model.seed
        self.thresholds = Thresholds(**model.thresholds.model_dump())
        self.techniques = self._techniques()
        self.policy = ExposurePolicy(**model.sensitivity.model_dump())
        self.fleet = self._fleet()
        self.synthetic_spec = self._synthetic()
        m = model.mmo
        self.mmo = MmoConfig(
            iterations_per_technique=m.iterations_per_technique,
            thresholds=self.thresholds,
            seed=model.seed,
            acquisition=AcquisitionSpec(**m.acquisition.model_dump()),
            evaluation_repeats=m.evaluation_repeats,
            workers=m.workers,
            surrogate_starts=m.surrogate_starts,
        )
        self.k_range = tuple(model.representatives.k_range)
        self.restarts = model.representatives.restarts
        self.holdout_fraction = model.representatives.holdout_fraction

    def replace(self, **updates) -> "RunConfig":
        """Copy with top-level fields overridden (e.g. ``seed``, ``out_dir``)."""
        return RunConfig(self.model.model_copy(update=updates), self.base_dir)

    @property
    def out_dir(self) -> Path:
        p = Path(self.model.out_dir)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def backend(self):
        return self.model.backend

    def _techniques(self) -> list[Technique]:
        out = []
        for i, obj in enumerate(self.model.techniques):
            try:
                out.append(Technique.from_json(obj))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigValidationError(f"techniques.{i}", str(exc)) from None
        ids = [t.id for t in out]
        if len(set(ids)) != len(ids):
            raise ConfigValidationError("techniques", f"duplicate technique ids {ids}")
        return out

    def _fleet(self) -> Fleet | None:
        src = self.model.fleet
        if src is None:
            return None
        if isinstance(src, FleetFileModel):
            path = Path(src.file)
            path = path if path.is_absolute() else self.base_dir / path
            if not path.exists():
                raise ConfigValidationError("fleet.file", f"file not found: {path}")
            src = json.loads(path.read_text(encoding="utf-8"))
        try:
            return Fleet.from_json(src)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigValidationError("fleet", str(exc)) from None

    def _synthetic(self) -> SyntheticFleetSpec | None:
        if not isinstance(self.model.backend, SyntheticBackendModel):
            return None
        try:
            return SyntheticFleetSpec.from_json(self.model.backend.spec)
        except (InvalidSpec, ValueError, TypeError) as exc:
            raise ConfigValidationError("backend.spec", str(exc)) from None


def _field_name(loc) -> str:
    return ".".join(str(p) for p in loc)


def parse_config(text: str, base_dir: Path | str = ".") -> RunConfig:
    try:
        json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(exc.msg, exc.lineno, exc.colno) from None
    try:
        # JSON-mode validation: arrays are accepted for tuple fields under strict typing
        model = RunConfigModel.model_validate_json(text)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigValidationError(_field_name(err["loc"]) or "config", err["msg"]) from None
    return RunConfig(model, Path(base_dir))


def load_config(path) -> RunConfig:
    """Read, validate and default-fill a JSON run configuration.

    Relative paths inside the file resolve against the file's directory.
    """
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)
