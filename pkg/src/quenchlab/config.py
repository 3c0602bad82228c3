"""Experiment configuration: a TOML file with [pspin], [train], [schedule], [analysis] and [sweep] sections."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PspinSection(_Section):
    N: int = Field(256, ge=3)
    p: Literal[3] = 3
    T_final: float = Field(0.5, ge=0)
    dt: float = Field(0.01, gt=0)
    t_max: float = Field(1000.0, ge=0)
    disorder_seed: int
    init_seed: int
    noise_seed: int
    realizations: int = Field(8, ge=1)


class TrainSection(_Section):
    model: Literal["ToyA", "FullyConnectedB"] = "ToyA"
    hidden_size: Optional[int] = Field(None, ge=1)
    hidden_sizes: Optional[list[int]] = None
    output_dim: Optional[int] = Field(None, ge=1)
    batch_size: int = Field(100, ge=1)
    learning_rate: float = Field(0.1, gt=0)
    max_iterations: int = Field(100000, ge=0)
    init_seed: int
    data_seed: int
    shuffle_seed: int
    noise_subset_size: int = Field(1000, ge=1)
    dataset: Literal["synthetic", "idx"] = "synthetic"
    synthetic_mode: Literal["separable", "random_labels"] = "random_labels"
    n_train: int = Field(10000, ge=2)
    n_test: int = Field(2000, ge=0)
    input_dim: int = Field(32, ge=1)
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    label_mode: Literal["parity", "digits"] = "parity"
    memory_snapshot_limit: int = Field(200, ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.hidden_size is not None and self.hidden_sizes is not None:
            raise ValueError("give either hidden_size or hidden_sizes, not both")
        if self.hidden_sizes is not None and any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden_sizes entries must be >= 1")
        if self.dataset == "idx" and not (self.train_images and self.train_labels):
            raise ValueError("dataset='idx' needs train_images and train_labels")
        return self

    def layer_sizes(self) -> tuple[int, ...]:
        if self.hidden_sizes is not None:
            return tuple(self.hidden_sizes)
        if self.hidden_size is not None:
            return (self.hidden_size,)
        return (1000,) if self.model == "ToyA" else (100, 100)


class ScheduleSection(_Section):
    base: float = Field(1.1, gt=1)
    first_step: Optional[float] = Field(None, gt=0)
    t_max: Optional[float] = Field(None, ge=0)
    tw_every: int = Field(4, ge=1)
    # snapshots at t_w + lag, lags log-spaced with this base, so every t_w has short lags
    short_lags: bool = True
    lag_base: float = Field(1.5, gt=1)


class AnalysisSection(_Section):
    theta: float = Field(0.2, gt=0, lt=1)
    eps_loss: float = Field(0.05, gt=0)
    window: int = Field(5, ge=2)
    slope_t_max: Optional[float] = Field(None, gt=0)


class SweepSection(_Section):
    parameter: str
    values: list[Union[int, float, str]] = Field(min_length=1)


class ExperimentConfig(_Section):
    pspin: Optional[PspinSection] = None
    train: Optional[TrainSection] = None
    schedule: ScheduleSection = ScheduleSection()
    analysis: AnalysisSection = AnalysisSection()
    sweep: Optional[SweepSection] = None

    def canonical(self, sections=None) -> str:
        data = self.model_dump(mode="json")
        if sections is not None:
            data = {k: data[k] for k in sections}
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def run_id(self, command: str, sections) -> str:
        """128-bit hex digest of the command name and the canonical text of the sections it uses."""
        text = command + "\n" + self.canonical(sections)
        return hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()

    def with_train_value(self, key: str, value) -> "ExperimentConfig":
        if self.train is None:
            raise ConfigError("sweep requires a [train] section")
        data = self.train.model_dump()
        if key not in data:
            raise ConfigError(f"[sweep] parameter {key!r} is not a [train] key")
        data[key] = value
        if key == "hidden_size":
            data["hidden_sizes"] = None
        return self.model_copy(update={"train": _validate(TrainSection, data, "train")})


def _validate(model, data, section=None):
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc, section)) from None


def _describe(exc: ValidationError, section=None) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        if section:
            loc = f"{section}.{loc}" if loc else section
        parts.append(f"{loc}: {err['msg']}")
    return "invalid configuration: " + "; ".join(parts)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return _validate(ExperimentConfig, raw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config(text)
