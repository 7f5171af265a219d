"""Experiment configuration: a JSON document validated fail-closed."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..exceptions import ConfigInvalidError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# -- data-generating processes ------------------------------------------------


class TabularSpec(_Strict):
    kind: Literal["tabular"]
    joint: List[List[float]]


class GaussianSpec(_Strict):
    kind: Literal["gaussian"]
    prior: List[float]
    means: List[List[float]]
    sigma: float = Field(gt=0)


class PrivateSpec(_Strict):
    kind: Literal["private"]
    joint3: List[List[List[float]]]


class PrivateWorstcaseSpec(_Strict):
    kind: Literal["private_worstcase"]
    labels: int = Field(2, ge=2)


DGPSpec = Annotated[
    Union[TabularSpec, GaussianSpec, PrivateSpec, PrivateWorstcaseSpec], Field(discriminator="kind")
]


# -- predictors -----------------------------------------------------------------


class OracleSpec(_Strict):
    kind: Literal["oracle"]


class TemperedSpec(_Strict):
    kind: Literal["tempered"]
    tau: float = Field(gt=0)


class LogisticSpec(_Strict):
    kind: Literal["logistic"]
    n_train: int = Field(500, ge=1)
    steps: int = Field(500, ge=0)
    step_size: float = Field(0.1, gt=0)


PredictorSpec = Annotated[Union[OracleSpec, TemperedSpec, LogisticSpec], Field(discriminator="kind")]


# -- strategies ----------------------------------------------------------------

STRATEGY_KINDS = (
    "oracle_features",
    "oracle_sets",
    "misspecified",
    "associative",
    "uniform",
    "budgeted",
    "maxmin",
    "prior_only",
)


class StrategySpec(_Strict):
    kind: Literal[STRATEGY_KINDS]
    alpha: Optional[float] = Field(None, gt=0, lt=1)
    distance: Optional[List[List[float]]] = None
    radius: Optional[float] = Field(None, ge=0)
    budget: Optional[int] = Field(None, ge=0)

    @model_validator(mode="after")
    def _params(self):
        if self.kind == "associative" and (self.distance is None or self.radius is None):
            raise ValueError("associative strategy needs 'distance' and 'radius'")
        if self.kind == "budgeted" and self.budget is None:
            raise ValueError("budgeted strategy needs 'budget'")
        return self


class SetJointSpec(_Strict):
    mode: Literal["exact", "learned"] = "exact"
    reps: int = Field(50, ge=1)
    samples_per_rep: int = Field(1000, ge=1)
    smoothing: float = Field(1.0, ge=0)


# -- experiment ------------------------------------------------------------------


class ExperimentConfig(_Strict):
    experiment: Literal["coverage", "strategies", "voi", "private-signal", "calibration"]
    dgp: DGPSpec
    predictor: Optional[Union[PredictorSpec, List[PredictorSpec]]] = None
    score_fn: Literal["lac", "aps", "aps_randomized"] = "lac"
    alpha: float = Field(0.1, gt=0, lt=1)
    n_cal: Union[int, List[int]] = 100
    n_test: int = Field(1000, ge=1)
    reps: int = Field(100, ge=1)
    strategies: List[StrategySpec] = []
    loss: Optional[List[List[float]]] = None
    seed: int = Field(0, ge=0, lt=2**64)
    output: Optional[str] = None
    force_nonempty: bool = False
    bins: int = Field(10, ge=1)
    grid: float = Field(0.1, gt=0, le=1)
    set_joint: SetJointSpec = SetJointSpec()

    @field_validator("n_cal")
    @classmethod
    def _n_cal(cls, v):
        values = v if isinstance(v, list) else [v]
        if not values or any(n < 1 for n in values):
            raise ValueError("n_cal values must be at least 1")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        k = label_count(self.dgp)
        if self.loss is not None:
            L = np.asarray(self.loss, dtype=float)
            if L.ndim != 2 or L.shape[1] != k or L.shape[0] < 1:
                raise ValueError(f"loss table must have {k} columns (one per label)")
        for s in self.strategies:
            if s.distance is not None and np.shape(s.distance) != (k, k):
                raise ValueError(f"distance table must be {k}x{k}")
        if self.experiment == "strategies" and not self.strategies:
            raise ValueError("strategies experiment needs at least one strategy")
        if self.experiment == "calibration" and self.predictor is None:
            raise ValueError("calibration experiment needs a predictor")
        if self.experiment in ("voi",) and not isinstance(self.dgp, TabularSpec):
            raise ValueError("voi experiment needs a tabular DGP")
        if self.experiment == "private-signal" and not isinstance(
            self.dgp, (PrivateSpec, PrivateWorstcaseSpec)
        ):
            raise ValueError("private-signal experiment needs a private or private_worstcase DGP")
        if isinstance(self.n_cal, list) and len(self.n_cal) > 1 and self.experiment != "coverage":
            raise ValueError("only the coverage experiment accepts several n_cal values")
        return self

    @property
    def n_cal_values(self) -> List[int]:
        return list(self.n_cal) if isinstance(self.n_cal, list) else [self.n_cal]

    @property
    def predictor_specs(self) -> list:
        if self.predictor is None:
            return [OracleSpec(kind="oracle")]
        return list(self.predictor) if isinstance(self.predictor, list) else [self.predictor]

    def config_hash(self) -> str:
        """SHA-256 of the canonical config, ignoring the output path."""
        payload = self.model_dump(mode="json", exclude={"output"})
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def label_count(spec) -> int:
    if isinstance(spec, TabularSpec):
        return len(spec.joint[0]) if spec.joint else 0
    if isinstance(spec, GaussianSpec):
        return len(spec.prior)
    if isinstance(spec, PrivateSpec):
        return len(spec.joint3[0][0]) if spec.joint3 and spec.joint3[0] else 0
    return spec.labels


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data: dict, **overrides) -> ExperimentConfig:
    """Validate a config mapping; ``overrides`` replace top-level fields."""
    if not isinstance(data, dict):
        raise ConfigInvalidError("config must be a JSON object")
    merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as err:
        raise ConfigInvalidError(_format_errors(err)) from None


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigInvalidError(f"cannot read config: {err}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigInvalidError(f"config is not valid JSON: {err}") from None
    return parse_config(data, **overrides)
