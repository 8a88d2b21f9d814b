"""Experiment configuration: one JSON document plus ``--set key=value`` overrides.

Precedence is command line over file over defaults. Every estimator's
hyperparameters are checked here, before any data is touched.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .baselines.forest import RegressionForest
from .data import SyntheticSpec
from .errors import UsageError
from .model import LcvaConfig

EstimatorName = Literal["lcva", "cevae", "ols1", "ols2", "forest"]
_LCVA_KEYS = {f.name for f in fields(LcvaConfig)} - {"feature_dim", "spillover_enabled"}
_FOREST_KEYS = {f.name for f in fields(RegressionForest)} - {"trees"}


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    units_csv: Optional[str] = None
    pairs_csv: Optional[str] = None
    knn_k: int = Field(default=1, ge=1)
    match_counterfactuals: bool = False
    synthetic: Optional[dict] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.units_csv and self.synthetic is not None:
            raise ValueError("give either units_csv or synthetic, not both")
        if self.pairs_csv and not self.units_csv:
            raise ValueError("pairs_csv needs units_csv")
        if self.synthetic is not None:
            SyntheticSpec.from_dict(self.synthetic)
        return self


class SplitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_fraction: float = Field(default=0.8, gt=0, lt=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    data: DataConfig = Field(default_factory=DataConfig)
    estimator: EstimatorName = "lcva"
    lcva: dict = Field(default_factory=dict)
    forest: dict = Field(default_factory=dict)
    split: SplitConfig = Field(default_factory=SplitConfig)
    metrics: Optional[list[Literal["eps_ate", "pehe", "policy_risk"]]] = None
    out: str = "runs"
    seed: int = 0

    @model_validator(mode="after")
    def _check_hyper(self):
        unknown = set(self.lcva) - _LCVA_KEYS
        if unknown:
            raise ValueError(f"unknown lcva keys: {sorted(unknown)}")
        LcvaConfig(feature_dim=1, **self.lcva)
        unknown = set(self.forest) - _FOREST_KEYS
        if unknown:
            raise ValueError(f"unknown forest keys: {sorted(unknown)}")
        for key in ("tree_count", "max_depth", "min_leaf_size"):
            if key in self.forest and not (isinstance(self.forest[key], int) and self.forest[key] >= 1):
                raise ValueError(f"forest.{key} must be an integer >= 1")
        return self

    # Seeds default to the run seed unless a section pins its own.

    def lcva_hyper(self) -> dict:
        return {"seed": self.seed, **self.lcva}

    def forest_hyper(self) -> dict:
        return {"seed": self.seed, **self.forest}

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec.from_dict({"seed": self.seed, **(self.data.synthetic or {})})


def parse_override(item: str):
    """``a.b=value`` -> (["a", "b"], value); the value is JSON when it parses."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        path, value = parse_override(item)
        node = doc
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise UsageError(f"--set {item!r}: {part!r} is not a section")
            node = child
        node[path[-1]] = value
    return doc


def load_config(path=None, overrides=None, seed: int | None = None,
                out: str | None = None) -> ExperimentConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: config must be a JSON object")
    doc = apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    if out is not None:
        doc["out"] = out
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise UsageError(f"invalid config at {where}: {first['msg']}") from None
