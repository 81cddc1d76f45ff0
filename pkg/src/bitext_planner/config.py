"""Declarative run configuration shared by the CLI subcommands."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import InputError

DEFAULTS = {
    "method": "ent-ot",
    "temperature": 5.0,
    "epsilon": 1e-9,
    "gamma": 0.01,
    "tolerance": 1e-9,
    "max_iterations": 10_000,
    "tau": 1e-6,
    "lam": 1.0,
    "resamples": 10,
    "rounds_between": 1,
    "seed": 0,
    "min_pairs": 0,
    "filter_mode": "pair",
    "bins": 50,
    "support_tau": 0.0,
    "top_k": 10,
    "synthetic_model": None,
    "group_size": None,
    "adaptation": 0.0,
    "batches": 1,
    "batch_size": 1,
    "flip_prob": None,
    "directed": False,
    "reanchor": False,
    "significance": 0.01,
}


class RunConfig(BaseModel):
    """Every field is optional; a flag given on the command line wins."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    input: Optional[Path] = None
    output: Optional[Path] = None
    stats: Optional[Path] = None
    plan: Optional[Path] = None
    plan_a: Optional[Path] = None
    plan_b: Optional[Path] = None
    schedule: Optional[Path] = None
    marginals: Optional[Path] = None
    loss_file: Optional[Path] = None
    histogram: Optional[Path] = None
    movers: Optional[Path] = None
    output_plan: Optional[Path] = None

    method: Optional[Literal["temperature", "m2m", "ent-ot"]] = None
    temperature: Optional[float] = Field(None, gt=0, alias="T")
    epsilon: Optional[float] = Field(None, gt=0)
    gamma: Optional[float] = Field(None, gt=0)
    tolerance: Optional[float] = Field(None, gt=0, lt=1)
    max_iterations: Optional[int] = Field(None, ge=1)
    tau: Optional[float] = Field(None, ge=0)
    bins: Optional[int] = Field(None, ge=1)

    rho: Optional[float] = Field(None, ge=0)
    lam: Optional[float] = Field(None, ge=0, alias="lambda")
    resamples: Optional[int] = Field(None, ge=1)
    rounds_between: Optional[int] = Field(None, ge=0)
    support_tau: Optional[float] = Field(None, ge=0)
    top_k: Optional[int] = Field(None, ge=1)
    synthetic_model: Optional[Literal["trivial-pair", "noisy-pair", "constant"]] = None
    group_size: Optional[int] = Field(None, ge=1)
    adaptation: Optional[float] = Field(None, ge=0)
    reanchor: Optional[bool] = None

    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    flip_prob: Optional[float] = Field(None, ge=0, le=1)
    batches: Optional[int] = Field(None, ge=1)
    batch_size: Optional[int] = Field(None, ge=1)
    significance: Optional[float] = Field(None, gt=0, lt=1)

    min_pairs: Optional[int] = Field(None, ge=0)
    filter_mode: Optional[Literal["pair", "language"]] = None
    directed: Optional[bool] = None


def validate(values: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise InputError(f"config {loc}: {first['msg']}") from None


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML or JSON RunConfig document (JSON is valid YAML)."""
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InputError(f"cannot parse config {path}: {exc}") from None
    if doc is None:
        return RunConfig()
    if not isinstance(doc, dict):
        raise InputError("config document must be a mapping")
    return validate(doc)
