"""Run configuration: a single JSON document driving every CLI command.

Validation is strict (unknown keys rejected, defaults filled in) so a typo
fails before any work starts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .cnn import TrainConfig
from .svm import DEFAULT_GRID, KERNEL_KINDS

ENV_SEED = "MEERKIT_SEED"

FEATURE_KINDS = ("catch24", "cnn-crafted", "external-csv")


class ConfigError(Exception):
    pass


@dataclass
class FeatureSource:
    feature_set_id: str
    kind: str
    path: str | None = None
    expected_dimension: int | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ConfigError(f"unknown feature kind {self.kind!r}")
        if self.kind == "external-csv" and not self.path:
            raise ConfigError(f"feature {self.feature_set_id!r}: external-csv needs a path")


@dataclass
class SvmConfig:
    C: list = field(default_factory=lambda: list(DEFAULT_GRID["C"]))
    gamma: list = field(default_factory=lambda: list(DEFAULT_GRID["gamma"]))
    kernels: list = field(default_factory=lambda: list(DEFAULT_GRID["kernels"]))
    degree: int = 3
    coef0: float = 0.0
    inner_folds: int = 3
    grid_score: str = "inner-cv"  # or "train"
    tol: float = 1e-3

    def __post_init__(self):
        for kind in self.kernels:
            if kind not in KERNEL_KINDS:
                raise ConfigError(f"unknown kernel {kind!r} in svm.kernels")
        if self.grid_score not in ("inner-cv", "train"):
            raise ConfigError("svm.grid_score must be 'inner-cv' or 'train'")
        if not self.C or not self.gamma or not self.kernels:
            raise ConfigError("svm grid lists must be non-empty")

    def grid(self) -> dict:
        return {"C": list(self.C), "gamma": list(self.gamma),
                "kernels": list(self.kernels),
                "degree": self.degree, "coef0": self.coef0}


@dataclass
class RunConfig:
    manifest: str
    workdir: str
    target_rate_hz: int = 16_000
    min_ms: float = 100.0
    folds: int = 5
    seed: int = 0
    standardize: bool = True
    svm: SvmConfig = field(default_factory=SvmConfig)
    cnn: TrainConfig = field(default_factory=TrainConfig)
    features: list[FeatureSource] = field(default_factory=list)

    def __post_init__(self):
        if self.target_rate_hz <= 0 or self.min_ms <= 0 or self.folds < 2:
            raise ConfigError("target_rate_hz/min_ms must be positive, folds >= 2")

    def feature_source(self, feature_set_id: str) -> FeatureSource:
        for source in self.features:
            if source.feature_set_id == feature_set_id:
                return source
        raise ConfigError(f"feature set {feature_set_id!r} not declared in config")

    @property
    def workdir_path(self) -> Path:
        return Path(self.workdir)


def _check_keys(section: str, data: dict, allowed) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate the JSON run config; apply CLI/env overrides."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")

    top_allowed = ["manifest", "workdir", "target_rate_hz", "min_ms", "folds",
                   "seed", "standardize", "svm", "cnn", "features"]
    _check_keys("config", data, top_allowed)
    for required in ("manifest", "workdir"):
        if required not in data:
            raise ConfigError(f"config missing required key {required!r}")

    svm_data = data.get("svm", {})
    _check_keys("svm", svm_data, ["C", "gamma", "kernels", "degree", "coef0",
                                  "inner_folds", "grid_score", "tol"])
    cnn_data = data.get("cnn", {})
    _check_keys("cnn", cnn_data, ["learning_rate", "epochs", "batch_size", "seed",
                                  "beta1", "beta2", "eps", "patience", "val_fraction"])
    sources = []
    for i, raw in enumerate(data.get("features", [])):
        _check_keys(f"features[{i}]", raw,
                    ["feature_set_id", "kind", "path", "expected_dimension"])
        sources.append(FeatureSource(**raw))
    ids = [s.feature_set_id for s in sources]
    if len(ids) != len(set(ids)):
        raise ConfigError("duplicate feature_set_id in features")

    try:
        config = RunConfig(
            manifest=data["manifest"],
            workdir=data["workdir"],
            target_rate_hz=int(data.get("target_rate_hz", 16_000)),
            min_ms=float(data.get("min_ms", 100.0)),
            folds=int(data.get("folds", 5)),
            seed=int(data.get("seed", 0)),
            standardize=bool(data.get("standardize", True)),
            svm=SvmConfig(**svm_data),
            cnn=TrainConfig(**cnn_data),
            features=sources,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            config.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer, got {env_seed!r}") from None
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ConfigError(f"unknown override {key!r}")
        setattr(config, key, value)
    return config
