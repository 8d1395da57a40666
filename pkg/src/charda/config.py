"""YAML configuration and experiment files.

A run configuration has the optional sections ``preprocessing``, ``model``
(with a ``branches`` list) and ``training`` plus an optional top-level
``embeddings`` path. An experiment adds ``name``, ``corpus``, ``manifest``,
``seeds`` and ``context_source``. A file holding several experiments puts
them in a top-level ``experiments`` list. Relative paths resolve against
the file's directory. Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .harness import ExperimentSpec
from .model import BranchConfig, ModelConfig, TrainingConfig
from .textprep import PreprocessingFlags

RUN_KEYS = {"preprocessing", "model", "training", "embeddings"}
EXPERIMENT_KEYS = RUN_KEYS | {"name", "corpus", "manifest", "seeds", "context_source"}


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check(section: dict, allowed: set[str], where: str) -> dict:
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigurationError(f"{where}: expected a mapping")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    return section


def _build(cls, data: dict, where: str):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


def parse_run(data: dict, where: str = "config") -> tuple[ModelConfig, PreprocessingFlags, str | None]:
    flags = _build(
        PreprocessingFlags,
        _check(data.get("preprocessing"), _fields(PreprocessingFlags), f"{where}.preprocessing"),
        f"{where}.preprocessing",
    )
    model = dict(_check(data.get("model"), _fields(ModelConfig) - {"training", "label_count"}, f"{where}.model"))
    branches = model.pop("branches", None)
    if branches is not None:
        if not isinstance(branches, list):
            raise ConfigurationError(f"{where}.model.branches: expected a list")
        model["branches"] = tuple(
            _build(BranchConfig, _check(b, _fields(BranchConfig), f"{where}.model.branches[{i}]"), f"{where}.model.branches[{i}]")
            for i, b in enumerate(branches)
        )
    training = _build(
        TrainingConfig,
        _check(data.get("training"), _fields(TrainingConfig), f"{where}.training"),
        f"{where}.training",
    )
    config = _build(ModelConfig, {**model, "training": training}, f"{where}.model")
    return config, flags, data.get("embeddings")


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None:
        return None
    path = Path(p)
    return str(path if path.is_absolute() else base / path)


def _load_yaml(path: str | Path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML ({exc})".replace("\n", " ")) from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def load_run_config(path: str | Path) -> tuple[ModelConfig, PreprocessingFlags, str | None]:
    data = _check(_load_yaml(path), RUN_KEYS, str(path))
    config, flags, emb = parse_run(data, str(path))
    return config, flags, _resolve(Path(path).parent, emb)


def parse_experiment(data: dict, base: Path, where: str) -> ExperimentSpec:
    data = _check(data, EXPERIMENT_KEYS, where)
    for key in ("name", "corpus", "manifest"):
        if key not in data:
            raise ConfigurationError(f"{where}: missing {key!r}")
    config, flags, emb = parse_run(data, where)
    kwargs = {}
    if "seeds" in data:
        kwargs["seeds"] = tuple(data["seeds"])
    if "context_source" in data:
        kwargs["context_source"] = data["context_source"]
    return ExperimentSpec(
        name=str(data["name"]),
        config=config,
        flags=flags,
        corpus=_resolve(base, data["corpus"]),
        manifest=_resolve(base, data["manifest"]),
        embeddings=_resolve(base, emb),
        **kwargs,
    )


def load_experiments(path: str | Path) -> list[ExperimentSpec]:
    data = _load_yaml(path)
    base = Path(path).parent
    if "experiments" in data:
        _check(data, {"experiments"}, str(path))
        specs = [parse_experiment(d, base, f"{path}:experiments[{i}]") for i, d in enumerate(data["experiments"])]
    else:
        specs = [parse_experiment(data, base, str(path))]
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigurationError(f"{path}: experiment names must be unique")
    return specs
