"""Run configuration: a JSON file plus ``--set key=value`` overrides."""

from __future__ import annotations

import dataclasses
import glob
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from afford.io import config_hash

FORMAT_VERSION = "1"
OUTPUT_ENV = "AFFORD_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    corpus: list[str] = field(default_factory=list)
    nouns: str | None = None
    verbs: str | None = None
    truth: dict[str, dict] = field(default_factory=dict)
    vectors: dict[str, str] = field(default_factory=dict)
    targets: str | None = None
    output_dir: str = "afford_out"


@dataclass
class NmfParams:
    seed: int
    d: int = 70
    beta: float = 0.3
    d_list: list[int] = field(default_factory=lambda: [50, 70, 100, 150])
    beta_list: list[float] = field(default_factory=lambda: [0.05, 0.1, 0.3, 0.5])
    K: int = 10
    q: int = 1
    restarts: int = 5
    max_iter: int = 2000
    tol: float = 1e-6
    init: str = "nndsvd"


@dataclass
class RegressionParams:
    seed: int
    grid_size: int = 50
    lambda_min: float = 1e-7
    lambda_max: float = 1e3
    folds: int = 2
    top_verbs: int = 10


@dataclass
class RankParams:
    objects: list[str] | None = None
    top_n: int = 20


@dataclass
class RunConfig:
    paths: Paths
    nmf: NmfParams
    regression: RegressionParams
    rank: RankParams = field(default_factory=RankParams)
    format_version: str = FORMAT_VERSION

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        d = self.to_dict()
        d["paths"] = {k: v for k, v in d["paths"].items() if k != "output_dir"}
        return config_hash(d)

    @property
    def out(self) -> Path:
        return Path(self.paths.output_dir)

    def corpus_files(self) -> list[str]:
        files: list[str] = []
        for pattern in self.paths.corpus:
            files.extend(sorted(glob.glob(pattern)))
        return files


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = _parse_value(value)
    return raw


def load_config(path: str | os.PathLike | None, overrides: list[str] = (), base_dir: str | None = None) -> RunConfig:
    """Parse, override and validate.  Relative input paths resolve against the config file."""
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        base_dir = base_dir or str(Path(path).resolve().parent)
    raw = apply_overrides(raw, list(overrides))
    if os.environ.get(OUTPUT_ENV):
        raw.setdefault("paths", {})["output_dir"] = os.environ[OUTPUT_ENV]
    for section in ("nmf", "regression"):
        if "seed" not in raw.get(section, {}):
            raise ConfigError(f"{section}.seed is required")
    unknown = set(raw) - {"paths", "nmf", "regression", "rank", "format_version"}
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    cfg = RunConfig(
        paths=_build(Paths, raw.get("paths", {}), "paths"),
        nmf=_build(NmfParams, raw["nmf"], "nmf"),
        regression=_build(RegressionParams, raw["regression"], "regression"),
        rank=_build(RankParams, raw.get("rank", {}), "rank"),
        format_version=str(raw.get("format_version", FORMAT_VERSION)),
    )
    if base_dir:
        _resolve(cfg.paths, Path(base_dir))
    validate(cfg)
    return cfg


def _resolve(p: Paths, base: Path) -> None:
    def fix(x: str | None) -> str | None:
        return None if x is None else str(base / x) if not os.path.isabs(x) else x

    p.corpus = [fix(c) for c in p.corpus]
    p.nouns, p.verbs, p.targets = fix(p.nouns), fix(p.verbs), fix(p.targets)
    p.output_dir = fix(p.output_dir)
    p.truth = {k: {**v, "path": fix(v.get("path"))} for k, v in p.truth.items()}
    p.vectors = {k: fix(v) for k, v in p.vectors.items()}


def validate(cfg: RunConfig) -> None:
    missing = []
    for pattern in cfg.paths.corpus:
        if not glob.glob(pattern):
            missing.append(pattern)
    for x in (cfg.paths.nouns, cfg.paths.verbs, cfg.paths.targets, *cfg.paths.vectors.values()):
        if x is not None and not os.path.exists(x):
            missing.append(x)
    for name, entry in cfg.paths.truth.items():
        if not isinstance(entry, dict) or "path" not in entry:
            raise ConfigError(f"paths.truth.{name}: expected {{'path': ..., 'cutoff': ...}}")
        if not os.path.exists(entry["path"]):
            missing.append(entry["path"])
    if missing:
        raise ConfigError(f"missing input paths: {missing}")
    n = cfg.nmf
    if n.d < 1 or n.beta < 0 or n.K < 2 or not 1 <= n.q < n.K or n.restarts < 1:
        raise ConfigError("invalid nmf parameters")
    if n.init not in ("nndsvd", "random"):
        raise ConfigError(f"nmf.init must be 'nndsvd' or 'random', got {n.init!r}")
    r = cfg.regression
    if r.grid_size < 1 or r.folds < 2 or not 0 < r.lambda_min <= r.lambda_max:
        raise ConfigError("invalid regression parameters")
