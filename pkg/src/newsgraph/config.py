"""Pipeline configuration."""

from __future__ import annotations

import dataclasses
import datetime as dt
import hashlib
import json
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from .embedding import WalkConfig
from .market import INDEX_NAMES

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXPERIMENTS = ("contemporaneous", "predictive")


@dataclass
class PipelineConfig:
    corpus_path: str = ""
    index_csv_paths: dict[str, str] = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    exclude_weeks: list[str] = field(default_factory=lambda: ["2021-03-14"])
    start_date: str = "2020-06-01"
    k_range: list[int] = field(default_factory=lambda: list(range(2, 15)))
    beta: float = 1.0
    nmf_seeds: int = 5
    walk: dict[str, Any] = field(default_factory=dict)
    stability_threshold: float = 2.0
    edge_threshold: str = "1/6"
    dislocation_mean: float = 0.5
    zscore_window: int = 13
    alpha: float = 0.05
    smote_neighbors: int = 5
    experiments: list[str] = field(default_factory=lambda: list(EXPERIMENTS))
    keywords: list[str] = field(default_factory=list)
    min_appearances: int = 5

    def __post_init__(self):
        unknown = set(self.walk) - {f.name for f in dataclasses.fields(WalkConfig)}
        if unknown:
            raise ValueError(f"unknown walk settings {sorted(unknown)}")
        bad = [e for e in self.experiments if e not in EXPERIMENTS]
        if bad:
            raise ValueError(f"unknown experiments {bad}; choose from {EXPERIMENTS}")
        if self.index_csv_paths:
            missing = [n for n in INDEX_NAMES if n not in self.index_csv_paths]
            if missing:
                raise ValueError(f"index_csv_paths lacks {missing}")
        self.walk_config()
        self.threshold()

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        data = tomllib.loads(text) if path.suffix.lower() == ".toml" else json.loads(text)
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Hash of every setting that affects artifacts (the output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def walk_config(self, seed: int | None = None) -> WalkConfig:
        cfg = WalkConfig(**self.walk)
        return cfg if seed is None else cfg.with_seed(seed)

    def threshold(self) -> Fraction:
        return Fraction(self.edge_threshold)

    def excluded(self) -> list[dt.date]:
        return [dt.date.fromisoformat(w) for w in self.exclude_weeks]

    def start(self) -> dt.date:
        return dt.date.fromisoformat(self.start_date)


def derive_seed(master: int, *parts: object) -> int:
    """Deterministic sub-seed from the master seed and a stage/week path."""
    key = ":".join([str(master), *map(str, parts)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")
