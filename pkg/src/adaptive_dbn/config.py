"""Run configuration: one JSON document describing a complete training run.

Every field has a default, so ``{}`` is a valid config (a small synthetic
deck run). Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .dataset import STRUCTURES, TASKS, Preprocessing
from .errors import ConfigError
from .structure import StructureConfig


@dataclass
class SyntheticSource:
    n_train: int = 1000
    n_test: int = 200
    crack_fraction: float = 0.5
    # the test set uses seed + 1
    seed: int = 1


@dataclass
class DataConfig:
    source: str = "synthetic"  # or "sdnet"
    root: Optional[str] = None
    folder_codes: Optional[dict] = None
    cache: Optional[str] = None  # npz cache directory for decoded SDNET images
    synthetic: SyntheticSource = field(default_factory=SyntheticSource)


@dataclass
class RunConfig:
    task: str = "deck"
    data: DataConfig = field(default_factory=DataConfig)
    structure: StructureConfig = field(default_factory=StructureConfig)
    preprocessing: Preprocessing = field(default_factory=Preprocessing)
    seed: int = 0
    out_dir: str = "runs/default"
    fine_tune: bool = False
    relabels: Optional[str] = None

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError("task", f"must be one of {', '.join(TASKS)}")
        d = self.data
        if d.source not in ("synthetic", "sdnet"):
            raise ConfigError("data.source", "must be 'synthetic' or 'sdnet'")
        if d.source == "sdnet" and not d.root:
            raise ConfigError("data.root", "required when data.source is 'sdnet'")
        if d.folder_codes is not None:
            for key, codes in d.folder_codes.items():
                if key not in STRUCTURES or not (isinstance(codes, (list, tuple)) and len(codes) == 3):
                    raise ConfigError("data.folder_codes",
                                      "map deck/wall/pavement to [dir, cracked_dir, uncracked_dir]")
        s = d.synthetic
        if s.n_train < 2 or s.n_test < 2:
            raise ConfigError("data.synthetic.n_train" if s.n_train < 2 else "data.synthetic.n_test",
                              "must be >= 2")
        if not 0.0 <= s.crack_fraction <= 1.0:
            raise ConfigError("data.synthetic.crack_fraction", "must lie in [0, 1]")
        p = self.preprocessing
        if p.target_side < 8:
            raise ConfigError("preprocessing.target_side", "must be >= 8")
        if d.source == "synthetic" and p.target_side < 16:
            raise ConfigError("preprocessing.target_side", "synthetic images need target_side >= 16")
        if p.grayscale not in ("luminosity", "rgb"):
            raise ConfigError("preprocessing.grayscale", "must be 'luminosity' or 'rgb'")
        if p.grayscale == "rgb" and d.source == "synthetic":
            raise ConfigError("preprocessing.grayscale", "synthetic images are grayscale only")
        if p.normalization != "unit":
            raise ConfigError("preprocessing.normalization", "only 'unit' is supported")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        self.structure.validate()
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["preprocessing"] = self.preprocessing.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        _reject_unknown(doc, cls, "")
        data = dict(doc.get("data") or {})
        _reject_unknown(data, DataConfig, "data.")
        synthetic = data.pop("synthetic", None) or {}
        _reject_unknown(synthetic, SyntheticSource, "data.synthetic.")
        preprocessing = doc.get("preprocessing") or {}
        _reject_unknown(preprocessing, Preprocessing, "preprocessing.")
        structure = doc.get("structure") or {}
        _reject_unknown(structure, StructureConfig, "structure.")
        try:
            built = cls(
                task=doc.get("task", "deck"),
                data=DataConfig(**data, synthetic=SyntheticSource(**synthetic)),
                structure=StructureConfig(**structure),
                preprocessing=Preprocessing(**preprocessing),
                **{k: doc[k] for k in ("seed", "out_dir", "fine_tune", "relabels") if k in doc},
            )
        except ConfigError as exc:
            if "." in exc.field or exc.field not in StructureConfig.__dataclass_fields__:
                raise
            raise ConfigError(f"structure.{exc.field}", str(exc).split(": ", 1)[1]) from None
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from None
        return built.validate()


def _reject_unknown(doc: dict, cls, prefix: str) -> None:
    if not isinstance(doc, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "must be a JSON object")
    known = {f.name for f in fields(cls)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{prefix}{key}", "unknown setting")


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("--config", f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"{path} is not valid JSON ({exc})") from None
    return RunConfig.from_dict(doc)
