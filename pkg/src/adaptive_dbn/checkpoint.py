"""Self-contained JSON checkpoints.

Floats are written with ``repr``-exact decimal text (the json module's
default), so a save/load cycle reproduces every parameter bit for bit.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .dataset import Preprocessing
from .dbn import DbnModel
from .errors import CheckpointError
from .fileio import atomic_write
from .rbm import RbmParameters
from .structure import StructuralEvent

FORMAT = "adaptive-dbn-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model: DbnModel
    descriptor: Preprocessing
    config: dict = field(default_factory=dict)
    events: list[StructuralEvent] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        m = self.model
        return {
            "format": FORMAT,
            "version": VERSION,
            "descriptor": self.descriptor.to_dict(),
            "config": self.config,
            "model": {
                "label_names": list(m.label_names),
                "layers": [{"visible_bias": p.visible_bias.tolist(), "hidden_bias": p.hidden_bias.tolist(),
                            "weights": p.weights.tolist()} for p in m.layers],
                "head_weights": m.head_weights.tolist(),
                "head_bias": m.head_bias.tolist(),
                "overrides": dict(sorted(m.overrides.items())),
            },
            "events": [asdict(e) for e in self.events],
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Checkpoint":
        if not isinstance(doc, dict) or doc.get("format") != FORMAT:
            raise CheckpointError("not an adaptive-dbn checkpoint")
        if doc.get("version") != VERSION:
            raise CheckpointError(f"checkpoint version {doc.get('version')!r} is not supported "
                                  f"(expected {VERSION})")
        try:
            spec = doc["model"]
            layers = [RbmParameters(np.array(l["visible_bias"]), np.array(l["hidden_bias"]),
                                    np.array(l["weights"]).reshape(len(l["visible_bias"]), len(l["hidden_bias"])))
                      for l in spec["layers"]]
            model = DbnModel(layers, np.array(spec["head_weights"]).reshape(len(spec["label_names"]), -1),
                             np.array(spec["head_bias"]), list(spec["label_names"]),
                             {str(k): int(v) for k, v in spec["overrides"].items()})
            events = [StructuralEvent(**e) for e in doc.get("events", [])]
            return cls(model, Preprocessing.from_dict(doc["descriptor"]), doc.get("config", {}), events,
                       doc.get("metrics", {}))
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def save_checkpoint(checkpoint: Checkpoint, path, force: bool = True) -> Path:
    return atomic_write(path, json.dumps(checkpoint.to_dict(), indent=1) + "\n", force=force)


def load_checkpoint(path, descriptor: Optional[Preprocessing] = None) -> Checkpoint:
    """Read a checkpoint; if ``descriptor`` is given it must match the stored one."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    checkpoint = Checkpoint.from_dict(doc)
    if descriptor is not None and descriptor != checkpoint.descriptor:
        raise CheckpointError(f"preprocessing mismatch: checkpoint {checkpoint.descriptor.to_dict()}, "
                              f"data {descriptor.to_dict()}")
    return checkpoint
