"""
Crack classification on synthetic concrete images
=================================================

The full pipeline at desk scale: synthetic 32x32 surfaces with and without
cracks, an adaptively built DBN, the override-table fine-tune and the
per-category report. Takes about 20 seconds on one core.

Run with ``python3 demos/synthetic_cracks.py``.
"""
import json
from pathlib import Path

import numpy as np

from adaptive_dbn.dataset import generate_synthetic
from adaptive_dbn.dbn import evaluate, fine_tune, format_table, train_adaptive
from adaptive_dbn.structure import StructureConfig

train = generate_synthetic(1000, 0.5, side=32, seed=1)
test = generate_synthetic(200, 0.5, side=32, seed=2)
print(f"{len(train)} training and {len(test)} test images, {train.X.shape[1]} pixels each")

# image-scale settings; the defaults are tuned for tiny toy problems
settings = json.loads((Path(__file__).with_name("image_config.json")).read_text())["structure"]
config = StructureConfig(**settings)

run = train_adaptive(train, config, np.random.default_rng(0))
print("hidden sizes:", run.model.hidden_sizes)
for event in run.events:
    print(f"  layer {event.layer} epoch {event.epoch}: {event.event} ({len(event.neurons)} neurons)")

print(format_table(evaluate(run.model, test), evaluate(run.model, train)))

# fine-tune only ever fixes training errors; look at what it does to the test set
tuned, report = fine_tune(run.model, train)
print(f"override table: {len(tuned.overrides)} patterns, "
      f"training errors {report.misclassified_before} -> {report.misclassified_after}")
print(format_table(evaluate(tuned, test, use_fine_tune=True)))
