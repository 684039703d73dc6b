"""
Growing hidden neurons on orthogonal patterns
=============================================

Eight disjoint two-pixel blocks need far more than two hidden units.
Start an RBM with J=2, let the walking-distance monitor add neurons, and
compare against the same RBM trained with its size frozen.

Run with ``python3 demos/neuron_growth.py``.
"""
import numpy as np

from adaptive_dbn.rbm import reconstruction_error
from adaptive_dbn.structure import StructureConfig, train_rbm

# 8 patterns x 8 copies, 16 visible units
patterns = np.zeros((8, 16))
for k in range(8):
    patterns[k, 2 * k:2 * k + 2] = 1.0
data = np.repeat(patterns, 8, axis=0)

config = StructureConfig(initial_hidden=2, theta_G=0.005, max_hidden=16, epochs_per_layer=300,
                         batch_size=8, learning_rate=0.2)

adaptive = train_rbm(data, config, np.random.default_rng(0))
fixed = train_rbm(data, config, np.random.default_rng(0), adaptive=False)

for event in adaptive.events:
    print(f"epoch {event.epoch:3d}: {event.event} {event.neurons} -> J={event.hidden_count}")

print(f"adaptive: J={adaptive.params.n_hidden}, error {reconstruction_error(adaptive.params, data):.5f}")
print(f"fixed:    J={fixed.params.n_hidden}, error {reconstruction_error(fixed.params, data):.5f}")

# the WD trace shows the network settling once it has enough units
wd = [r.wd_total for r in adaptive.history]
print("wd_total every 50 epochs:", np.round(wd[::50], 4))
