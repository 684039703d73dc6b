import numpy as np

from adaptive_dbn.dataset import LabeledDataset, task_label_names
from adaptive_dbn.structure import StructureConfig


def make_dataset(X, labels, structure="deck", label_names=None):
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    n = len(X)
    return LabeledDataset(X, labels, [structure] * n, labels.astype(bool),
                          [f"toy:{i}" for i in range(n)], label_names or task_label_names(structure))


def orthogonal_patterns(n_patterns=8, width=2, repeats=8):
    """``n_patterns`` disjoint blocks of ``width`` ones in a 16-unit vector, each repeated."""
    pats = np.zeros((n_patterns, n_patterns * width))
    for k in range(n_patterns):
        pats[k, width * k:width * (k + 1)] = 1.0
    return np.repeat(pats, repeats, axis=0)


def image_config(**overrides):
    """Settings used for 32x32 crack images (see the README for how they were chosen)."""
    base = dict(learning_rate=0.02, momentum=0.9, sample_visible=False, visible_bias_init="data",
                initial_hidden=128, max_hidden=192, max_layers=2, theta_G=3e-4)
    base.update(overrides)
    return StructureConfig(**base)
