"""Walking-distance monitoring and hidden-neuron generation / annihilation.

Walking distance (WD) is the per-epoch movement of each hidden neuron's bias
and weight column. A neuron whose smoothed WD stays large in both blocks is
still being pulled around after long training, which signals missing capacity:
it is split into itself plus a noisy copy. Neurons whose activation barely
varies over the data carry no information and are removed.
"""
from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, ShapeError, StructureError
from .rbm import RbmParameters, cd_update, hidden_conditional, reconstruction_error


@dataclass
class StructureConfig:
    """Structural thresholds plus the per-layer training hyperparameters."""

    theta_G: float = 0.05
    theta_A: float = 0.01
    theta_L1: float = 0.1
    theta_L2: float = 0.1
    # layer thresholds are multiplied by the current layer count k
    scale_layer_thresholds: bool = True
    max_hidden: int = 256
    max_layers: int = 3
    warmup_epochs: int = 10
    cooldown_epochs: int = 5
    noise_sigma: float = 0.01
    window: int = 5
    enable_generation: bool = True
    enable_annihilation: bool = True

    initial_hidden: int = 8
    epochs_per_layer: int = 100
    batch_size: int = 64
    learning_rate: float = 0.05
    cd_k: int = 1
    sample_visible: bool = True
    momentum: float = 0.0
    weight_decay: float = 0.0
    init_std: float = 0.01
    # "zero", or "data" for the log-odds of the mean input of each visible unit
    visible_bias_init: str = "zero"
    head_epochs: int = 200
    head_learning_rate: float = 0.5
    head_batch_size: int = 64

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in self.__dataclass_fields__.values():
            value, default = getattr(self, f.name), f.default
            if isinstance(default, bool):
                ok = isinstance(value, bool)
            elif isinstance(default, int):
                ok = isinstance(value, (int, np.integer)) and not isinstance(value, bool)
            elif isinstance(default, float):
                ok = isinstance(value, (int, float, np.number)) and not isinstance(value, bool)
            else:
                ok = isinstance(value, str)
            if not ok:
                raise ConfigError(f.name, f"expected {type(default).__name__}, got {value!r}")
        for name in ("theta_G", "theta_A", "theta_L1", "theta_L2"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be > 0")
        for name in ("initial_hidden", "max_layers", "window", "epochs_per_layer",
                     "batch_size", "cd_k", "head_batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.max_hidden < self.initial_hidden:
            raise ConfigError("max_hidden", "must be >= initial_hidden")
        for name in ("warmup_epochs", "cooldown_epochs", "head_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("noise_sigma", "momentum", "weight_decay", "init_std", "head_learning_rate"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        if self.visible_bias_init not in ("zero", "data"):
            raise ConfigError("visible_bias_init", "must be 'zero' or 'data'")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StructureConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown structure setting")
        return cls(**data)


@dataclass
class WdSnapshot:
    epoch: int
    wd_hidden_bias: np.ndarray
    wd_weights: np.ndarray
    wd_total: float


@dataclass
class WdTrace:
    """Moving window of WD snapshots; must be reset after every structural edit."""

    window: int = 5
    snapshots: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.snapshots = deque(self.snapshots, maxlen=self.window)

    def push(self, snapshot: WdSnapshot) -> None:
        if self.snapshots:
            if self.snapshots[-1].wd_hidden_bias.shape != snapshot.wd_hidden_bias.shape:
                raise ShapeError("hidden axis: snapshot size changed; reset the trace after structural edits")
            if snapshot.epoch <= self.snapshots[-1].epoch:
                raise ValueError("snapshots must be pushed in epoch order")
        self.snapshots.append(snapshot)

    def reset(self) -> None:
        self.snapshots.clear()

    @property
    def ready(self) -> bool:
        return len(self.snapshots) >= self.window

    @property
    def smoothed_c(self) -> np.ndarray:
        return np.mean([s.wd_hidden_bias for s in self.snapshots], axis=0)

    @property
    def smoothed_W(self) -> np.ndarray:
        return np.mean([s.wd_weights for s in self.snapshots], axis=0)


def walking_distance(prev: RbmParameters, curr: RbmParameters, epoch: int = 0) -> WdSnapshot:
    """Per-neuron movement of c and of each weight column between two epochs.

    The visible bias is excluded because it tracks the input statistics rather
    than the hidden representation.
    """
    if prev.weights.shape != curr.weights.shape:
        raise ShapeError(f"weights: shapes differ ({prev.weights.shape} vs {curr.weights.shape})")
    wd_c = np.abs(curr.hidden_bias - prev.hidden_bias)
    wd_w = np.linalg.norm(curr.weights - prev.weights, axis=0)
    return WdSnapshot(epoch, wd_c, wd_w, float(wd_c.sum() + wd_w.sum()))


def check_generation(trace: WdTrace, params: RbmParameters, config: StructureConfig) -> list[int]:
    """Neurons whose smoothed bias WD times smoothed weight WD exceeds theta_G.

    Parents are ranked by that product and truncated so the layer never
    exceeds ``max_hidden``.
    """
    if not trace.ready:
        return []
    room = config.max_hidden - params.n_hidden
    if room <= 0:
        return []
    score = trace.smoothed_c * trace.smoothed_W
    if score.shape != (params.n_hidden,):
        raise ShapeError("hidden axis: trace does not match the current layer size")
    candidates = np.flatnonzero(score > config.theta_G)
    ranked = candidates[np.argsort(-score[candidates], kind="stable")][:room]
    return sorted(int(j) for j in ranked)


def generate_neuron(params: RbmParameters, parent: int, noise_sigma: float,
                    rng: np.random.Generator, max_hidden: Optional[int] = None) -> RbmParameters:
    """Append a hidden neuron that copies ``parent`` (bias exactly, weights plus noise)."""
    if not 0 <= parent < params.n_hidden:
        raise StructureError(f"parent index {parent} out of range for {params.n_hidden} hidden neurons")
    if max_hidden is not None and params.n_hidden >= max_hidden:
        raise StructureError(f"hidden layer already at max_hidden={max_hidden}")
    column = params.weights[:, parent] + rng.normal(0.0, 1.0, params.n_visible) * noise_sigma
    return RbmParameters(
        params.visible_bias.copy(),
        np.append(params.hidden_bias, params.hidden_bias[parent]),
        np.column_stack([params.weights, column]),
    )


def check_annihilation(params: RbmParameters, data, config: StructureConfig) -> list[int]:
    """Neurons whose activation standard deviation over ``data`` is below theta_A."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("data is empty")
    if params.n_hidden < 2:
        return []
    spread = hidden_conditional(data, params).std(axis=0)
    victims = np.flatnonzero(spread < config.theta_A)
    if victims.size == params.n_hidden:
        # keep the most informative neuron alive
        victims = np.delete(victims, np.argmax(spread[victims]))
    return [int(j) for j in victims]


def annihilate(params: RbmParameters, victims) -> RbmParameters:
    victims = sorted(set(int(j) for j in victims))
    if not victims:
        return params
    if victims[0] < 0 or victims[-1] >= params.n_hidden:
        raise StructureError(f"victim index out of range for {params.n_hidden} hidden neurons")
    if len(victims) >= params.n_hidden:
        raise StructureError("cannot annihilate every hidden neuron")
    keep = np.setdiff1d(np.arange(params.n_hidden), victims)
    return RbmParameters(params.visible_bias.copy(), params.hidden_bias[keep], params.weights[:, keep])


def data_visible_bias(data: np.ndarray) -> np.ndarray:
    """Log-odds of the mean of each input unit, clipped away from 0 and 1."""
    mean = np.clip(np.asarray(data, dtype=np.float64).mean(axis=0), 1e-3, 1 - 1e-3)
    return np.log(mean / (1 - mean))


def init_layer(data: np.ndarray, n_hidden: int, config: StructureConfig,
               rng: np.random.Generator) -> RbmParameters:
    params = RbmParameters.initialize(data.shape[1], n_hidden, rng, config.init_std)
    if config.visible_bias_init == "data":
        params.visible_bias = data_visible_bias(data)
    return params


@dataclass
class EpochRecord:
    layer: int
    epoch: int
    reconstruction_error: float
    mean_energy: float
    wd_total: float
    hidden_count: int


@dataclass
class StructuralEvent:
    layer: int
    epoch: int
    event: str  # "generate" | "annihilate" | "layer"
    neurons: list[int]
    hidden_count: int


@dataclass
class LayerTrainingResult:
    params: RbmParameters
    history: list[EpochRecord]
    events: list[StructuralEvent]

    @property
    def generations(self) -> int:
        return sum(len(e.neurons) for e in self.events if e.event == "generate")


def train_rbm(data, config: StructureConfig, rng: np.random.Generator, *,
              n_hidden: Optional[int] = None, layer: int = 0, adaptive: bool = True,
              params: Optional[RbmParameters] = None,
              on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> LayerTrainingResult:
    """Train one RBM for ``config.epochs_per_layer`` epochs with the structure controller.

    Structural checks run at the end of an epoch, once ``warmup_epochs`` have
    passed and at least ``cooldown_epochs`` have elapsed since the previous
    edit. Generation is tried first; annihilation is only considered once this
    layer has generated at least one neuron.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("data is empty")
    if params is None:
        params = init_layer(data, n_hidden or config.initial_hidden, config, rng)
    trace = WdTrace(config.window)
    history: list[EpochRecord] = []
    events: list[StructuralEvent] = []
    previous_step = None
    last_edit = -np.inf
    generated = False
    n = data.shape[0]

    for epoch in range(1, config.epochs_per_layer + 1):
        start = params
        order = rng.permutation(n)
        energies = []
        for lo in range(0, n, config.batch_size):
            batch = data[order[lo:lo + config.batch_size]]
            params, stats = cd_update(params, batch, config.cd_k, config.learning_rate, rng,
                                      weight_decay=config.weight_decay, momentum=config.momentum,
                                      previous_step=previous_step, epoch=epoch,
                                      sample_visible=config.sample_visible)
            previous_step = stats.step
            energies.append(stats.mean_energy * batch.shape[0])

        snapshot = walking_distance(start, params, epoch)
        trace.push(snapshot)
        record = EpochRecord(layer, epoch, reconstruction_error(params, data), sum(energies) / n,
                             snapshot.wd_total, params.n_hidden)
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)

        if not adaptive or epoch < config.warmup_epochs or epoch - last_edit < config.cooldown_epochs:
            continue
        parents = check_generation(trace, params, config) if config.enable_generation else []
        if parents:
            for parent in parents:
                params = generate_neuron(params, parent, config.noise_sigma, rng, config.max_hidden)
            events.append(StructuralEvent(layer, epoch, "generate", parents, params.n_hidden))
            generated = True
        elif generated and config.enable_annihilation:
            victims = check_annihilation(params, data, config)
            if not victims:
                continue
            params = annihilate(params, victims)
            events.append(StructuralEvent(layer, epoch, "annihilate", victims, params.n_hidden))
        else:
            continue
        trace.reset()
        previous_step = None
        last_edit = epoch

    return LayerTrainingResult(params, history, events)


def annihilation_pass(params: RbmParameters, data, config: StructureConfig, rng: np.random.Generator,
                      recovery_epochs: int = 20, layer: int = 0) -> LayerTrainingResult:
    """Remove every low-spread neuron at once, then retrain briefly without generation.

    Dropping a neuron also drops its constant contribution to the visible
    input, so a short recovery run lets the visible bias absorb it.
    """
    victims = check_annihilation(params, data, config)
    pruned = annihilate(params, victims)
    events = [StructuralEvent(layer, 0, "annihilate", victims, pruned.n_hidden)] if victims else []
    if recovery_epochs < 1:
        return LayerTrainingResult(pruned, [], events)
    recovery = replace(config, epochs_per_layer=recovery_epochs)
    result = train_rbm(data, recovery, rng, layer=layer, adaptive=False, params=pruned)
    return LayerTrainingResult(result.params, result.history, events)
