"""Layer graphs, parameters, per-mini-batch neuron state and forward passes.

An SNN is simulated one layer at a time over a whole segment of time steps:
because no layer feeds back into an earlier one, the weighted input of layer
``l`` at every step of the segment is available once layer ``l-1`` has been
simulated for that segment. All weight products therefore run as a single
matrix product over ``steps * batch`` rows, and only the elementwise LIF
recurrence is scanned step by step (see :func:`hybrid_snn.neuron.lif_scan`).
The result is identical to the step-major loop in which every layer is
advanced once per step.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import ConfigError, ShapeError, SNNError
from .neuron import LifState, NeuronConfig, lif_scan
from .tensor import (ConvSpec, avgpool_fwd, check_finite, conv2d_fwd, get_dtype,
                     linear_fwd, relu_fwd)


# -- layer descriptions ------------------------------------------------------

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    kind = "conv"


@dataclass(frozen=True)
class Linear:
    out: int
    kind = "linear"


@dataclass(frozen=True)
class AvgPool:
    k: int = 2
    kind = "avgpool"


@dataclass(frozen=True)
class Dropout:
    rate: float = 0.2
    kind = "dropout"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class ResidualBlock:
    """Two 3x3 spiking convolutions with an identity shortcut.

    The shortcut adds the block input to the second convolution's input
    current, before that layer's threshold.
    """

    channels: int
    kind = "residual"


Layer = Union[Conv, Linear, AvgPool, Dropout, ResidualBlock]
LAYER_TYPES = {cls.kind: cls for cls in (Conv, Linear, AvgPool, Dropout, ResidualBlock)}


@dataclass(frozen=True)
class Node:
    """A layer with its resolved shapes and parameter names."""

    index: int
    layer: Layer
    in_shape: tuple
    out_shape: tuple
    convs: tuple = ()          # ConvSpec per weight, conv and residual layers
    weights: tuple = ()        # parameter names, in forward order
    is_output: bool = False

    @property
    def populations(self) -> tuple:
        """Names of the thresholded neuron populations in this node."""
        return () if self.is_output else self.weights


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple
    num_classes: int
    input_shape: tuple
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "nodes", self._resolve())

    def _resolve(self) -> tuple:
        if not self.layers:
            raise ConfigError("architecture has no layers")
        last = self.layers[-1]
        if not isinstance(last, Linear) or last.out != self.num_classes:
            raise ConfigError(f"last layer must be Linear({self.num_classes}), got {last}")
        if self.num_classes < 2:
            raise ConfigError("need at least two classes")
        if any(isinstance(l, ResidualBlock) for l in self.layers):
            self._check_preprocessing_block()
        nodes = []
        shape = self.input_shape
        n_conv = n_fc = n_res = 0
        for i, layer in enumerate(self.layers):
            is_output = i == len(self.layers) - 1
            convs, weights = (), ()
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: Conv needs a (C, H, W) input, got {shape}")
                spec = ConvSpec(layer.out_channels, shape[0], layer.kernel, layer.stride, layer.padding)
                ho, wo = spec.output_hw(shape[1], shape[2])
                out = (layer.out_channels, ho, wo)
                convs, weights = (spec,), (f"conv{n_conv}",)
                n_conv += 1
            elif isinstance(layer, ResidualBlock):
                if len(shape) != 3 or shape[0] != layer.channels:
                    raise ConfigError(f"layer {i}: residual block of {layer.channels} channels "
                                      f"cannot take input {shape}")
                spec = ConvSpec(layer.channels, layer.channels, 3, 1, 1)
                out = shape
                convs = (spec, spec)
                weights = (f"res{n_res}a", f"res{n_res}b")
                n_res += 1
            elif isinstance(layer, Linear):
                out = (layer.out,)
                weights = ("fc_out",) if is_output else (f"fc{n_fc}",)
                n_fc += 0 if is_output else 1
            elif isinstance(layer, AvgPool):
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: AvgPool needs a (C, H, W) input, got {shape}")
                if layer.k < 1 or shape[1] % layer.k or shape[2] % layer.k:
                    raise ConfigError(f"layer {i}: pool kernel {layer.k} does not divide "
                                      f"{shape[1]}x{shape[2]}")
                out = (shape[0], shape[1] // layer.k, shape[2] // layer.k)
            elif isinstance(layer, Dropout):
                out = shape
            else:
                raise ConfigError(f"layer {i}: unsupported layer {layer!r}")
            if is_output and not isinstance(layer, Linear):
                raise ConfigError("output layer must be Linear")
            nodes.append(Node(i, layer, shape, out, convs, weights, is_output))
            shape = out
        return tuple(nodes)

    def _check_preprocessing_block(self):
        head = self.layers[:5]
        kinds = [type(l) for l in head]
        if kinds != [Conv, Dropout, Conv, Dropout, Conv] or any(
                (c.kernel, c.stride) != (3, 1) for c in head[::2]):
            raise ConfigError("residual networks must start with three 3x3 stride-1 "
                              "convolutions separated by dropout")

    @property
    def weight_names(self) -> list:
        return [w for node in self.nodes for w in node.weights]

    @property
    def populations(self) -> list:
        """Thresholded populations, front to back."""
        return [p for node in self.nodes for p in node.populations]

    @property
    def fixed_unity(self) -> set:
        """Populations inside residual blocks, whose threshold is pinned to 1."""
        return {p for node in self.nodes if isinstance(node.layer, ResidualBlock)
                for p in node.populations}

    def population_shape(self, name: str) -> tuple:
        for node in self.nodes:
            if name in node.populations:
                return node.out_shape
        raise KeyError(name)

    def weight_shape(self, name: str) -> tuple:
        for node in self.nodes:
            for j, w in enumerate(node.weights):
                if w == name:
                    if node.convs:
                        return node.convs[j].weight_shape
                    return (node.out_shape[0], int(np.prod(node.in_shape)))
        raise KeyError(name)

    def to_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            d = {"kind": layer.kind}
            d.update({k: getattr(layer, k) for k in layer.__dataclass_fields__})
            layers.append(d)
        return {"name": self.name, "num_classes": self.num_classes,
                "input_shape": list(self.input_shape), "layers": layers}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureSpec":
        layers = []
        for entry in d["layers"]:
            entry = dict(entry)
            kind = entry.pop("kind")
            if kind not in LAYER_TYPES:
                raise ConfigError(f"unknown layer kind {kind!r}")
            layers.append(LAYER_TYPES[kind](**entry))
        return cls(tuple(layers), int(d["num_classes"]), tuple(d["input_shape"]),
                   d.get("name", "custom"))


# -- presets -----------------------------------------------------------------

def vgg5(input_shape=(1, 28, 28), num_classes=10) -> ArchitectureSpec:
    """Five weight layers: three convolutions, one hidden and one output linear."""
    layers = (Conv(8), AvgPool(2), Conv(16), Conv(16), AvgPool(2), Dropout(0.2),
              Linear(64), Dropout(0.2), Linear(num_classes))
    return ArchitectureSpec(layers, num_classes, input_shape, "vgg5")


def resnet8_lite(input_shape=(1, 28, 28), num_classes=10) -> ArchitectureSpec:
    """Pre-processing block, two residual blocks and a linear classifier (8 weight layers)."""
    layers = (Conv(8), Dropout(0.1), Conv(8), Dropout(0.1), Conv(16), AvgPool(2),
              ResidualBlock(16), AvgPool(2), ResidualBlock(16), Linear(num_classes))
    return ArchitectureSpec(layers, num_classes, input_shape, "resnet8-lite")


PRESETS: dict[str, Callable[..., ArchitectureSpec]] = {
    "vgg5": vgg5,
    "resnet8-lite": resnet8_lite,
}


def preset(name: str, input_shape=(1, 28, 28), num_classes=10) -> ArchitectureSpec:
    try:
        return PRESETS[name](input_shape, num_classes)
    except KeyError:
        raise ConfigError(f"unknown architecture {name!r}; choose from {sorted(PRESETS)}") from None


# -- parameters --------------------------------------------------------------

@dataclass
class NetworkParams:
    weights: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.weights.items()},
                             dict(self.thresholds))

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams({k: np.ascontiguousarray(v, dtype=dtype) for k, v in self.weights.items()},
                             dict(self.thresholds))


def init_params(arch: ArchitectureSpec, rng: np.random.Generator) -> NetworkParams:
    """Fan-in scaled normal initialisation; thresholds start unset."""
    dtype = get_dtype()
    weights = {}
    for name in arch.weight_names:
        shape = arch.weight_shape(name)
        fan_in = int(np.prod(shape[1:]))
        weights[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return NetworkParams(weights, {})


def check_params(params: NetworkParams, arch: ArchitectureSpec, need_thresholds=False):
    for name in arch.weight_names:
        if name not in params.weights:
            raise ConfigError(f"missing weight {name!r}")
        if params.weights[name].shape != arch.weight_shape(name):
            raise ShapeError(f"weight {name!r} has shape {params.weights[name].shape}, "
                             f"architecture expects {arch.weight_shape(name)}")
    extra = set(params.weights) - set(arch.weight_names)
    if extra:
        raise ConfigError(f"weights not in architecture: {sorted(extra)}")
    if need_thresholds:
        for name in arch.populations:
            v = params.thresholds.get(name)
            if v is None or not v > 0:
                raise ConfigError(f"population {name!r} has no positive threshold")


# -- neuron state ------------------------------------------------------------

@dataclass
class NetworkState:
    """Per-mini-batch simulation state: LIF states, output potentials, dropout masks."""

    lif: dict
    out: LifState
    masks: dict
    batch: int
    t: int = 1
    spike_counts: dict = field(default_factory=dict)

    def copy(self) -> "NetworkState":
        return copy.deepcopy(self)


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=None) -> np.ndarray:
    dtype = np.dtype(dtype or get_dtype())
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


def init_neuron_state(batch: int, arch: ArchitectureSpec, rng: np.random.Generator | None = None,
                      dropout: bool = True) -> NetworkState:
    """Zero potentials, spike times of -1000 and fresh dropout masks.

    Masks are drawn only when ``dropout`` is true and ``rng`` is given;
    otherwise dropout layers pass spikes through unchanged.
    """
    dtype = get_dtype()
    lif = {}
    masks = {}
    for node in arch.nodes:
        for pop in node.populations:
            lif[pop] = LifState.zeros((batch,) + node.out_shape, dtype)
        if isinstance(node.layer, Dropout) and dropout and rng is not None and node.layer.rate > 0:
            masks[node.index] = dropout_mask((batch,) + node.in_shape, node.layer.rate, rng, dtype)
    out = LifState.zeros((batch, arch.num_classes), dtype)
    return NetworkState(lif, out, masks, batch, 1, {p: 0 for p in arch.populations})


# -- SNN forward -------------------------------------------------------------

@dataclass
class ForwardRecord:
    """Everything the backward pass needs for one simulated segment."""

    t0: int
    steps: int
    inputs: np.ndarray                           # (steps, batch, *input_shape)
    outputs: dict = field(default_factory=dict)  # node index -> (steps, batch, *out_shape)
    lif: dict = field(default_factory=dict)      # population -> (spikes, u_rec, s_rec)
    out_potentials: np.ndarray | None = None     # (steps, batch, N), cumulative
    masks: dict = field(default_factory=dict)
    leak: float = 1.0

    def __len__(self):
        return self.steps

    @property
    def final_potentials(self) -> np.ndarray:
        return self.out_potentials[-1]

    def spikes(self, population: str) -> np.ndarray:
        return self.lif[population][0]

    def nbytes(self) -> int:
        total = self.inputs.nbytes + self.out_potentials.nbytes
        total += sum(a.nbytes for a in self.outputs.values())
        total += sum(a.nbytes for rec in self.lif.values() for a in rec)
        return total


def _weighted(node: Node, j: int, W: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply the ``j``-th weight of ``node`` to a (steps, batch, ...) tensor."""
    steps, batch = x.shape[:2]
    flat = x.reshape((steps * batch,) + x.shape[2:])
    if node.convs:
        y = conv2d_fwd(flat, node.convs[j], W)
    else:
        y = linear_fwd(flat.reshape(steps * batch, -1), W)
    return y.reshape((steps, batch) + y.shape[1:])


def snn_forward(params: NetworkParams, arch: ArchitectureSpec, spike_train: np.ndarray,
                state: NetworkState, leak: float = 1.0, record: bool = True,
                stop_at: str | None = None,
                threshold_fn: Callable[[str, np.ndarray], float] | None = None):
    """Simulate ``spike_train.shape[0]`` steps continuing from ``state``.

    Returns ``(u_out, record)``: the output potentials accumulated since the
    state was initialised and a :class:`ForwardRecord` (None when ``record``
    is false). ``state`` is advanced in place.

    ``stop_at`` names a population: simulation stops once its input current
    is computed, and that current array is returned in place of ``u_out``.
    ``threshold_fn(population, currents)`` may supply a threshold for a
    population just before it fires; the value is written into ``params``.
    """
    steps = spike_train.shape[0]
    if spike_train.shape[1:] != (state.batch,) + arch.input_shape:
        raise ShapeError(f"spike train {spike_train.shape} does not match batch {state.batch} "
                         f"and input {arch.input_shape}")
    dtype = state.out.u.dtype
    x = np.ascontiguousarray(spike_train, dtype=dtype)
    t0 = state.t
    rec = ForwardRecord(t0, steps, x, masks=state.masks, leak=leak) if record else None

    def fire(pop, currents):
        if threshold_fn is not None:
            v = threshold_fn(pop, currents)
            if v is not None:
                params.thresholds[pop] = float(v)
        cfg = NeuronConfig(leak, params.thresholds[pop])
        spikes, u_rec, s_rec, n_spikes = lif_scan(state.lif[pop], currents, cfg, t0, name=pop)
        state.spike_counts[pop] = state.spike_counts.get(pop, 0) + n_spikes
        if rec is not None:
            rec.lif[pop] = (spikes, u_rec, s_rec)
        return spikes

    for node in arch.nodes:
        layer = node.layer
        try:
            if node.is_output:
                currents = _weighted(node, 0, params.weights[node.weights[0]], x)
                pots = np.empty_like(currents)
                u = state.out.u
                for k in range(steps):
                    u += currents[k]
                    pots[k] = u
                check_finite(u, f"output potentials at t={t0 + steps - 1}")
                if rec is not None:
                    rec.out_potentials = pots
                x = pots
            elif isinstance(layer, (Conv, Linear)):
                pop = node.weights[0]
                currents = _weighted(node, 0, params.weights[pop], x)
                if stop_at == pop:
                    state.t += steps
                    return currents, rec
                x = fire(pop, currents)
            elif isinstance(layer, ResidualBlock):
                pa, pb = node.weights
                ca = _weighted(node, 0, params.weights[pa], x)
                if stop_at == pa:
                    state.t += steps
                    return ca, rec
                oa = fire(pa, ca)
                if rec is not None:
                    rec.outputs[(node.index, "a")] = oa
                cb = _weighted(node, 1, params.weights[pb], oa)
                cb += x
                if stop_at == pb:
                    state.t += steps
                    return cb, rec
                x = fire(pb, cb)
            elif isinstance(layer, AvgPool):
                flat = x.reshape((steps * state.batch,) + x.shape[2:])
                x = avgpool_fwd(flat, layer.k).reshape((steps, state.batch) + node.out_shape)
            elif isinstance(layer, Dropout):
                mask = state.masks.get(node.index)
                if mask is not None:
                    x = x * mask
        except SNNError as exc:
            raise type(exc)(f"{exc} [layer {node.index} ({layer.kind}), "
                            f"steps {t0}..{t0 + steps - 1}]") from exc
        if rec is not None:
            rec.outputs[node.index] = x
    state.t += steps
    if stop_at is not None:
        raise ConfigError(f"population {stop_at!r} not found in architecture")
    return state.out.u.copy(), rec


def simulate(params: NetworkParams, arch: ArchitectureSpec, images: np.ndarray, timesteps: int,
             seed: int, leak: float = 1.0, sample_ids=None, batch_size: int = 100,
             segment: int | None = None):
    """Encode and simulate ``images`` in inference mode.

    Returns ``(u_out, spike_counts)`` where ``u_out`` is the
    (n, N) array of final output potentials and ``spike_counts`` maps each
    population to its total spike count over all samples and steps.
    """
    from .encoding import poisson_encode

    images = np.asarray(images)
    n = images.shape[0]
    ids = np.arange(n) if sample_ids is None else np.asarray(sample_ids)
    segment = segment or timesteps
    u_all = np.empty((n, arch.num_classes), dtype=get_dtype())
    counts = {p: 0 for p in arch.populations}
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        train = poisson_encode(images[sl], timesteps, seed, ids[sl])
        state = init_neuron_state(train.shape[1], arch, dropout=False)
        for t in range(0, timesteps, segment):
            snn_forward(params, arch, train[t:t + segment], state, leak, record=False)
        u_all[sl] = state.out.u
        for p, c in state.spike_counts.items():
            counts[p] += c
    return u_all, counts


# -- ANN forward -------------------------------------------------------------

def ann_forward(params: NetworkParams, arch: ArchitectureSpec, images: np.ndarray,
                masks: dict | None = None, keep_cache: bool = False):
    """Single-pass ReLU network with the same weights; returns ``(logits, cache)``.

    ``masks`` maps dropout node indices to inverted-scale masks; dropout is
    the identity when no mask is supplied.
    """
    x = np.ascontiguousarray(images, dtype=get_dtype())
    if x.shape[1:] != arch.input_shape:
        raise ShapeError(f"images {x.shape} do not match input shape {arch.input_shape}")
    cache = [] if keep_cache else None
    masks = masks or {}
    for node in arch.nodes:
        layer = node.layer
        entry = {"x": x}
        if isinstance(layer, (Conv, Linear)):
            W = params.weights[node.weights[0]]
            if node.convs:
                a = conv2d_fwd(x, node.convs[0], W)
            else:
                a = linear_fwd(x.reshape(x.shape[0], -1), W)
            entry["a"] = a
            x = a if node.is_output else relu_fwd(a)
        elif isinstance(layer, ResidualBlock):
            wa, wb = (params.weights[w] for w in node.weights)
            a1 = conv2d_fwd(x, node.convs[0], wa)
            h = relu_fwd(a1)
            a2 = conv2d_fwd(h, node.convs[1], wb) + x
            entry.update(a1=a1, h=h, a2=a2)
            x = relu_fwd(a2)
        elif isinstance(layer, AvgPool):
            x = avgpool_fwd(x, layer.k)
        elif isinstance(layer, Dropout):
            mask = masks.get(node.index)
            if mask is not None:
                x = x * mask
        if keep_cache:
            cache.append(entry)
    return x, cache
