"""ANN training, spike-timing-dependent backpropagation and optimisers.

The SNN backward pass walks the layer graph in reverse, one segment of time
steps at a time. For a hidden population the adjoint of

    u[t] = leak * u[t-1] + I[t] - v * o[t-1],   o[t] = H(u[t] - v)

is scanned backwards in time with the surrogate ``sigma[t]`` standing in for
``do[t]/du[t]``:

    gu[t] = leak * gu[t+1] + sigma[t] * (go[t] - v * gu[t+1])

where ``go[t]`` is the gradient arriving from the next layer at step ``t``
and the ``- v * gu[t+1]`` term is the soft-reset path. ``gu[t]`` is also the
gradient of the input current, so weight gradients are one matrix product
over all ``steps * batch`` rows.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .encoding import poisson_encode
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .network import (ArchitectureSpec, AvgPool, Conv, Dropout, ForwardRecord, Linear,
                      NetworkParams, ResidualBlock, ann_forward, check_params, dropout_mask,
                      init_neuron_state, init_params, simulate, snn_forward)
from .neuron import NeuronConfig, SurrogateConfig, lif_scan_backward
from .tensor import (avgpool_vjp, conv2d_vjp, get_dtype, linear_vjp, relu_vjp,
                     softmax_cross_entropy)

log = logging.getLogger(__name__)

MetricsSink = Callable[[dict], None]


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 20
    batch_size: int = 32
    optimizer: str = "adam"
    momentum: float = 0.0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    timesteps: int = 100
    truncate: int | None = None
    surrogate: str = "stdb"
    alpha: float = 0.3
    beta: float | None = None
    leak: float = 0.99
    seed: int = 0
    clip_norm: float | None = None
    lr_step: int | None = None
    lr_gamma: float = 0.1
    max_train_samples: int | None = None
    eval_samples: int | None = None
    eval_batch_size: int = 100

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1 or self.timesteps < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and timesteps >= 1 required")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        t = self.segment_length
        if not 1 <= t <= self.timesteps or self.timesteps % t:
            raise ConfigError(f"truncation interval {t} must divide timesteps {self.timesteps}")
        self.surrogate_config()

    @property
    def segment_length(self) -> int:
        return self.truncate or self.timesteps

    def surrogate_config(self) -> SurrogateConfig:
        base = SurrogateConfig.default(self.surrogate)
        beta = base.beta if self.beta is None else self.beta
        return SurrogateConfig(self.surrogate, self.alpha, beta)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# -- gradient bookkeeping and optimisers -------------------------------------

class GradientAccumulator:
    """Per-parameter gradients summed over steps, segments and batches."""

    def __init__(self, names=()):
        self.grads: dict = {}
        for n in names:
            self.grads[n] = None

    def add(self, name: str, g: np.ndarray):
        if self.grads.get(name) is None:
            self.grads[name] = g.copy()
        else:
            self.grads[name] += g

    def merge(self, other: "GradientAccumulator"):
        for name, g in other.grads.items():
            if g is not None:
                self.add(name, g)

    def zero(self):
        for name in self.grads:
            self.grads[name] = None

    def __getitem__(self, name):
        return self.grads[name]

    def __contains__(self, name):
        return self.grads.get(name) is not None

    def items(self):
        return [(k, v) for k, v in self.grads.items() if v is not None]

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for _, g in self.items())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for _, g in self.items())

    def clip(self, max_norm: float | None) -> float:
        norm = self.norm()
        if max_norm is not None and norm > max_norm:
            scale = max_norm / (norm + 1e-12)
            for _, g in self.items():
                g *= g.dtype.type(scale)
        return norm


class SGD:
    def __init__(self, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self._velocity: dict = {}

    def step(self, params: NetworkParams, grads: GradientAccumulator):
        """Update weights in place. Thresholds are never touched."""
        for name, g in grads.items():
            w = params.weights[name]
            if self.weight_decay:
                g = g + w.dtype.type(self.weight_decay) * w
            if self.momentum:
                vel = self._velocity.get(name)
                vel = g.copy() if vel is None else w.dtype.type(self.momentum) * vel + g
                self._velocity[name] = vel
                g = vel
            w -= w.dtype.type(self.lr) * g


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr, self.betas, self.eps, self.weight_decay = lr, tuple(betas), eps, weight_decay
        self._m: dict = {}
        self._v: dict = {}
        self._t = 0

    def step(self, params: NetworkParams, grads: GradientAccumulator):
        self._t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self._t
        c2 = 1.0 - b2 ** self._t
        for name, g in grads.items():
            w = params.weights[name]
            if self.weight_decay:
                g = g + w.dtype.type(self.weight_decay) * w
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
            self._m[name], self._v[name] = m, v
            step = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            w -= step.astype(w.dtype)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(cfg.lr, cfg.momentum, cfg.weight_decay)
    return Adam(cfg.lr, cfg.betas, cfg.eps, cfg.weight_decay)


def optimizer_step(params: NetworkParams, grads: GradientAccumulator, optimizer):
    """Move weights against the gradient; thresholds are left as they are."""
    optimizer.step(params, grads)
    return params


def _set_lr(optimizer, cfg: TrainConfig, epoch: int):
    if cfg.lr_step:
        optimizer.lr = cfg.lr * cfg.lr_gamma ** (epoch // cfg.lr_step)


# -- ANN backward and training -----------------------------------------------

def ann_backward(params: NetworkParams, arch: ArchitectureSpec, cache: list,
                 g_logits: np.ndarray, masks: dict | None = None) -> GradientAccumulator:
    grads = GradientAccumulator(arch.weight_names)
    masks = masks or {}
    g = g_logits
    for node, entry in zip(reversed(arch.nodes), reversed(cache)):
        layer = node.layer
        x = entry["x"]
        first = node.index == 0
        if isinstance(layer, (Conv, Linear)):
            name = node.weights[0]
            W = params.weights[name]
            if not node.is_output:
                g = relu_vjp(entry["a"], g)
            if node.convs:
                g, gW = conv2d_vjp(x, node.convs[0], W, g, need_input_grad=not first)
            else:
                gx, gW = linear_vjp(x.reshape(x.shape[0], -1), W, g)
                g = gx.reshape(x.shape)
            grads.add(name, gW)
        elif isinstance(layer, ResidualBlock):
            na, nb = node.weights
            g_a2 = relu_vjp(entry["a2"], g)
            g_h, gWb = conv2d_vjp(entry["h"], node.convs[1], params.weights[nb], g_a2)
            g_a1 = relu_vjp(entry["a1"], g_h)
            g_x, gWa = conv2d_vjp(x, node.convs[0], params.weights[na], g_a1,
                                  need_input_grad=not first)
            grads.add(na, gWa)
            grads.add(nb, gWb)
            g = g_a2 if g_x is None else g_x + g_a2
        elif isinstance(layer, AvgPool):
            g = avgpool_vjp(g, layer.k)
        elif isinstance(layer, Dropout):
            mask = masks.get(node.index)
            if mask is not None:
                g = g * mask
    return grads


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def ann_masks(arch: ArchitectureSpec, batch: int, rng: np.random.Generator) -> dict:
    dtype = get_dtype()
    return {node.index: dropout_mask((batch,) + node.in_shape, node.layer.rate, rng, dtype)
            for node in arch.nodes
            if isinstance(node.layer, Dropout) and node.layer.rate > 0}


def evaluate_ann(params: NetworkParams, arch: ArchitectureSpec, images, labels,
                 batch_size: int = 500) -> float:
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits, _ = ann_forward(params, arch, images[start:start + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return correct / max(len(labels), 1)


def train_ann(arch: ArchitectureSpec, train_data, cfg: TrainConfig, test_data=None,
              params: NetworkParams | None = None, sink: MetricsSink | None = None):
    """Train the bias-free ReLU network that will later be converted.

    ``train_data``/``test_data`` are ``(images, labels)`` pairs with images in
    [0, 1]. Returns ``(params, history)``.
    """
    images, labels = train_data
    ss = np.random.SeedSequence(cfg.seed)
    init_rng, order_rng, mask_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    params = params.copy() if params is not None else init_params(arch, init_rng)
    check_params(params, arch)
    opt = make_optimizer(cfg)
    history = []
    n = len(labels) if cfg.max_train_samples is None else min(cfg.max_train_samples, len(labels))
    for epoch in range(1, cfg.epochs + 1):
        _set_lr(opt, cfg, epoch - 1)
        t_start = time.perf_counter()
        total_loss, correct, seen = 0.0, 0, 0
        for idx in _batches(len(labels), cfg.batch_size, order_rng):
            if seen >= n:
                break
            x, y = images[idx], labels[idx]
            masks = ann_masks(arch, len(idx), mask_rng)
            logits, cache = ann_forward(params, arch, x, masks, keep_cache=True)
            loss, g = softmax_cross_entropy(logits, y)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"ANN loss became {loss} in epoch {epoch} after {seen} samples; "
                    f"lr={cfg.lr}, max |logit|={float(np.nanmax(np.abs(logits)))}")
            grads = ann_backward(params, arch, cache, g, masks)
            grads.clip(cfg.clip_norm)
            optimizer_step(params, grads, opt)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == y))
            seen += len(idx)
        rec = {"phase": "ann", "epoch": epoch, "split": "train", "accuracy": correct / max(seen, 1),
               "loss": total_loss / max(seen, 1), "seconds": time.perf_counter() - t_start}
        history.append(rec)
        if sink:
            sink(rec)
        if test_data is not None:
            acc = evaluate_ann(params, arch, *test_data)
            rec = {"phase": "ann", "epoch": epoch, "split": "test", "accuracy": acc}
            history.append(rec)
            if sink:
                sink(rec)
    return params, history


# -- SNN backward ------------------------------------------------------------

def _node_input(record: ForwardRecord, index: int) -> np.ndarray:
    return record.inputs if index == 0 else record.outputs[index - 1]


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape((a.shape[0] * a.shape[1],) + a.shape[2:])


def _weight_vjp(node, j, W, x, g, need_input_grad):
    """Weight and input gradients of a (steps, batch, ...) weighted layer."""
    steps, batch = x.shape[:2]
    xf, gf = _flat(x), _flat(g)
    if node.convs:
        gx, gW = conv2d_vjp(xf, node.convs[j], W, gf, need_input_grad)
    else:
        gx, gW = linear_vjp(xf.reshape(steps * batch, -1), W, gf)
        if not need_input_grad:
            gx = None
    if gx is not None:
        gx = gx.reshape(x.shape)
    return gx, gW


def stdb_backward(record: ForwardRecord, params: NetworkParams, arch: ArchitectureSpec,
                  g_out: np.ndarray, surrogate: SurrogateConfig,
                  leak: float | None = None) -> GradientAccumulator:
    """Backpropagate ``g_out = dL/du_out`` through a recorded segment.

    ``g_out`` is the gradient with respect to the output potentials at the
    end of the segment (``(p - y) / batch`` for the cross-entropy loss).
    Returns gradients summed over every step in the record.
    """
    if record.out_potentials is None:
        raise ShapeError("record was produced with stop_at and has no output potentials")
    batch = record.inputs.shape[1]
    if g_out.shape != (batch, arch.num_classes):
        raise ShapeError(f"output gradient {g_out.shape} does not match "
                         f"({batch}, {arch.num_classes})")
    leak = record.leak if leak is None else leak
    steps, t0 = record.steps, record.t0
    dtype = record.inputs.dtype
    g_out = np.ascontiguousarray(g_out, dtype=dtype)
    if surrogate.family == "stdb" and surrogate.lut is not None:
        if surrogate.lut.dtype != dtype:
            raise ConfigError(f"surrogate table dtype {surrogate.lut.dtype} != record dtype {dtype}")
    grads = GradientAccumulator(arch.weight_names)

    # Output integrator: u_out = sum_t W x[t], so dL/dW = g_out^T sum_t x[t].
    out_node = arch.nodes[-1]
    x = _node_input(record, out_node.index)
    W = params.weights[out_node.weights[0]]
    x_sum = x.sum(axis=0).reshape(batch, -1)
    grads.add(out_node.weights[0], g_out.T @ x_sum)
    if out_node.index == 0:
        return grads
    g_in = (g_out @ W).reshape((batch,) + out_node.in_shape)
    g = np.ascontiguousarray(np.broadcast_to(g_in, (steps,) + g_in.shape))

    for node in reversed(arch.nodes[:-1]):
        layer = node.layer
        need_input_grad = node.index > 0
        if isinstance(layer, Dropout):
            mask = record.masks.get(node.index)
            if mask is not None:
                g = g * mask
        elif isinstance(layer, AvgPool):
            g = avgpool_vjp(_flat(g), layer.k).reshape((steps, batch) + node.in_shape)
        elif isinstance(layer, (Conv, Linear)):
            pop = node.weights[0]
            _, u_rec, s_rec = record.lif[pop]
            cfg = NeuronConfig(leak, params.thresholds[pop])
            g_cur = lif_scan_backward(g, u_rec, s_rec, cfg, surrogate, t0)
            g, gW = _weight_vjp(node, 0, params.weights[pop], _node_input(record, node.index),
                                g_cur, need_input_grad)
            grads.add(pop, gW)
        elif isinstance(layer, ResidualBlock):
            pa, pb = node.weights
            _, u_b, s_b = record.lif[pb]
            g_cb = lif_scan_backward(g, u_b, s_b, NeuronConfig(leak, params.thresholds[pb]),
                                     surrogate, t0)
            oa = record.outputs[(node.index, "a")]
            g_oa, gWb = _weight_vjp(node, 1, params.weights[pb], oa, g_cb, True)
            _, u_a, s_a = record.lif[pa]
            g_ca = lif_scan_backward(g_oa, u_a, s_a, NeuronConfig(leak, params.thresholds[pa]),
                                     surrogate, t0)
            g_x, gWa = _weight_vjp(node, 0, params.weights[pa], _node_input(record, node.index),
                                   g_ca, need_input_grad)
            grads.add(pa, gWa)
            grads.add(pb, gWb)
            g = g_cb if g_x is None else g_x + g_cb
        if g is None:
            break
    return grads


def truncated_bptt_step(params: NetworkParams, arch: ArchitectureSpec, spike_train: np.ndarray,
                        targets, surrogate: SurrogateConfig, leak: float, truncate: int | None,
                        state=None, rng: np.random.Generator | None = None):
    """Forward and backward over all segments of one mini-batch.

    At every segment boundary the loss is computed on the output potentials
    accumulated since ``t = 1``; its gradient is backpropagated within that
    segment only, added to the running sum, and the segment's record is
    dropped. ``truncate=None`` (or equal to T) is full BPTT.

    Returns ``(grads, info)`` with ``info`` holding the final loss, final
    output potentials, the state, and the peak record length and size.
    """
    steps = spike_train.shape[0]
    seg = truncate or steps
    if seg < 1 or steps % seg:
        raise ConfigError(f"truncation interval {seg} must divide T={steps}")
    batch = spike_train.shape[1]
    if state is None:
        state = init_neuron_state(batch, arch, rng, dropout=rng is not None)
    if surrogate.family == "stdb" and surrogate.lut is None:
        surrogate = surrogate.with_lut(state.t + steps - 1, state.out.u.dtype)
    grads = GradientAccumulator(arch.weight_names)
    peak_len, peak_bytes = 0, 0
    loss, u = float("nan"), None
    for start in range(0, steps, seg):
        u, rec = snn_forward(params, arch, spike_train[start:start + seg], state, leak)
        loss, g = softmax_cross_entropy(u, targets)
        peak_len = max(peak_len, len(rec))
        peak_bytes = max(peak_bytes, rec.nbytes())
        grads.merge(stdb_backward(rec, params, arch, g, surrogate, leak))
        del rec
    info = {"loss": loss, "u_out": u, "state": state, "peak_record_len": peak_len,
            "peak_record_bytes": peak_bytes}
    return grads, info


# -- SNN evaluation and STDB training ----------------------------------------

def evaluate_snn(params: NetworkParams, arch: ArchitectureSpec, images, labels, timesteps: int,
                 seed, leak: float = 1.0, batch_size: int = 100, sample_ids=None):
    """Return ``(accuracy, spike_counts, u_out)`` of a rate-coded simulation."""
    u, counts = simulate(params, arch, images, timesteps, seed, leak, sample_ids, batch_size)
    acc = float(np.mean(np.argmax(u, axis=1) == np.asarray(labels))) if len(labels) else 0.0
    return acc, counts, u


def _eval_subset(n: int, k: int | None, seed: int) -> np.ndarray:
    if k is None or k >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng([seed, 7]).choice(n, size=k, replace=False))


def train_stdb(params: NetworkParams, arch: ArchitectureSpec, train_data, cfg: TrainConfig,
               test_data=None, sink: MetricsSink | None = None):
    """Fine-tune a converted SNN with spike-timing-dependent backpropagation.

    Thresholds come from conversion and are held fixed. Each mini-batch gets
    fresh neuron state and dropout masks, a Poisson train keyed by
    ``(seed, epoch)``, a truncated or full BPTT pass and one optimiser step
    on the summed gradient. Returns ``(params, history)``.
    """
    check_params(params, arch, need_thresholds=True)
    params = params.copy()
    thresholds = dict(params.thresholds)
    images, labels = train_data
    ss = np.random.SeedSequence([cfg.seed, 2])
    order_rng, mask_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    surrogate = cfg.surrogate_config().with_lut(cfg.timesteps)
    opt = make_optimizer(cfg)
    n_train = len(labels) if cfg.max_train_samples is None else min(cfg.max_train_samples, len(labels))
    history = []
    test_idx = None
    if test_data is not None:
        test_idx = _eval_subset(len(test_data[1]), cfg.eval_samples, cfg.seed)
    for epoch in range(1, cfg.epochs + 1):
        _set_lr(opt, cfg, epoch - 1)
        t_start = time.perf_counter()
        total_loss, correct, seen = 0.0, 0, 0
        counts = {p: 0 for p in arch.populations}
        order = order_rng.permutation(len(labels))[:n_train]
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = images[idx], labels[idx]
            train = poisson_encode(x, cfg.timesteps, (cfg.seed, 1, epoch), idx)
            state = init_neuron_state(len(idx), arch, mask_rng, dropout=True)
            grads, info = truncated_bptt_step(params, arch, train, y, surrogate, cfg.leak,
                                              cfg.truncate, state)
            if not (np.isfinite(info["loss"]) and grads.is_finite()):
                raise TrainingDivergedError(
                    f"STDB loss {info['loss']} / non-finite gradients in epoch {epoch} "
                    f"after {seen} samples; lr={cfg.lr}, alpha={cfg.alpha}")
            grads.clip(cfg.clip_norm)
            optimizer_step(params, grads, opt)
            total_loss += info["loss"] * len(idx)
            correct += int(np.sum(np.argmax(info["u_out"], axis=1) == y))
            seen += len(idx)
            for p, c in state.spike_counts.items():
                counts[p] += c
        rec = {"phase": "stdb", "epoch": epoch, "split": "train",
               "accuracy": correct / max(seen, 1), "loss": total_loss / max(seen, 1),
               "seconds": time.perf_counter() - t_start}
        rec.update(_avg_spikes(arch, counts, seen))
        history.append(rec)
        if sink:
            sink(rec)
        if test_data is not None:
            ti, tl = test_data
            acc, tcounts, _ = evaluate_snn(params, arch, ti[test_idx], tl[test_idx],
                                           cfg.timesteps, cfg.seed, cfg.leak,
                                           cfg.eval_batch_size, test_idx)
            rec = {"phase": "stdb", "epoch": epoch, "split": "test", "accuracy": acc}
            rec.update(_avg_spikes(arch, tcounts, len(test_idx)))
            history.append(rec)
            if sink:
                sink(rec)
    if params.thresholds != thresholds:
        raise AssertionError("thresholds changed during STDB training")
    return params, history


def _avg_spikes(arch: ArchitectureSpec, counts: dict, samples: int) -> dict:
    out = {}
    for p in arch.populations:
        neurons = int(np.prod(arch.population_shape(p)))
        out[f"avg_spikes_{p}"] = counts.get(p, 0) / max(neurons * samples, 1)
    return out
