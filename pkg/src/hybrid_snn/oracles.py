"""Independent reference implementations used to validate the fast paths.

Nothing here shares code with the kernels, the layer-wise simulator or the
reverse-mode backward pass:

* ``naive_*`` ops are explicit index loops.
* :func:`unrolled_gradient` simulates one sample at a time, step-major, and
  carries forward-mode tangents for every parameter at once. It is the
  chain rule written out literally, with the surrogate replacing the spike
  derivative, so agreement with :func:`hybrid_snn.training.stdb_backward`
  checks the adjoint recurrence, the reset path and the weight products.
* :func:`finite_difference` is central differencing in 64-bit.

:func:`run_suites` bundles the checks for the ``gradcheck`` command.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .network import (ArchitectureSpec, AvgPool, Conv, Dropout, Linear, NetworkParams,
                      ResidualBlock, ann_forward, init_neuron_state, init_params, snn_forward)
from .neuron import (NEVER_SPIKED, LifState, NeuronConfig, SurrogateConfig, build_lut, lif_scan,
                     stdb_surrogate)
from .tensor import precision, softmax_cross_entropy


# -- naive tensor ops --------------------------------------------------------

def naive_matmul(x, W):
    """``y[..., i] = sum_j W[..., i, j] x[..., j]`` by explicit loops."""
    x = np.asarray(x)
    W = np.asarray(W)
    n_out, n_in = W.shape[-2:]
    lead = np.broadcast_shapes(x.shape[:-1], W.shape[:-2])
    y = np.zeros(lead + (n_out,), dtype=np.result_type(x, W))
    for i in range(n_out):
        for j in range(n_in):
            y[..., i] += W[..., i, j] * x[..., j]
    return y


def naive_conv2d(x, W, stride=1, padding=0):
    """Zero-padded cross-correlation of a (..., C, H, W) tensor, one tap at a time."""
    x = np.asarray(x)
    W = np.asarray(W)
    c_out, c_in, k, _ = W.shape[-4:]
    h, w = x.shape[-2:]
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    lead = np.broadcast_shapes(x.shape[:-3], W.shape[:-4])
    y = np.zeros(lead + (c_out, ho, wo), dtype=np.result_type(x, W))
    for o in range(c_out):
        for oy in range(ho):
            for ox in range(wo):
                for c in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            iy = oy * stride + i - padding
                            ix = ox * stride + j - padding
                            if 0 <= iy < h and 0 <= ix < w:
                                y[..., o, oy, ox] += W[..., o, c, i, j] * x[..., c, iy, ix]
    return y


def naive_avgpool(x, k):
    x = np.asarray(x)
    h, w = x.shape[-2:]
    y = np.zeros(x.shape[:-2] + (h // k, w // k), dtype=x.dtype)
    for oy in range(h // k):
        for ox in range(w // k):
            acc = 0
            for i in range(k):
                for j in range(k):
                    acc = acc + x[..., oy * k + i, ox * k + j]
            y[..., oy, ox] = acc / (k * k)
    return y


# -- forward-mode unrolled SNN -----------------------------------------------

def _surrogate(family, u, s, t, v, alpha, beta):
    if family == "stdb":
        return alpha * math.exp(-beta * (t - s))
    if family == "linear":
        return alpha * max(0.0, 1.0 - abs(u - v))
    return alpha * math.exp(-beta * abs(u - v))


def _lif_tangent(u, du, prev, dprev, s, current, dcurrent, t, v, leak, sur):
    """One step of LIF dynamics for every neuron with parameter tangents.

    ``du``/``dprev``/``dcurrent`` carry a leading parameter axis. The spike
    itself is a hard threshold; its tangent uses the surrogate slope.
    """
    n = u.shape[0]
    spikes = np.zeros(n)
    dspikes = np.zeros_like(du)
    for i in range(n):
        u[i] = leak * u[i] + current[i] - v * prev[i]
        du[:, i] = leak * du[:, i] + dcurrent[:, i] - v * dprev[:, i]
        if u[i] > v:
            spikes[i] = 1.0
            s[i] = t
        sigma = _surrogate(sur.family, u[i], s[i], t, v, sur.alpha, sur.beta)
        dspikes[:, i] = sigma * du[:, i]
    prev[:] = spikes
    dprev[:] = dspikes
    return spikes, dspikes


def _weight_tangents(params: NetworkParams, arch: ArchitectureSpec):
    names = arch.weight_names
    sizes = [params.weights[n].size for n in names]
    total = sum(sizes)
    tangents, offset = {}, 0
    for name, size in zip(names, sizes):
        t = np.zeros((total, size))
        t[offset:offset + size] = np.eye(size)
        tangents[name] = t.reshape((total,) + params.weights[name].shape)
        offset += size
    return tangents, total


def unrolled_gradient(params: NetworkParams, arch: ArchitectureSpec, spike_train, targets,
                      surrogate: SurrogateConfig, leak: float = 1.0, masks: dict | None = None):
    """dL/dW of the mean cross-entropy on the final output potentials.

    ``spike_train`` is (T, batch, *input_shape); ``masks`` maps dropout node
    indices to per-batch masks. Returns ``(loss, {name: grad})``.
    """
    masks = masks or {}
    train = np.asarray(spike_train, dtype=np.float64)
    steps, batch = train.shape[:2]
    weights = {k: np.asarray(w, dtype=np.float64) for k, w in params.weights.items()}
    tangents, total = _weight_tangents(params, arch)
    u_out_all = np.zeros((batch, arch.num_classes))
    du_out_all = np.zeros((batch, total, arch.num_classes))
    for b in range(batch):
        state = {}
        for node in arch.nodes:
            for pop in node.populations:
                n = int(np.prod(node.out_shape))
                state[pop] = [np.zeros(n), np.zeros((total, n)), np.zeros(n),
                              np.zeros((total, n)), np.full(n, float(NEVER_SPIKED))]
        u_out = np.zeros(arch.num_classes)
        du_out = np.zeros((total, arch.num_classes))
        for k in range(steps):
            t = k + 1
            x = train[k, b]
            dx = np.zeros((total,) + x.shape)
            for node in arch.nodes:
                layer = node.layer
                if isinstance(layer, (Conv, Linear)):
                    name = node.weights[0]
                    W, dW = weights[name], tangents[name]
                    if node.convs:
                        spec = node.convs[0]
                        cur = naive_conv2d(x, W, spec.stride, spec.padding)
                        dcur = (naive_conv2d(dx, W, spec.stride, spec.padding)
                                + naive_conv2d(x, dW, spec.stride, spec.padding))
                    else:
                        xf, dxf = x.reshape(-1), dx.reshape(total, -1)
                        cur = naive_matmul(xf, W)
                        dcur = naive_matmul(dxf, W) + naive_matmul(xf, dW)
                    if node.is_output:
                        u_out = u_out + cur
                        du_out = du_out + dcur
                        continue
                    st = state[name]
                    spikes, dspikes = _lif_tangent(
                        st[0], st[1], st[2], st[3], st[4], cur.reshape(-1),
                        dcur.reshape(total, -1), t, params.thresholds[name], leak, surrogate)
                    x = spikes.reshape(node.out_shape)
                    dx = dspikes.reshape((total,) + node.out_shape)
                elif isinstance(layer, ResidualBlock):
                    pa, pb = node.weights
                    ca = naive_conv2d(x, weights[pa], 1, 1)
                    dca = naive_conv2d(dx, weights[pa], 1, 1) + naive_conv2d(x, tangents[pa], 1, 1)
                    st = state[pa]
                    oa, doa = _lif_tangent(st[0], st[1], st[2], st[3], st[4], ca.reshape(-1),
                                           dca.reshape(total, -1), t, params.thresholds[pa],
                                           leak, surrogate)
                    oa = oa.reshape(node.out_shape)
                    doa = doa.reshape((total,) + node.out_shape)
                    cb = naive_conv2d(oa, weights[pb], 1, 1) + x
                    dcb = (naive_conv2d(doa, weights[pb], 1, 1)
                           + naive_conv2d(oa, tangents[pb], 1, 1) + dx)
                    st = state[pb]
                    ob, dob = _lif_tangent(st[0], st[1], st[2], st[3], st[4], cb.reshape(-1),
                                           dcb.reshape(total, -1), t, params.thresholds[pb],
                                           leak, surrogate)
                    x = ob.reshape(node.out_shape)
                    dx = dob.reshape((total,) + node.out_shape)
                elif isinstance(layer, AvgPool):
                    x, dx = naive_avgpool(x, layer.k), naive_avgpool(dx, layer.k)
                elif isinstance(layer, Dropout):
                    mask = masks.get(node.index)
                    if mask is not None:
                        m = np.asarray(mask[b], dtype=np.float64)
                        x, dx = x * m, dx * m
        u_out_all[b] = u_out
        du_out_all[b] = du_out
    z = u_out_all - u_out_all.max(axis=1, keepdims=True)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    targets = np.asarray(targets)
    loss = float(-np.mean(np.log(p[np.arange(batch), targets])))
    g = p.copy()
    g[np.arange(batch), targets] -= 1.0
    g /= batch
    flat = np.einsum("bj,bpj->p", g, du_out_all)
    grads, offset = {}, 0
    for name in arch.weight_names:
        size = params.weights[name].size
        grads[name] = flat[offset:offset + size].reshape(params.weights[name].shape)
        offset += size
    return loss, grads


# -- finite differences ------------------------------------------------------

def finite_difference(loss_fn, params: NetworkParams, name: str, h: float = 1e-5,
                      indices=None) -> np.ndarray:
    """Central differences of ``loss_fn(params)`` for entries of weight ``name``.

    Returns an array shaped like the weight; entries not in ``indices`` are
    left at zero.
    """
    W = params.weights[name]
    out = np.zeros(W.shape, dtype=np.float64)
    flat = W.reshape(-1)
    idx = range(W.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        plus = loss_fn(params)
        flat[i] = orig - h
        minus = loss_fn(params)
        flat[i] = orig
        out.reshape(-1)[i] = (plus - minus) / (2 * h)
    return out


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


# -- toy networks ------------------------------------------------------------

def toy_architecture(rng: np.random.Generator) -> ArchitectureSpec:
    """A random net with at most three weight layers and at most 50 weights."""
    kind = int(rng.integers(4))
    if kind == 0:
        layers, shape = (Linear(int(rng.integers(3, 6))), Linear(3)), (int(rng.integers(4, 7)),)
    elif kind == 1:
        layers = (Linear(4), Dropout(0.25), Linear(3), Linear(2))
        shape = (int(rng.integers(3, 6)),)
    elif kind == 2:
        layers, shape = (Conv(1, kernel=3, padding=1), AvgPool(2), Linear(3)), (1, 4, 4)
    else:
        layers, shape = (Conv(2, kernel=2, stride=2, padding=0), Linear(3)), (1, 4, 4)
    arch = ArchitectureSpec(layers, layers[-1].out, shape, f"toy{kind}")
    assert len(arch.weight_names) <= 3
    assert sum(int(np.prod(arch.weight_shape(n))) for n in arch.weight_names) <= 50
    return arch


def toy_problem(seed: int):
    """Random toy net, float64 weights and thresholds, spike train, targets and masks."""
    rng = np.random.default_rng(seed)
    arch = toy_architecture(rng)
    with precision(64):
        params = init_params(arch, rng)
        for name in params.weights:
            params.weights[name] = params.weights[name] * 1.5
        params.thresholds = {p: float(rng.uniform(0.3, 1.2)) for p in arch.populations}
        steps = int(rng.integers(4, 11))
        batch = int(rng.integers(1, 4))
        train = (rng.random((steps, batch) + arch.input_shape) < 0.6).astype(np.float64)
        targets = rng.integers(arch.num_classes, size=batch)
        state = init_neuron_state(batch, arch, rng, dropout=True)
    return arch, params, train, targets, state


def separable_task(seed: int = 0, n: int = 400, n_test: int = 100):
    """Two noisy clusters in [0, 1]^6 and a 6-8-2 net.

    Returns ``(arch, (x_train, y_train), (x_test, y_test))``.
    """
    rng = np.random.default_rng(seed)
    centers = np.array([[0.8, 0.2, 0.7, 0.1, 0.3, 0.6], [0.2, 0.8, 0.1, 0.7, 0.6, 0.3]])
    y = rng.integers(2, size=n)
    x = np.clip(centers[y] + rng.normal(0, 0.15, (n, 6)), 0, 1)
    arch = ArchitectureSpec((Linear(8), Linear(2)), 2, (6,), "separable")
    k = n - n_test
    return arch, (x[:k], y[:k]), (x[k:], y[k:])


# -- suites ------------------------------------------------------------------

@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: {self.value:.3e} (tolerance {self.tolerance:.0e}, "
                f"{self.seconds:.1f}s)")


def check_unrolled_oracle(n_nets: int = 20, seed: int = 0, families=("stdb", "linear", "exp"),
                          leak: float = 0.9) -> dict:
    """Max abs difference between reverse-mode and the unrolled oracle, per family."""
    from .training import stdb_backward

    worst = {}
    with precision(64):
        for family in families:
            sur = SurrogateConfig.default(family)
            if family == "exp":
                sur = SurrogateConfig(family, alpha=0.3, beta=1.0)
            diff = 0.0
            for k in range(n_nets):
                arch, params, train, targets, state = toy_problem(seed * 1000 + k)
                masks = dict(state.masks)
                u, rec = snn_forward(params, arch, train, state, leak)
                _, g = softmax_cross_entropy(u, targets)
                table = sur.with_lut(train.shape[0], np.float64)
                grads = stdb_backward(rec, params, arch, g, table, leak)
                _, ref = unrolled_gradient(params, arch, train, targets, sur, leak, masks)
                for name, gw in grads.items():
                    diff = max(diff, float(np.abs(gw - ref[name]).max()))
            worst[family] = diff
    return worst


def snn_loss(params, arch, train, targets, leak=1.0, masks=None):
    state = init_neuron_state(train.shape[1], arch, dropout=False)
    state.masks = dict(masks or {})
    u, _ = snn_forward(params, arch, train, state, leak, record=False)
    return softmax_cross_entropy(u, targets)[0]


def check_output_layer_fd(n_nets: int = 5, seed: int = 1, h: float = 1e-5) -> float:
    """Worst relative error of output-weight gradients against central differences."""
    from .training import stdb_backward

    worst = 0.0
    with precision(64):
        for k in range(n_nets):
            arch, params, train, targets, state = toy_problem(seed * 1000 + k)
            masks = dict(state.masks)
            u, rec = snn_forward(params, arch, train, state, 0.95)
            _, g = softmax_cross_entropy(u, targets)
            grads = stdb_backward(rec, params, arch, g, SurrogateConfig().with_lut(
                train.shape[0], np.float64), 0.95)
            fd = finite_difference(lambda p: snn_loss(p, arch, train, targets, 0.95, masks),
                                   params, "fc_out", h)
            worst = max(worst, relative_error(grads["fc_out"], fd))
    return worst


def check_ann_fd(seed: int = 2, h: float = 1e-5, samples: int = 8) -> float:
    """Worst relative error of the ANN backward pass on sampled weight entries."""
    from .training import ann_backward

    rng = np.random.default_rng(seed)
    arch = ArchitectureSpec((Conv(2), AvgPool(2), Conv(3, stride=2, padding=1), Dropout(0.3),
                             Linear(5), Linear(3)), 3, (1, 6, 6), "gradcheck")
    worst = 0.0
    with precision(64):
        params = init_params(arch, rng)
        x = rng.random((4,) + arch.input_shape)
        y = rng.integers(3, size=4)
        node = arch.nodes[3]
        masks = {3: (rng.random((4,) + node.in_shape) > 0.3) / 0.7}
        logits, cache = ann_forward(params, arch, x, masks, keep_cache=True)
        _, g = softmax_cross_entropy(logits, y)
        grads = ann_backward(params, arch, cache, g, masks)

        def loss(p):
            return softmax_cross_entropy(ann_forward(p, arch, x, masks)[0], y)[0]

        for name, gw in grads.items():
            idx = rng.choice(gw.size, size=min(samples, gw.size), replace=False)
            fd = finite_difference(loss, params, name, h, idx)
            worst = max(worst, relative_error(gw.reshape(-1)[idx], fd.reshape(-1)[idx]))
    return worst


def check_conservation(n_trials: int = 20, seed: int = 3) -> float:
    """Worst violation of ``sum_t I[t] = u[T] + v * spikes`` at unit leak.

    The reset lags its spike by one step, so ``u[T]`` is taken after the
    pending reset of the last step, ``u[T] - v * o[T]``.

    Covers isolated populations driven by random currents and every hidden
    population of random toy nets driven by random spike trains; currents in
    the nets are recomputed from the recorded layer inputs with naive ops.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0

    def violation(currents, u_final, v, spikes):
        spikes = np.asarray(spikes, dtype=np.float64)
        lhs = np.asarray(currents, dtype=np.float64).sum(axis=0)
        settled = np.asarray(u_final, dtype=np.float64) - v * spikes[-1]
        rhs = settled + v * spikes.sum(axis=0)
        return float(np.abs(lhs - rhs).max() / max(1.0, np.abs(lhs).max()))

    for k in range(n_trials):
        steps, n = int(rng.integers(5, 60)), int(rng.integers(1, 40))
        v = float(rng.uniform(0.2, 2.0))
        cur = rng.normal(0.3, 1.0, (steps, n)).astype(np.float32)
        state = LifState.zeros((n,), np.float32)
        spikes, _, _, _ = lif_scan(state, cur, NeuronConfig(1.0, v), 1)
        worst = max(worst, violation(cur, state.u, v, spikes))

        arch, params, train, _, state = toy_problem(seed * 1000 + k)
        with precision(64):
            _, rec = snn_forward(params, arch, train, state, 1.0)
        for node in arch.nodes:
            if node.is_output or not node.populations:
                continue
            x = rec.inputs if node.index == 0 else rec.outputs[node.index - 1]
            W = params.weights[node.weights[0]]
            if node.convs:
                spec = node.convs[0]
                cur = naive_conv2d(x, W, spec.stride, spec.padding)
            else:
                cur = naive_matmul(x.reshape(x.shape[:2] + (-1,)), W)
            pop = node.weights[0]
            spikes = rec.spikes(pop)
            cur = cur.reshape(spikes.shape)
            worst = max(worst, violation(cur, state.lif[pop].u, params.thresholds[pop], spikes))
    return worst


def check_lut_bitwise(timesteps: int = 100, alpha: float = 0.3, beta: float = 0.01) -> bool:
    """The spike-time table equals direct evaluation bit for bit."""
    ok = True
    for dtype in (np.float32, np.float64):
        with precision(32 if dtype == np.float32 else 64):
            lut = build_lut(alpha, beta, timesteps, dtype)
            s = np.concatenate([[NEVER_SPIKED], np.arange(1, timesteps + 1)])
            for t in range(1, timesteps + 1):
                sv = s[s <= t]
                direct = stdb_surrogate(t, sv, SurrogateConfig("stdb", alpha, beta))
                ok &= bool(np.array_equal(lut[t - sv], direct))
    return ok


def run_suites(seed: int = 0, n_nets: int = 20) -> list:
    """Run every oracle comparison; returns a list of :class:`CheckResult`."""
    results = []
    start = time.perf_counter()
    worst = check_unrolled_oracle(n_nets, seed)
    elapsed = time.perf_counter() - start
    for family, diff in worst.items():
        results.append(CheckResult(f"unrolled-oracle[{family}]", diff < 1e-6, diff, 1e-6,
                                   elapsed / len(worst)))
    for name, fn, tol in (("output-layer-fd", lambda: check_output_layer_fd(seed=seed + 1), 1e-4),
                          ("ann-fd", lambda: check_ann_fd(seed + 2), 1e-4),
                          ("conservation", lambda: check_conservation(seed=seed + 3), 1e-4)):
        start = time.perf_counter()
        value = fn()
        results.append(CheckResult(name, value < tol, value, tol, time.perf_counter() - start))
    start = time.perf_counter()
    ok = check_lut_bitwise()
    results.append(CheckResult("stdb-table-bitwise", ok, 0.0 if ok else 1.0, 0.0,
                               time.perf_counter() - start))
    return results
