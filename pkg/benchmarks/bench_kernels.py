"""Compare the compiled kernels with the NumPy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each case runs on both backends with identical inputs; the table shows the
best-of-``repeat`` wall time and the speedup of the compiled path. Outputs
are checked for equality before timing.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from hybrid_snn import _kernels as K
from hybrid_snn.network import init_neuron_state, init_params, vgg5
from hybrid_snn.encoding import poisson_encode


def _lif_forward(rng, dtype):
    cur = rng.normal(0.3, 0.5, size=(50, 64 * 8 * 28 * 28 // 8)).astype(dtype)
    n = cur.shape[1]

    def run():
        u = np.zeros(n, dtype)
        s = np.full(n, -1000, np.int32)
        prev = np.zeros(n, dtype)
        return K.lif_forward_scan(cur, u, s, prev, 1.0, 0.99, 1)[:3]
    return run


def _lif_backward(rng, dtype, family):
    cur = rng.normal(0.3, 0.5, size=(50, 50_000)).astype(dtype)
    n = cur.shape[1]
    _, u_rec, s_rec, _, _ = K.lif_forward_scan(cur, np.zeros(n, dtype), np.full(n, -1000, np.int32),
                                               np.zeros(n, dtype), 1.0, 0.99, 1)
    g = rng.normal(size=cur.shape).astype(dtype)
    lut = (0.3 * np.exp(-0.1 * np.arange(50 + 1001))).astype(dtype) if family == K.FAMILY_STDB else None

    def run():
        return K.lif_backward_scan(g, u_rec, s_rec, 1.0, 0.99, 1, family, 0.3, 0.1, lut,
                                   np.zeros(n, dtype))
    return run


def _im2col(rng, dtype):
    x = rng.random((64, 8, 28, 28)).astype(dtype)
    return lambda: K.im2col(x, 3, 1, 1)


def _col2im(rng, dtype):
    cols = rng.random((8 * 9, 64 * 28 * 28)).astype(dtype)
    return lambda: K.col2im(cols, (64, 8, 28, 28), 3, 1, 1)


def _avgpool(rng, dtype):
    x = rng.random((20 * 64, 16, 14, 14)).astype(dtype)
    return lambda: K.avgpool(x, 2)


def _snn_forward(rng, dtype):
    from hybrid_snn.network import snn_forward

    arch = vgg5()
    params = init_params(arch, rng)
    params.thresholds = {p: 1.0 for p in arch.populations}
    train = poisson_encode(rng.random((32, 1, 28, 28)), 20, 0)

    def run():
        state = init_neuron_state(32, arch, dropout=False)
        u, _ = snn_forward(params, arch, train, state, 0.99, record=False)
        return u
    return run


CASES = {
    "lif_forward_f32": lambda rng: _lif_forward(rng, np.float32),
    "lif_forward_f64": lambda rng: _lif_forward(rng, np.float64),
    "lif_backward_stdb_f32": lambda rng: _lif_backward(rng, np.float32, K.FAMILY_STDB),
    "lif_backward_linear_f32": lambda rng: _lif_backward(rng, np.float32, K.FAMILY_LINEAR),
    "im2col_f32": lambda rng: _im2col(rng, np.float32),
    "col2im_f32": lambda rng: _col2im(rng, np.float32),
    "avgpool_f32": lambda rng: _avgpool(rng, np.float32),
    "snn_forward_vgg5_T20_b32": lambda rng: _snn_forward(rng, np.float32),
}


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    if a is None or b is None:
        return a is b
    return np.array_equal(a, b)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--only", nargs="*", help="subset of case names")
    parser.add_argument("--json", help="write results to this file")
    args = parser.parse_args(argv)
    if "compiled" not in K.available_backends():
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    results = []
    print(f"{'case':28s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}  equal")
    for name, make in CASES.items():
        if args.only and name not in args.only:
            continue
        row = {"case": name}
        outs = {}
        for backend in ("python", "compiled"):
            previous = K.use_backend(backend)
            try:
                fn = make(np.random.default_rng(0))
                row[backend], outs[backend] = _best(fn, args.repeat)
            finally:
                K.use_backend(previous)
        row["speedup"] = row["python"] / row["compiled"]
        row["equal"] = bool(_same(outs["python"], outs["compiled"]))
        results.append(row)
        print(f"{name:28s} {1e3 * row['python']:10.2f} {1e3 * row['compiled']:12.2f} "
              f"{row['speedup']:7.1f}x  {row['equal']}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return results


if __name__ == "__main__":
    main()
