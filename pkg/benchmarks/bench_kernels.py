"""Compare the compiled kernels with the numpy fallback.

Times each hot kernel on encoder-sized shapes, plus one full APC
forward/backward over a minibatch, for every available backend. Also
reports the largest absolute difference between the backends' outputs.

    python benchmarks/bench_kernels.py [--repeats N] [--model small|mid|large]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fssl.model import ApcConfig, apc_batch_loss, init_apc
from fssl.numerics import kernels
from fssl.numerics.tensor import backward

MODELS = {
    "small": ((8, 8, 16, 16, 16), 16),
    "mid": ((16, 16, 32, 32, 32), 32),
    "large": ((32, 32, 64, 64, 64), 64),
}


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def kernel_cases(rng, channels, units, frames=198, mels=20, batch=16):
    c0 = channels[0]
    xp = rng.standard_normal((batch, 1, frames + 2, mels + 2))
    w = rng.standard_normal((c0, 1, 3, 3)) * 0.3
    b = np.zeros(c0)
    ho, wo = (frames + 1) // 2, (mels + 1) // 2
    gy = rng.standard_normal((batch, c0, ho, wo))
    xp2 = rng.standard_normal((batch, channels[2], 27, 4))
    w2 = rng.standard_normal((channels[3], channels[2], 3, 1)) * 0.2
    gy2 = rng.standard_normal((batch, channels[3], 13, 4))
    d = channels[-1] * 3
    x = rng.standard_normal((batch, 7, d))
    wx = rng.standard_normal((d, 4 * units)) * 0.1
    wh = rng.standard_normal((units, 4 * units)) * 0.1
    lb = np.zeros(4 * units)
    ghs = rng.standard_normal((batch, 7, units))

    def lstm_bwd(k):
        hs, cache = k.lstm_forward(x, wx, wh, lb)
        return k.lstm_backward(x, wx, wh, hs, cache, ghs)

    return [
        ("conv2d_forward 3x3 s(2,2)", lambda k: k.conv2d_forward(xp, w, b, 2, 2)),
        ("conv2d_backward 3x3 s(2,2)", lambda k: k.conv2d_backward(xp, w, gy, 2, 2)),
        ("conv2d_forward 3x1 s(2,1)", lambda k: k.conv2d_forward(xp2, w2, np.zeros(w2.shape[0]), 2, 1)),
        ("conv2d_backward 3x1 s(2,1)", lambda k: k.conv2d_backward(xp2, w2, gy2, 2, 1)),
        ("lstm_forward", lambda k: k.lstm_forward(x, wx, wh, lb)),
        ("lstm_forward+backward", lstm_bwd),
    ]


def max_diff(a, b):
    if isinstance(a, (tuple, list)):
        return max(max_diff(u, v) for u, v in zip(a, b))
    if isinstance(a, dict):
        return max(max_diff(a[k], b[k]) for k in a)
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--model", choices=sorted(MODELS), default="mid")
    ap.add_argument("--batch", type=int, default=16)
    args = ap.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    channels, units = MODELS[args.model]
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)}; model={args.model}; best of {args.repeats}")
    print(f"{'kernel':<30s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}{'max|diff|':>12s}")

    for name, fn in kernel_cases(rng, channels, units, batch=args.batch):
        times, outs = {}, {}
        for b in backends:
            times[b], outs[b] = best_of(lambda: fn(kernels.BACKENDS[b]), args.repeats)
        _report(name, backends, times, outs)

    apc = ApcConfig(conv_channels=channels, lstm_units=units)
    params = init_apc(apc, 0)
    batch = [rng.standard_normal((198, apc.input_mels)) for _ in range(args.batch)]

    def step():
        leaves = params.leaves()
        loss = apc_batch_loss(leaves, batch, apc, reduction="mean")
        grads = backward(loss, leaves)
        return float(loss.data), grads

    times, outs = {}, {}
    prev = kernels.BACKEND
    try:
        for b in backends:
            kernels.use(b)
            times[b], outs[b] = best_of(step, args.repeats)
    finally:
        kernels.use(prev)
    _report(f"APC step, {args.batch} clips", backends, times, outs)


def _report(name, backends, times, outs):
    speed = ""
    diff = ""
    if len(backends) > 1:
        speed = f"{times['python'] / times['cython']:>9.2f}x"
        diff = f"{max_diff(outs['python'], outs['cython']):>12.1e}"
    print(f"{name:<30s}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends) + speed + diff)


if __name__ == "__main__":
    main()
