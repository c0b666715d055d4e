"""Finite-difference oracle suite: every layer type plus both composed training losses."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .model import (ApcConfig, ClassifierConfig, apc_forward_loss, classify, encode, init_apc,
                    init_classifier, scaled_bce)
from .numerics import layers
from .numerics.gradcheck import GradCheckReport, finite_diff_check
from .numerics.params import ParamSet
from .numerics.tensor import Tensor, mul, tsum


@dataclass
class OracleResult:
    name: str
    report: GradCheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        name, err = self.report.worst()
        return (f"{status} {self.name:<28s} max_rel_err={self.report.max_rel_error:.3e} "
                f"(worst {name}) checked={self.report.n_checked} refined={self.report.n_refined} "
                f"on_kink={self.report.n_on_kink} {self.seconds:.2f}s")


def _jitter(params: ParamSet, rng, scale=0.1) -> ParamSet:
    # Moves every pre-activation off exact zeros (zero-initialized biases would
    # otherwise sit on ReLU kinks, where central differences are meaningless).
    return params.replace({k: v + scale * rng.standard_normal(v.shape) for k, v in params.items()})


def _projection(rng, shape):
    return rng.standard_normal(shape)


def _layer_cases(rng):
    """(name, params, loss_fn) for each differentiable layer on small random shapes."""
    cases = []

    x = rng.standard_normal((2, 3, 9, 7))
    w = rng.standard_normal((4, 3, 3, 3)) * 0.3
    b = rng.standard_normal(4) * 0.1
    out_shape = (2, 4, 5, 7)
    proj = _projection(rng, out_shape)
    p = ParamSet({"x": x, "w": w, "b": b}, {"x": "enc", "w": "enc", "b": "enc"})
    cases.append(("conv2d stride (2,1)", p,
                  lambda t, proj=proj: tsum(mul(layers.conv2d(t["x"], t["w"], t["b"], (2, 1)), proj))))

    x = rng.standard_normal((2, 8, 5))
    w = rng.standard_normal((3, 5, 3)) * 0.3
    b = rng.standard_normal(3) * 0.1
    proj = _projection(rng, (2, 8, 3))
    p = ParamSet({"x": x, "w": w, "b": b}, {"x": "dec", "w": "dec", "b": "dec"})
    cases.append(("conv1d", p, lambda t, proj=proj: tsum(mul(layers.conv1d(t["x"], t["w"], t["b"]), proj))))

    x = rng.standard_normal((4, 6))
    w, b = rng.standard_normal((6, 3)), rng.standard_normal(3)
    proj = _projection(rng, (4, 3))
    p = ParamSet({"x": x, "w": w, "b": b}, {"x": "cls", "w": "cls", "b": "cls"})
    cases.append(("dense", p, lambda t, proj=proj: tsum(mul(layers.dense(t["x"], t["w"], t["b"]), proj))))

    d, h = 5, 4
    wx, wh, lb = layers.init_lstm(rng, d, h)
    p = _jitter(ParamSet({"x": rng.standard_normal((2, 6, d)), "wx": wx, "wh": wh, "b": lb},
                         {"x": "enc", "wx": "enc", "wh": "enc", "b": "enc"}), rng)
    proj = _projection(rng, (2, 6, h))
    cases.append(("lstm_sequence (fused)", p,
                  lambda t, proj=proj: tsum(mul(layers.lstm_sequence(t["x"], t["wx"], t["wh"], t["b"]), proj))))

    def stepped(t, proj=proj):
        n, steps = 2, 6
        hs, c = Tensor(np.zeros((n, h))), Tensor(np.zeros((n, h)))
        total = None
        for s in range(steps):
            hs, c = layers.lstm_step(t["x"][:, s, :], hs, c, t["wx"], t["wh"], t["b"])
            term = tsum(mul(hs, proj[:, s, :]))
            total = term if total is None else total + term
        return total

    cases.append(("lstm_step (composed)", p, stepped))
    return cases


def gradient_suite(apc: ApcConfig, cls: ClassifierConfig, seed: int = 0, n_frames: int = 198,
                   max_entries: int = 24, tolerance: float = 1e-4,
                   progress: Callable[[OracleResult], None] = None) -> List[OracleResult]:
    """Run every gradient oracle; each result carries its own pass/fail verdict.

    The composed losses run the full configured model on one clip of
    ``n_frames`` frames, probing ``max_entries`` random coordinates of every
    parameter tensor.
    """
    rng = np.random.default_rng(seed)
    results = []

    def record(name, params, loss_fn, entries=None):
        t0 = time.perf_counter()
        rep = finite_diff_check(loss_fn, params, tolerance=tolerance, max_entries=entries, seed=seed)
        res = OracleResult(name, rep, time.perf_counter() - t0)
        results.append(res)
        if progress is not None:
            progress(res)

    for name, params, fn in _layer_cases(rng):
        record(name, params, fn)

    x = rng.standard_normal((n_frames, apc.input_mels))
    apc_params = _jitter(init_apc(apc, seed), rng)
    record("apc_loss(decode(encode(x)))", apc_params, lambda t: apc_forward_loss(t, x, apc), max_entries)

    cls_params = _jitter(init_classifier(apc, cls, seed + 1), rng)
    enc = apc_params.select("enc")
    joint = enc.merge(cls_params)
    z = np.array([1.0])

    def cls_loss(t):
        h = encode(x, t, apc)
        return scaled_bce(classify(h, t), z, cls.scale_c)

    record("scaled_bce(classify(encode(x)))", joint, cls_loss, max_entries)
    return results
