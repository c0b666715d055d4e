"""Central finite-difference oracle for backward()."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, backward, record_branches

MIN_STEP = 1e-9


@dataclass
class GradCheckReport:
    """Worst relative error per parameter.

    ``n_refined`` counts coordinates whose +-step interval crossed a kink of
    relu/abs/clip, so the difference was retaken with a smaller step;
    ``n_on_kink`` counts coordinates still crossing one at ``MIN_STEP``
    (genuinely non-differentiable there), which are left out of the maximum.
    """

    max_rel_error: float
    tolerance: float
    per_param: dict = field(default_factory=dict)
    n_checked: int = 0
    n_refined: int = 0
    n_on_kink: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self):
        return max(self.per_param.items(), key=lambda kv: kv[1], default=(None, 0.0))


def relative_error(a, n, floor=1e-3):
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(loss_fn, params, tolerance=1e-4, step=1e-5, max_entries=None,
                      seed=0, analytic=None, floor=1e-3) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` with central differences.

    ``loss_fn`` maps a dict of name -> Tensor to a scalar Tensor. With
    ``max_entries`` set, that many randomly chosen coordinates per parameter
    are probed instead of all of them. ``analytic`` overrides the gradients
    under test (used for negative controls).

    A central difference is only meaningful when f is smooth on
    [x - step, x + step]. The branch patterns of all piecewise ops are
    compared at x, x + step and x - step; when they differ, the step is
    divided by 10 until they agree.
    """
    if analytic is None:
        leaves = params.leaves()
        analytic = backward(loss_fn(leaves), leaves)
    rng = np.random.default_rng(seed)
    base = {k: np.array(v) for k, v in params.items()}
    report = GradCheckReport(0.0, tolerance)

    def value():
        with record_branches() as pattern:
            out = float(loss_fn({k: Tensor(v) for k, v in base.items()}).data)
        return out, pattern

    _, base_pattern = value()

    for name, arr in base.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        g = np.asarray(analytic[name]).reshape(-1)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            h = step
            while True:
                flat[i] = orig + h
                fp, pp = value()
                flat[i] = orig - h
                fm, pm = value()
                flat[i] = orig
                smooth = pp == base_pattern and pm == base_pattern
                if smooth or h / 10.0 < MIN_STEP:
                    break
                h /= 10.0
            if h != step:
                report.n_refined += 1
            if not smooth:
                report.n_on_kink += 1
                continue
            num = (fp - fm) / (2.0 * h)
            worst = max(worst, float(relative_error(g[i], num, floor)))
        report.per_param[name] = worst
        report.n_checked += idx.size
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
