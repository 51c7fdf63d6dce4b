"""Built-in correctness suite: finite differences, adjoints, AUROC and mask oracles.

``run_selftest`` needs no data or checkpoint and finishes well inside two
minutes on one core. ``mutate="conv_grad"`` deliberately corrupts the
convolution input gradient so the suite can be seen to fail.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional
from unittest import mock

import numpy as np

from .. import augment
from ..evalmetrics import auroc, auroc_exhaustive
from ..rcae import RcaeModel, rcae_loss
from ..tensorcore import Tensor, conv as conv_mod, gradcheck
from ..tensorcore import functional as F

OP_TOL = 1e-3
E2E_TOL = 1e-2


@dataclass
class Check:
    name: str
    value: float
    tol: float
    passed: bool


@dataclass
class SelftestReport:
    checks: List[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, value: float, tol: float, passed: Optional[bool] = None) -> None:
        self.checks.append(Check(name, float(value), tol, value <= tol if passed is None else passed))

    def render(self) -> str:
        lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name:<34} {c.value:.3e}  (tol {c.tol:g})"
                 for c in self.checks]
        lines.append(f"{sum(c.passed for c in self.checks)}/{len(self.checks)} passed in {self.seconds:.1f}s")
        return "\n".join(lines)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return x.astype(np.float32)


def _leaf(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float32), requires_grad=True)


def _op_cases(rng) -> List[tuple]:
    """(name, loss builder, leaves); every loss reduces through a fixed random projection."""
    cases = []

    def proj(shape):
        return Tensor(rng.standard_normal(shape).astype(np.float32))

    def add_case(name, fn, *leaves):
        out_shape = fn(*leaves).shape
        p = proj(out_shape)
        cases.append((name, lambda: F.sum_(F.mul(fn(*leaves), p)), list(leaves)))

    a, b = _leaf(rng.standard_normal((2, 3, 4, 4))), _leaf(rng.standard_normal((2, 3, 4, 4)))
    add_case("add", F.add, a, b)
    add_case("mul (broadcast)", F.mul, _leaf(rng.standard_normal((2, 3, 4, 4))), _leaf(rng.standard_normal((1, 3, 1, 1))))
    add_case("leaky_relu", lambda t: F.leaky_relu(t, 0.1), _leaf(_away_from_zero(rng, (2, 3, 4, 4))))
    add_case("sigmoid", F.sigmoid, _leaf(rng.standard_normal((2, 3, 4, 4)) * 2))
    add_case("concat", lambda s, t: F.concat([s, t], axis=1),
             _leaf(rng.standard_normal((2, 2, 3, 3))), _leaf(rng.standard_normal((2, 3, 3, 3))))
    add_case("stack", lambda s, t: F.stack([s, t], axis=2),
             _leaf(rng.standard_normal((2, 3, 4, 4))), _leaf(rng.standard_normal((2, 3, 4, 4))))
    add_case("mean", lambda t: F.mean(t, axis=2), _leaf(rng.standard_normal((2, 3, 4, 4, 4))))
    add_case("upsample_nearest", lambda t: F.upsample_nearest(t, 2), _leaf(rng.standard_normal((1, 2, 3, 3))))
    x = rng.uniform(0.1, 0.9, (2, 3, 6, 6)).astype(np.float32)
    add_case("spatial_gradient", F.spatial_gradient, _leaf(x))
    t = rng.uniform(0, 1, (2, 3, 5, 5)).astype(np.float32)
    cases.append(("l1_loss", (lambda y: lambda: F.l1_loss(Tensor(t), y))(y := _leaf(t + _away_from_zero(rng, t.shape))), [y]))
    cases.append(("l2_loss", (lambda y: lambda: F.l2_loss(Tensor(t), y))(y2 := _leaf(rng.uniform(0, 1, t.shape))), [y2]))

    add_case("conv2d s1 p1", lambda i, w, bb: conv_mod.conv2d(i, w, bb, stride=1, padding=1),
             _leaf(rng.standard_normal((2, 3, 6, 6))), _leaf(rng.standard_normal((4, 3, 3, 3)) * 0.3),
             _leaf(rng.standard_normal(4)))
    add_case("conv2d k2 s2", lambda i, w, bb: conv_mod.conv2d(i, w, bb, stride=2),
             _leaf(rng.standard_normal((2, 3, 6, 6))), _leaf(rng.standard_normal((3, 3, 2, 2)) * 0.3),
             _leaf(rng.standard_normal(3)))
    add_case("conv_transpose2d k2 s2", lambda i, w, bb: conv_mod.conv_transpose2d(i, w, bb, stride=2),
             _leaf(rng.standard_normal((2, 3, 3, 3))), _leaf(rng.standard_normal((3, 2, 2, 2)) * 0.3),
             _leaf(rng.standard_normal(2)))
    add_case("conv3d", lambda i, w, bb: conv_mod.conv3d(i, w, bb, stride=(1, 2, 2), padding=1),
             _leaf(rng.standard_normal((1, 2, 3, 4, 4))), _leaf(rng.standard_normal((3, 2, 3, 3, 3)) * 0.3),
             _leaf(rng.standard_normal(3)))
    add_case("conv_transpose3d", lambda i, w, bb: conv_mod.conv_transpose3d(i, w, bb, stride=(1, 2, 2)),
             _leaf(rng.standard_normal((1, 2, 2, 3, 3))), _leaf(rng.standard_normal((2, 3, 1, 2, 2)) * 0.3),
             _leaf(rng.standard_normal(3)))
    return cases


def check_ops(report: SelftestReport, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for name, loss_fn, leaves in _op_cases(rng):
        report.add(f"grad {name}", gradcheck(loss_fn, leaves, eps=1e-3), OP_TOL)


def check_rcae_end_to_end(report: SelftestReport, seed: int = 0, probes: int = 50) -> None:
    """Depth-2 RcAE loss in float64 against central differences on sampled parameters.

    float64 with a small step keeps the finite differences from straddling the
    leaky-ReLU and absolute-value kinks, which at float32 resolution would
    dominate the error.
    """
    rng = np.random.default_rng([seed, 7])
    model = RcaeModel(3, 8, 2, np.random.default_rng([seed, 8]))
    params = model.parameters()
    for p in params:
        p.data = p.data.astype(np.float64)
    x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)))
    loss_fn = lambda: rcae_loss(x, model(x, 2))
    err = gradcheck(loss_fn, params, eps=1e-6, max_probes=probes, rng=rng)
    report.add(f"grad rcae depth-2 ({probes} params)", err, E2E_TOL)


def check_adjoints(report: SelftestReport, seed: int = 0) -> None:
    """<conv(x), y> == <x, conv_transpose(y)> for the same kernel."""
    rng = np.random.default_rng([seed, 3])
    for nd, stride in ((2, 2), (3, (1, 2, 2))):
        k = (2,) * nd if nd == 2 else (1, 2, 2)
        x = rng.standard_normal((2, 3) + (4,) * nd)
        w = rng.standard_normal((5, 3) + k)
        y_shape = conv_mod.conv_nd(Tensor(x), Tensor(w), stride=stride).shape
        y = rng.standard_normal(y_shape)
        lhs = float(np.sum(conv_mod.conv_nd(Tensor(x), Tensor(w), stride=stride).data * y))
        rhs = float(np.sum(x * conv_mod.conv_transpose_nd(Tensor(y), Tensor(w), stride=stride).data))
        report.add(f"adjoint conv{nd}d", abs(lhs - rhs) / max(abs(lhs), 1e-12), 1e-9)


def check_auroc(report: SelftestReport, seed: int = 0, instances: int = 100) -> None:
    rng = np.random.default_rng([seed, 4])
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[0], labels[1] = 0, 1
        scores = rng.integers(0, 8, n) / 8.0  # coarse grid forces ties
        worst = max(worst, abs(auroc(scores, labels) - auroc_exhaustive(scores, labels)))
    report.add(f"auroc vs pairwise oracle x{instances}", worst, 0.0, passed=worst == 0.0)


def check_masks(report: SelftestReport, seed: int = 0, draws: int = 1000, size: int = 32) -> None:
    rng = np.random.default_rng([seed, 5])
    cfg = augment.AugmentConfig()
    gens: dict = {
        "color_block": lambda img: augment.inject_color_block(img, rng, cfg),
        "copy_paste": lambda img: augment.inject_copy_paste(img, rng, cfg),
        "lines": lambda img: augment.inject_lines(img, rng, cfg),
    }
    for name, gen in gens.items():
        bad = 0
        for _ in range(draws):
            img = rng.uniform(0, 1, (3, size, size)).astype(np.float32)
            pa = gen(img)
            bad += int(not np.array_equal(pa.mask, augment.diff_mask(img, pa.corrupted)))
        report.add(f"mask oracle {name} x{draws}", bad, 0, passed=bad == 0)


@contextlib.contextmanager
def _mutated_conv_grad(scale: float = 1.05):
    orig = conv_mod.conv_nd

    def conv_nd(*args, **kwargs):
        out = orig(*args, **kwargs)
        if out._backward is not None:
            bw = out._backward
            out._backward = lambda g: (lambda gs: (None if gs[0] is None else gs[0] * scale,) + tuple(gs[1:]))(bw(g))
        return out

    with mock.patch.object(conv_mod, "conv_nd", conv_nd):
        yield


def run_selftest(seed: int = 0, mutate: Optional[str] = None, mask_draws: int = 1000,
                 log: Optional[Callable[[str], None]] = None) -> SelftestReport:
    if mutate not in (None, "conv_grad"):
        raise ValueError(f"unknown mutation {mutate!r}")
    report = SelftestReport()
    start = time.perf_counter()
    ctx = _mutated_conv_grad() if mutate == "conv_grad" else contextlib.nullcontext()
    with ctx:
        for step in (check_ops, check_rcae_end_to_end, check_adjoints, check_auroc):
            step(report, seed)
        check_masks(report, seed, draws=mask_draws)
    report.seconds = time.perf_counter() - start
    if log is not None:
        log(report.render())
    return report
