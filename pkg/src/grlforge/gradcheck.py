"""Randomised finite-difference checks for every layer kind and for the
gradient routing of the two-head model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn_core as nn
from .grl_dann import DomainBatch, build_model, dann_backward, dann_loss, dann_forward
from .nn_core import RELU, FLATTEN, linear, numeric_gradient, relative_error

TOLERANCE = 1e-5
EPSILON = 1e-5
LAYER_COMPONENTS = ("linear", "conv2d", "relu", "maxpool", "flatten", "softmax_xent", "network")


@dataclass
class SuiteResult:
    errors: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0
    tolerance: float = TOLERANCE

    @property
    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if not v < self.tolerance}

    @property
    def passed(self) -> bool:
        return not self.failures


def _check(analytic: dict, f, tensors: dict, fault: bool) -> float:
    worst = 0.0
    for name, t in tensors.items():
        a = analytic[name] + (1e-3 if fault else 0.0)
        worst = max(worst, relative_error(a, numeric_gradient(f, t, EPSILON)))
    return worst


def check_linear(rng, fault=False) -> float:
    B, I, O = (int(v) for v in rng.integers(1, 6, size=3))
    x, w, b = rng.normal(size=(B, I)), rng.normal(size=(I, O)), rng.normal(size=O)
    r = rng.normal(size=(B, O))
    gx, gw, gb = nn.linear_backward(x, w, r)
    f = lambda: float((nn.linear_forward(x, w, b) * r).sum())
    return _check({"x": gx, "w": gw, "b": gb}, f, {"x": x, "w": w, "b": b}, fault)


def check_conv2d(rng, fault=False) -> float:
    k = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    pad = int(rng.integers(0, 2))
    C, K = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    n_out = int(rng.integers(1, 4))
    H = (n_out - 1) * stride + k - 2 * pad
    if H < 1:
        H += stride * ((1 - H + stride - 1) // stride)
    W = H
    x = rng.normal(size=(int(rng.integers(1, 3)), C, H, W))
    kern, b = rng.normal(size=(K, C, k, k)), rng.normal(size=K)
    out = nn.conv2d_forward(x, kern, b, stride, pad)
    r = rng.normal(size=out.shape)
    gx, gk, gb = nn.conv2d_backward(x, kern, r, stride, pad)
    f = lambda: float((nn.conv2d_forward(x, kern, b, stride, pad) * r).sum())
    return _check({"x": gx, "k": gk, "b": gb}, f, {"x": x, "k": kern, "b": b}, fault)


def check_relu(rng, fault=False) -> float:
    x = rng.normal(size=tuple(int(v) for v in rng.integers(1, 6, size=2)))
    x = np.where(np.abs(x) < 1e-3, 0.5, x)
    r = rng.normal(size=x.shape)
    f = lambda: float((nn.relu(x) * r).sum())
    return _check({"x": nn.relu_backward(x, r)}, f, {"x": x}, fault)


def check_maxpool(rng, fault=False) -> float:
    window = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    n_out = int(rng.integers(1, 4))
    H = (n_out - 1) * stride + window
    shape = (int(rng.integers(1, 3)), int(rng.integers(1, 3)), H, H)
    # distinct values spaced well beyond epsilon: no ties, no argmax flips
    x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.01 + rng.uniform(-1, 1)
    out, idx = nn.maxpool2d(x, window, stride)
    r = rng.normal(size=out.shape)
    f = lambda: float((nn.maxpool2d(x, window, stride)[0] * r).sum())
    return _check({"x": nn.maxpool2d_backward(idx, r, x.shape)}, f, {"x": x}, fault)


def check_flatten(rng, fault=False) -> float:
    shape = (2, 2, 3, 3)
    net = nn.Network([FLATTEN], shape[1:])
    x = rng.normal(size=shape)
    r = rng.normal(size=(2, 18))
    out, cache = net.forward(x)
    g = net.backward(r, cache)
    f = lambda: float((net(x) * r).sum())
    return _check({"x": g}, f, {"x": x}, fault)


def check_softmax_xent(rng, fault=False) -> float:
    B, C = int(rng.integers(1, 6)), int(rng.integers(2, 5))
    logits, labels = rng.normal(scale=2.0, size=(B, C)), rng.integers(0, C, size=B)
    _, g = nn.softmax_cross_entropy(logits, labels)
    f = lambda: nn.softmax_cross_entropy(logits, labels)[0]
    return _check({"z": g}, f, {"z": logits}, fault)


def check_network(rng, fault=False) -> float:
    specs = [nn.conv2d(1, 2, 3, padding=1), RELU, nn.maxpool(2), FLATTEN, linear(2 * 2 * 2, 2)]
    net = nn.Network(specs, (1, 4, 4), rng)
    x, labels = rng.normal(size=(2, 1, 4, 4)), rng.integers(0, 2, size=2)
    err = nn.grad_check(net, x, labels, EPSILON)
    return err + (1e-3 if fault else 0.0)


CHECKS = {
    "linear": check_linear,
    "conv2d": check_conv2d,
    "relu": check_relu,
    "maxpool": check_maxpool,
    "flatten": check_flatten,
    "softmax_xent": check_softmax_xent,
    "network": check_network,
}


def tiny_dann(seed: int = 0):
    """Two-head model with about 200 parameters on 1x4x4 inputs."""
    feats = [FLATTEN, linear(16, 8), RELU]
    return build_model(feats, [linear(8, 2)], [linear(8, 4), RELU, linear(4, 2)], (1, 4, 4), seed)


def routing_error(lam: float, seed: int = 0, fault: bool = False) -> float:
    """Relative error of the implemented theta_f gradient against central
    differences of ``l_source - lam * l_domain`` (and of theta_s / theta_d
    against ``l_source`` / ``l_domain``)."""
    rng = np.random.default_rng(seed)
    model = tiny_dann(seed)
    batch = DomainBatch(rng.normal(size=(3, 1, 4, 4)), rng.integers(0, 2, size=3), rng.normal(size=(3, 1, 4, 4)))
    model.zero_grad()
    dann_backward(model, batch, lam)

    def parts():
        s, d, _ = dann_forward(model, batch)
        return dann_loss(s, batch.source_class_labels, d)

    objectives = (
        (model.feature_extractor.params, lambda: (lambda L: L.l_source - lam * L.l_domain)(parts())),
        (model.source_head.params, lambda: parts().l_source),
        (model.domain_head.params, lambda: parts().l_domain),
    )
    worst = 0.0
    for ps, f in objectives:
        for name, p in ps.params.items():
            a = ps.grads[name] + (1e-3 if fault else 0.0)
            worst = max(worst, relative_error(a, numeric_gradient(f, p, EPSILON)))
    model.zero_grad()
    return worst


def run_suite(trials: int = 100, seed: int = 0, lambdas=(0.0, 0.5, 1.0), fault: str | None = None) -> SuiteResult:
    """Run ``trials`` randomised instances per component plus the GRL routing
    check for each lambda. ``fault`` names a component whose analytic
    gradient is perturbed by +1e-3 (used to test failure reporting)."""
    t0 = time.perf_counter()
    result = SuiteResult()
    rng = np.random.default_rng(seed)
    for name, check in CHECKS.items():
        result.errors[name] = max(check(rng, fault == name) for _ in range(trials))
    for lam in lambdas:
        key = f"grl_routing[lambda={lam:g}]"
        result.errors[key] = routing_error(lam, seed, fault in ("grl_routing", key))
    result.seconds = time.perf_counter() - t0
    return result
