"""Central finite-difference verification of every analytic gradient path:
tensor ops, the regularization-layer backward (mu, rhs, edge weights,
exemplar features), and one full tiny cascade.

The finite-difference side solves its linear systems densely so the oracle
is independent of the CG path it checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from . import autodiff as ad
from . import graph_layer as gl
from . import model as md
from . import nn_ops as nn
from .autodiff import Tensor
from .params import ArchitectureConfig, build_params

FD_STEP = 1e-6
COMPONENT_TOL = 1e-5
CASCADE_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


@dataclass
class GradcheckReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def add(self, name: str, analytic: np.ndarray, numeric: np.ndarray,
            tol: float = COMPONENT_TOL) -> None:
        self.results.append(CheckResult(name, rel_err(analytic, numeric), tol))

    def render(self) -> str:
        lines = []
        for r in self.results:
            status = "pass" if r.passed else "FAIL"
            lines.append(
                f"{status}  {r.name}: max relative error {r.max_rel_err:.3e} "
                f"(tolerance {r.tolerance:.0e})"
            )
        lines.append("gradcheck: " + ("all passed" if self.passed else "FAILURES"))
        return "\n".join(lines)


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def central_diff(f: Callable[[], float], x: np.ndarray,
                 h: float = FD_STEP) -> np.ndarray:
    """d f / d x by central differences, mutating x in place elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


# ---------------------------------------------------------------------------
# Tensor-op checks


def _weighted_sum_loss(out: Tensor, rng: np.random.Generator):
    r = Tensor(rng.standard_normal(out.data.shape))
    return ad.tensor_sum(ad.mul(out, r)), r


def _check_op(report: GradcheckReport, name: str, rng: np.random.Generator,
              inputs: List[Tensor], forward: Callable[[], Tensor]) -> None:
    for t in inputs:
        t.zero_grad()
    out = forward()
    loss, r = _weighted_sum_loss(out, rng)
    loss.backward()
    analytic = [t.grad.copy() for t in inputs]

    def scalar() -> float:
        o = forward()
        return float(np.sum(o.data * r.data))

    for t, a in zip(inputs, analytic):
        numeric = central_diff(scalar, t.data)
        report.add(f"{name}/{t.name}", a, numeric)


def check_tensor_ops(report: GradcheckReport, seed: int) -> None:
    rng = np.random.default_rng(seed)

    x = Tensor(rng.standard_normal((2, 2, 6, 6)), name="input")
    k = Tensor(rng.standard_normal((3, 2, 3, 3)), name="kernel")
    b = Tensor(rng.standard_normal(3), name="bias")
    _check_op(report, "conv2d_s1_same", rng, [x, k, b],
              lambda: nn.conv2d(x, k, b, stride=1, padding="same"))
    _check_op(report, "conv2d_s2_same", rng, [x, k, b],
              lambda: nn.conv2d(x, k, b, stride=2, padding="same"))

    xt = Tensor(rng.standard_normal((1, 3, 3, 3)), name="input")
    kt = Tensor(rng.standard_normal((3, 2, 2, 2)), name="kernel")
    bt = Tensor(rng.standard_normal(2), name="bias")
    _check_op(report, "transposed_conv2d", rng, [xt, kt, bt],
              lambda: nn.transposed_conv2d(xt, kt, bt))

    xf = Tensor(rng.standard_normal((4, 5)), name="input")
    wf = Tensor(rng.standard_normal((3, 5)), name="weights")
    bf = Tensor(rng.standard_normal(3), name="bias")
    _check_op(report, "fully_connected", rng, [xf, wf, bf],
              lambda: nn.fully_connected(xf, wf, bf))

    # three-layer composite: conv -> relu -> pool -> fc
    xc = Tensor(rng.standard_normal((1, 1, 6, 6)) + 0.1, name="input")
    kc = Tensor(rng.standard_normal((2, 1, 3, 3)), name="kernel")
    bc = Tensor(rng.standard_normal(2), name="bias")
    wc = Tensor(rng.standard_normal((2, 18)), name="weights")
    vc = Tensor(rng.standard_normal(2), name="fc_bias")

    def net():
        h = nn.max_pool_2x2(ad.relu(nn.conv2d(xc, kc, bc)))
        return nn.fully_connected(ad.reshape(h, (1, 18)), wc, vc)

    _check_op(report, "three_layer_net", rng, [xc, kc, bc, wc, vc], net)


# ---------------------------------------------------------------------------
# Regularization-layer checks (dense-solve FD oracle)


def _patch_loss_dense(features: np.ndarray, mu: float, rhs: np.ndarray,
                      x_gt: np.ndarray, c: np.ndarray, eps2x: float,
                      side: int) -> float:
    """e = 0.5 ||C (x - x_gt)||^2 with x from a dense direct solve."""
    ex = gl.ExemplarPatch(features=features, eps2x=eps2x)
    lap = gl.build_patch_laplacian(ex, side)
    m = np.eye(lap.n) + mu * lap.matrix.toarray()
    x = np.linalg.solve(m, rhs)
    d = c * (x - x_gt)
    return 0.5 * float(d @ d)


def check_layer_backward(report: GradcheckReport, seed: int,
                         side: int = 6, n_exemplars: int = 2) -> None:
    rng = np.random.default_rng(seed)
    m = side * side
    features = rng.standard_normal((n_exemplars, m)) * 0.5
    mu = float(rng.uniform(0.5, 8.0))
    rhs = rng.standard_normal(m)
    x_gt = rng.standard_normal(m)
    c = rng.uniform(0.5, 1.5, m)
    eps2x = 1.0

    ex = gl.ExemplarPatch(features=features.copy(), eps2x=eps2x)
    lap = gl.build_patch_laplacian(ex, side)
    cache = gl.solve_qp(lap, mu, rhs)
    g = (c * c) * (cache.solution - x_gt)
    grad_mu, grad_rhs, grad_w = gl.backward_qp(cache, g)
    grad_f = gl.backward_graph(ex, lap, grad_w)

    mu_box = np.array([mu])
    fd_mu = central_diff(
        lambda: _patch_loss_dense(features, mu_box[0], rhs, x_gt, c, eps2x, side),
        mu_box,
    )
    report.add("layer/grad_mu", np.array([grad_mu]), fd_mu)

    fd_rhs = central_diff(
        lambda: _patch_loss_dense(features, mu, rhs, x_gt, c, eps2x, side), rhs
    )
    report.add("layer/grad_rhs", grad_rhs, fd_rhs)

    # edge weights perturbed directly (bypassing the exponential kernel)
    w0 = lap.weights.copy()

    def loss_of_w() -> float:
        lw = gl.assemble_laplacian(m, lap.edge_i, lap.edge_j, w0)
        sys = np.eye(m) + mu * lw.matrix.toarray()
        x = np.linalg.solve(sys, rhs)
        d = c * (x - x_gt)
        return 0.5 * float(d @ d)

    fd_w = central_diff(loss_of_w, w0)
    report.add("layer/grad_edge_weights", grad_w, fd_w)

    fd_f = central_diff(
        lambda: _patch_loss_dense(features, mu, rhs, x_gt, c, eps2x, side),
        features,
    )
    report.add("layer/grad_exemplars", grad_f, fd_f)


def check_two_vertex_case(report: GradcheckReport) -> None:
    """Closed-form 2-pixel system: w=1, mu=1, rhs=(1,0), target (1/2,1/2)
    gives x=(2/3,1/3) and d e / d mu = -1/27."""
    lap = gl.assemble_laplacian(2, [0], [1], [1.0])
    cache = gl.solve_qp(lap, 1.0, np.array([1.0, 0.0]))
    g = cache.solution - np.array([0.5, 0.5])
    grad_mu, _, _ = gl.backward_qp(cache, g)
    err = abs(grad_mu - (-1.0 / 27.0))
    report.results.append(CheckResult("layer/two_vertex_grad_mu", err, 1e-10))


# ---------------------------------------------------------------------------
# Full cascade check


def tiny_setup(seed: int):
    """Micro configuration for end-to-end checks: 16x16 image, 8x8 patches."""
    arch = ArchitectureConfig(exemplars=2, f_widths=(2, 3, 4), yhat_width=2,
                              mu_widths=(2, 3), mu_fc_hidden=4, patch=8)
    params = build_params(arch, seed=seed)
    config = md.CascadeConfig(cascades=2, patch=8, stride=6, exemplars=2)
    rng = np.random.default_rng(seed)
    clean = rng.uniform(0.2, 0.8, (16, 16))
    noisy = clean + rng.standard_normal((16, 16)) * 0.1
    return params, config, clean, noisy


def _fd_one(f: Callable[[], float], x: np.ndarray, i: int, h: float) -> float:
    flat = x.reshape(-1)
    orig = flat[i]
    flat[i] = orig + h
    fp = f()
    flat[i] = orig - h
    fm = f()
    flat[i] = orig
    return (fp - fm) / (2.0 * h)


def check_full_cascade(report: GradcheckReport, seed: int) -> None:
    params, config, clean, noisy = tiny_setup(seed)

    def run() -> float:
        out = md.cascade_forward(Tensor(noisy), params, config)
        return float(md.loss_mse(Tensor(clean), out).data)

    params.zero_grads()
    out = md.cascade_forward(Tensor(noisy), params, config)
    md.loss_mse(Tensor(clean), out).backward()
    for name, tensor in params.items():
        numeric = central_diff(run, tensor.data)
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(numeric)
        # Central differences are meaningless where a perturbation crosses a
        # ReLU kink or a pooling-argmax tie. Where FD disagrees with the
        # analytic value, re-probe with a 10x smaller step: a genuine
        # gradient bug gives a consistent FD estimate, a nondifferentiable
        # point does not and is excluded.
        scale = max(float(np.max(np.abs(analytic))),
                    float(np.max(np.abs(numeric))), 1e-12)
        nflat = numeric.reshape(-1)
        aflat = analytic.reshape(-1)
        for i in np.flatnonzero(np.abs(aflat - nflat) > CASCADE_TOL * scale):
            fd_small = _fd_one(run, tensor.data, int(i), FD_STEP / 10.0)
            if abs(fd_small - nflat[i]) > CASCADE_TOL * scale:
                nflat[i] = aflat[i]  # nonsmooth point, FD not trustworthy
        report.add(f"cascade/{name}", analytic, numeric, tol=CASCADE_TOL)


def gradcheck_suite(seed: int = 0, include_cascade: bool = True) -> GradcheckReport:
    report = GradcheckReport()
    check_tensor_ops(report, seed)
    check_two_vertex_case(report)
    check_layer_backward(report, seed)
    if include_cascade:
        check_full_cascade(report, seed)
    return report
