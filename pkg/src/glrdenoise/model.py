"""GLRNet assembly: the three sub-networks, the graph regularization layer
as a custom autodiff op, cascaded application with shared parameters, the
training loss, and the untrained classic-mode pipeline.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from . import autodiff as ad
from . import graph_layer as gl
from . import patches as pp
from .autodiff import Tensor
from .nn_ops import conv2d, fully_connected, max_pool_2x2, transposed_conv2d
from .params import ModelParams


class SizingError(ValueError):
    pass


@dataclass
class CascadeConfig:
    """Everything the cascade needs beyond the parameters themselves."""

    cascades: int = 2
    patch: int = 26
    stride: int = 22
    kappa_max: float = 250.0
    exemplars: int = 3
    mode: str = "learned"  # "learned" or "classic"
    eps2x: float = 1.0     # value of 2*eps^2 in the edge-weight kernel
    classic_mu: float = 8.0
    classic_blur_sigma: float = 1.0
    sigma: Optional[float] = 25.0   # fixed noise level (0-255 scale)
    sigma_min: Optional[float] = None  # blind-mode range, overrides sigma
    sigma_max: Optional[float] = None

    def __post_init__(self):
        if self.cascades < 1:
            raise ValueError("cascades must be >= 1")
        if self.kappa_max <= 1:
            raise ValueError("kappa_max must exceed 1")
        if self.exemplars < 1:
            raise ValueError("exemplars must be >= 1")
        if self.mode not in ("learned", "classic"):
            raise ValueError(f"unknown mode {self.mode!r}")


# ---------------------------------------------------------------------------
# Sub-network forward passes


def _conv_relu(x: Tensor, params: ModelParams, name: str, stride: int = 1) -> Tensor:
    return ad.relu(conv2d(x, params[f"{name}/kernel"], params[f"{name}/bias"],
                          stride=stride))


def cnn_f_forward(image: Tensor, params: ModelParams) -> Tensor:
    """Hourglass exemplar extractor: (1, 1, H, W) -> (1, N, H, W).

    Two stride-2 encoder stages, two stride-2 transposed-conv decoder stages
    with skip connections; the transposed convs and the final conv carry no
    activation.
    """
    _, _, h, w = image.data.shape
    if h % 4 or w % 4:
        raise SizingError(
            f"spatial extents {h}x{w} must be multiples of 4; pad or crop the input"
        )
    e0 = _conv_relu(image, params, "f/enc0")
    e1 = _conv_relu(e0, params, "f/enc1", stride=2)
    e2 = _conv_relu(e1, params, "f/enc2", stride=2)
    d1 = transposed_conv2d(e2, params["f/dec1/kernel"], params["f/dec1/bias"])
    m1 = _conv_relu(ad.concat_channels([d1, e1]), params, "f/merge1")
    d0 = transposed_conv2d(m1, params["f/dec0/kernel"], params["f/dec0/bias"])
    m0 = _conv_relu(ad.concat_channels([d0, e0]), params, "f/merge0")
    return conv2d(m0, params["f/out/kernel"], params["f/out/bias"])


def cnn_prefilter_forward(image: Tensor, params: ModelParams) -> Tensor:
    """Residual prefilter: (1, 1, H, W) -> (1, 1, H, W), last conv linear."""
    h = _conv_relu(image, params, "y/conv0")
    h = _conv_relu(h, params, "y/conv1")
    h = _conv_relu(h, params, "y/conv2")
    residual = conv2d(h, params["y/out/kernel"], params["y/out/bias"])
    return ad.add(image, residual)


def cnn_mu_forward(patches_t: Tensor, params: ModelParams) -> Tensor:
    """Per-patch regularization weight: (K, 1, s, s) -> (K,), nonnegative.

    Conv/pool stack followed by two fully-connected layers; the closing ReLU
    keeps every weight nonnegative.
    """
    k, _, s, _ = patches_t.data.shape
    if s != params.arch.patch:
        raise SizingError(
            f"patch side {s} does not match network input side {params.arch.patch}"
        )
    h = max_pool_2x2(_conv_relu(patches_t, params, "mu/conv0"))
    h = max_pool_2x2(_conv_relu(h, params, "mu/conv1"))
    h = _conv_relu(h, params, "mu/conv2")
    h = _conv_relu(h, params, "mu/conv3")
    h = ad.reshape(h, (k, params.arch.mu_flat_size))
    h = ad.relu(fully_connected(h, params["mu/fc0/weights"], params["mu/fc0/bias"]))
    h = ad.relu(fully_connected(h, params["mu/fc1/weights"], params["mu/fc1/bias"]))
    return ad.reshape(h, (k,))


# ---------------------------------------------------------------------------
# Differentiable plumbing between planes and patches


def extract_patches_op(plane: Tensor, plan: pp.PatchPlan) -> Tensor:
    """Differentiable patch extraction: (H, W) -> (K, m)."""
    out = Tensor(pp.extract_patches(plane.data, plan), parents=(plane,))
    out._backward = lambda g: plane.accumulate_grad(pp.scatter_patch_grads(g, plan))
    return out


def glr_layer(exemplar_planes: Tensor, prefiltered: Tensor, mu: Tensor,
              plan: pp.PatchPlan, kappa_max: float = 250.0,
              eps2x: float = 1.0) -> Tensor:
    """Graph regularization over a whole plane as one autodiff op.

    exemplar_planes: (N, H, W); prefiltered: (H, W); mu: (K,) raw weights,
    clamped here per patch. Forward builds one 8-connected Laplacian per
    patch, solves (I + mu*L) x = y_hat and aggregates by coverage mean; the
    backward pass uses the analytic implicit gradients.
    """
    s = plan.side
    ex_patches = np.stack([
        pp.extract_patches(plane, plan) for plane in exemplar_planes.data
    ])  # (N, K, m)
    rhs_patches = pp.extract_patches(prefiltered.data, plan)

    caches: List[gl.GlrCache] = []
    exemplars: List[gl.ExemplarPatch] = []
    solutions = np.empty_like(rhs_patches)
    for k in range(plan.num_patches):
        ex = gl.ExemplarPatch(features=ex_patches[:, k, :], eps2x=eps2x)
        lap = gl.build_patch_laplacian(ex, s)
        try:
            mu_eff, clamped = gl.clamp_mu(float(mu.data[k]), lap, kappa_max)
        except gl.DegenerateGraphError:
            mu_eff, clamped = float(mu.data[k]), False
        cache = gl.solve_qp(lap, mu_eff, rhs_patches[k], clamped=clamped)
        caches.append(cache)
        exemplars.append(ex)
        solutions[k] = cache.solution

    out = Tensor(pp.aggregate_patches(solutions, plan),
                 parents=(exemplar_planes, prefiltered, mu))

    def bwd(g):
        # aggregation backward: each covering patch receives g / coverage
        per_patch = pp.extract_patches(g / plan.coverage, plan)
        grad_mu = np.zeros_like(mu.data)
        grad_rhs = np.zeros_like(rhs_patches)
        grad_ex = np.zeros_like(ex_patches)
        for k, cache in enumerate(caches):
            gm, gr, gw = gl.backward_qp(cache, per_patch[k])
            grad_mu[k] = gm
            grad_rhs[k] = gr
            grad_ex[:, k, :] = gl.backward_graph(exemplars[k], cache.laplacian, gw)
        mu.accumulate_grad(grad_mu)
        prefiltered.accumulate_grad(pp.scatter_patch_grads(grad_rhs, plan))
        exemplar_planes.accumulate_grad(np.stack([
            pp.scatter_patch_grads(grad_ex[n], plan)
            for n in range(grad_ex.shape[0])
        ]))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# Learned-mode block and cascade


def glrnet_block_forward(image: Tensor, params: ModelParams,
                         config: CascadeConfig,
                         plan: Optional[pp.PatchPlan] = None) -> Tensor:
    """One denoising block on a (H, W) plane tensor."""
    h, w = image.data.shape
    if plan is None:
        plan = pp.plan_patches(h, w, config.patch, config.stride)
    img4 = ad.reshape(image, (1, 1, h, w))
    ex = ad.reshape(cnn_f_forward(img4, params), (config.exemplars, h, w))
    prefiltered = ad.reshape(cnn_prefilter_forward(img4, params), (h, w))
    noisy_patches = ad.reshape(extract_patches_op(image, plan),
                               (plan.num_patches, 1, plan.side, plan.side))
    mu = cnn_mu_forward(noisy_patches, params)
    return glr_layer(ex, prefiltered, mu, plan, config.kappa_max, config.eps2x)


def cascade_forward(image: Tensor, params: ModelParams,
                    config: CascadeConfig) -> Tensor:
    """Apply the same block (same parameter instance) T times."""
    h, w = image.data.shape
    plan = pp.plan_patches(h, w, config.patch, config.stride)
    out = image
    for _ in range(config.cascades):
        out = glrnet_block_forward(out, params, config, plan)
    return out


def loss_mse(gt: Tensor, out: Tensor) -> Tensor:
    return ad.mean_squared_error(gt, out)


# ---------------------------------------------------------------------------
# Classic (untrained) mode: Gaussian-blurred input serves as both the
# prefiltered fidelity target and the single exemplar; mu is a fixed global
# value, clamped per patch as usual.


def classic_block(plane: np.ndarray, config: CascadeConfig) -> np.ndarray:
    blurred = gaussian_filter(plane, sigma=config.classic_blur_sigma,
                              mode="reflect")
    plan = pp.plan_patches(*plane.shape, config.patch, config.stride)
    ex_patches = pp.extract_patches(blurred, plan)
    solutions = np.empty_like(ex_patches)
    for k in range(plan.num_patches):
        ex = gl.ExemplarPatch(features=ex_patches[k][None, :],
                              eps2x=config.eps2x)
        lap = gl.build_patch_laplacian(ex, plan.side)
        try:
            mu_eff, clamped = gl.clamp_mu(config.classic_mu, lap,
                                          config.kappa_max)
        except gl.DegenerateGraphError:
            mu_eff, clamped = config.classic_mu, False
        solutions[k] = gl.solve_qp(lap, mu_eff, ex_patches[k],
                                   clamped=clamped).solution
    return pp.aggregate_patches(solutions, plan)


def classic_cascade(plane: np.ndarray, config: CascadeConfig) -> np.ndarray:
    out = np.asarray(plane, dtype=np.float64)
    for _ in range(config.cascades):
        out = classic_block(out, config)
    return out


def classic_cascade_color(channels: Sequence[np.ndarray],
                          config: CascadeConfig) -> List[np.ndarray]:
    """Classic mode for multi-channel input: the graph is built once from
    the mean-channel blur and shared by all channel solves."""
    chans = [np.asarray(c, dtype=np.float64) for c in channels]
    for _ in range(config.cascades):
        luma = np.mean(chans, axis=0)
        blurred_luma = gaussian_filter(luma, sigma=config.classic_blur_sigma,
                                       mode="reflect")
        blurred = [gaussian_filter(c, sigma=config.classic_blur_sigma,
                                   mode="reflect") for c in chans]
        plan = pp.plan_patches(*luma.shape, config.patch, config.stride)
        ex_patches = pp.extract_patches(blurred_luma, plan)
        rhs = [pp.extract_patches(b, plan) for b in blurred]
        outs = [np.empty_like(r) for r in rhs]
        for k in range(plan.num_patches):
            ex = gl.ExemplarPatch(features=ex_patches[k][None, :],
                                  eps2x=config.eps2x)
            lap = gl.build_patch_laplacian(ex, plan.side)
            try:
                mu_eff, clamped = gl.clamp_mu(config.classic_mu, lap,
                                              config.kappa_max)
            except gl.DegenerateGraphError:
                mu_eff, clamped = config.classic_mu, False
            solved = gl.solve_qp_multichannel(lap, mu_eff,
                                              [r[k] for r in rhs],
                                              clamped=clamped)
            for c, cache in enumerate(solved):
                outs[c][k] = cache.solution
        chans = [pp.aggregate_patches(o, plan) for o in outs]
    return chans


def classic_grid_search(noisy: np.ndarray, reference: np.ndarray,
                        config: CascadeConfig,
                        mu_grid: Sequence[float] = (1, 2, 4, 8, 15),
                        ) -> Tuple[float, np.ndarray]:
    """Pick the global mu from a grid by mean squared error against the
    reference; returns (best_mu, denoised plane)."""
    best = None
    for mu in mu_grid:
        cfg = dataclasses.replace(config, classic_mu=float(mu), mode="classic")
        out = classic_cascade(noisy, cfg)
        err = float(np.mean((out - reference) ** 2))
        if best is None or err < best[0]:
            best = (err, float(mu), out)
    return best[1], best[2]
