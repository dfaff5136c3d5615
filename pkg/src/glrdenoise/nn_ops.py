"""Network layer primitives on the autodiff Tensor: convolution, stride-2
transposed convolution, 2x2 max pooling and fully-connected layers.

Convolutions are cross-correlations (no kernel flip). "same" padding uses
zero fill and produces ceil(H/stride) spatial extents; "valid" uses none.
"""

from __future__ import annotations

import numpy as np

from .autodiff import ShapeError, Tensor


def _pad_amounts(size: int, k: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           padding: str = "same") -> Tensor:
    """2-D cross-correlation.

    x: (N, C, H, W); kernel: (O, C, K, K); bias: (O,). stride is 1 or 2.
    """
    n, c, h, w = x.data.shape
    o, ci, kh, kw = kernel.data.shape
    if ci != c:
        raise ShapeError(
            f"conv2d: kernel expects {ci} input channels, input has {c}"
        )
    if bias.data.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({o},)")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: unsupported stride {stride}")
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError("conv2d: same padding requires odd kernel size")
        pt, pb = _pad_amounts(h, kh, stride)
        pl, pr = _pad_amounts(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        raise ShapeError(f"conv2d: unknown padding {padding!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        )

    # gather shifted views: cols[n, c, ki, kj, ho, wo]
    cols = np.empty((n, c, kh, kw, ho, wo))
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = xp[
                :, :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride
            ]
    out_data = np.einsum("ncklhw,ockl->nohw", cols, kernel.data, optimize=True)
    out_data += bias.data[None, :, None, None]
    out = Tensor(out_data, parents=(x, kernel, bias))

    def bwd(g):
        kernel.accumulate_grad(
            np.einsum("ncklhw,nohw->ockl", cols, g, optimize=True)
        )
        bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                gxp[
                    :, :, ki : ki + ho * stride : stride, kj : kj + wo * stride : stride
                ] += np.einsum("nohw,oc->nchw", g, kernel.data[:, :, ki, kj],
                               optimize=True)
        x.accumulate_grad(gxp[:, :, pt : pt + h, pl : pl + w])

    out._backward = bwd
    return out


def transposed_conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Stride-2 transposed convolution with a 2x2 kernel.

    x: (N, C, H, W); kernel: (C, O, 2, 2); bias: (O,). Output is exactly
    (N, O, 2H, 2W): each input pixel scatters one 2x2 block, so blocks do
    not overlap. The backward pass is the corresponding stride-2 valid
    convolution.
    """
    n, c, h, w = x.data.shape
    ci, o, kh, kw = kernel.data.shape
    if ci != c:
        raise ShapeError(
            f"transposed_conv2d: kernel expects {ci} input channels, input has {c}"
        )
    if (kh, kw) != (2, 2):
        raise ShapeError("transposed_conv2d: kernel must be 2x2")
    if h < 1 or w < 1:
        raise ShapeError("transposed_conv2d: empty spatial extents")

    out_data = np.empty((n, o, 2 * h, 2 * w))
    for ki in range(2):
        for kj in range(2):
            out_data[:, :, ki::2, kj::2] = np.einsum(
                "nchw,co->nohw", x.data, kernel.data[:, :, ki, kj], optimize=True
            )
    out_data += bias.data[None, :, None, None]
    out = Tensor(out_data, parents=(x, kernel, bias))

    def bwd(g):
        gx = np.zeros_like(x.data)
        gk = np.empty_like(kernel.data)
        for ki in range(2):
            for kj in range(2):
                block = g[:, :, ki::2, kj::2]
                gx += np.einsum("nohw,co->nchw", block, kernel.data[:, :, ki, kj],
                                optimize=True)
                gk[:, :, ki, kj] = np.einsum("nchw,nohw->co", x.data, block,
                                             optimize=True)
        x.accumulate_grad(gx)
        kernel.accumulate_grad(gk)
        bias.accumulate_grad(g.sum(axis=(0, 2, 3)))

    out._backward = bwd
    return out


def max_pool_2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pool; odd extents drop the trailing row/col.

    The gradient routes to the argmax of each window; ties go to the first
    element in row-major window order.
    """
    n, c, h, w = x.data.shape
    ho, wo = h // 2, w // 2
    cropped = x.data[:, :, : 2 * ho, : 2 * wo]
    windows = cropped.reshape(n, c, ho, 2, wo, 2)
    # flat window order (0,0),(0,1),(1,0),(1,1); np.argmax picks the first max
    flat = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    idx = np.argmax(flat, axis=-1)
    out = Tensor(np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0],
                 parents=(x,))

    def bwd(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[:, :, : 2 * ho, : 2 * wo] = (
            gflat.reshape(n, c, ho, wo, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, 2 * ho, 2 * wo)
        )
        x.accumulate_grad(gx)

    out._backward = bwd
    return out


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map x @ W^T + b for x of shape (N, D) or (D,); W is (O, D)."""
    o, d = weights.data.shape
    single = x.data.ndim == 1
    xd = x.data[None, :] if single else x.data
    if xd.shape[1] != d:
        raise ShapeError(
            f"fully_connected: weights expect input length {d}, got {xd.shape[1]}"
        )
    if bias.data.shape != (o,):
        raise ShapeError(f"fully_connected: bias shape {bias.data.shape} != ({o},)")
    out_data = xd @ weights.data.T + bias.data
    out = Tensor(out_data[0] if single else out_data, parents=(x, weights, bias))

    def bwd(g):
        gd = g[None, :] if single else g
        x.accumulate_grad((gd @ weights.data)[0] if single else gd @ weights.data)
        weights.accumulate_grad(gd.T @ xd)
        bias.accumulate_grad(gd.sum(axis=0))

    out._backward = bwd
    return out
