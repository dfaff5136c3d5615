"""Per-patch graph Laplacian regularization: edge weights from exemplar
features, sparse 8-connected Laplacian assembly, the stability clamp on the
regularization weight, the (I + mu*L) x = y solve, and the analytic backward
pass through both the solve and the graph construction.

All functions are pure; distinct patches can be processed independently.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    pass


class DegenerateGraphError(ValueError):
    """All vertex degrees are zero; the system degenerates to the identity."""


class SolverFailureError(RuntimeError):
    """CG hit its iteration cap. Unreachable when the clamp is active."""

    def __init__(self, residual: float, iterations: int):
        super().__init__(
            f"CG failed to converge in {iterations} iterations "
            f"(relative residual {residual:.3e})"
        )
        self.residual = residual
        self.iterations = iterations


class StaleCacheError(RuntimeError):
    """The cached solve no longer satisfies its residual contract."""


SOLVE_TOL = 1e-10


@lru_cache(maxsize=32)
def grid_edges_8(side: int) -> Tuple[np.ndarray, np.ndarray]:
    """Edge list (i < j, row-major pixel indexing) of the 8-connected grid
    on a side x side patch."""
    idx = np.arange(side * side).reshape(side, side)
    pairs = []
    pairs.append((idx[:, :-1].ravel(), idx[:, 1:].ravel()))    # horizontal
    pairs.append((idx[:-1, :].ravel(), idx[1:, :].ravel()))    # vertical
    pairs.append((idx[:-1, :-1].ravel(), idx[1:, 1:].ravel())) # diagonal \
    pairs.append((idx[:-1, 1:].ravel(), idx[1:, :-1].ravel())) # diagonal /
    ei = np.concatenate([p[0] for p in pairs])
    ej = np.concatenate([p[1] for p in pairs])
    order = np.lexsort((ej, ei))
    ei, ej = ei[order], ej[order]
    ei.setflags(write=False)
    ej.setflags(write=False)
    return ei, ej


@dataclass
class ExemplarPatch:
    """N feature vectors over one patch's m pixels, plus the kernel
    bandwidth convention: weights use exp(-dist / eps2x) with eps2x = 2*eps^2."""

    features: np.ndarray  # (N, m)
    eps2x: float = 1.0

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        if self.features.shape[0] < 1:
            raise DataError("at least one exemplar is required")


@dataclass
class SparseLaplacian8:
    """Combinatorial Laplacian L = D - A over a fixed edge pattern."""

    n: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    weights: np.ndarray
    degrees: np.ndarray = field(init=False)
    d_max: float = field(init=False)
    matrix: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        deg = np.zeros(self.n)
        np.add.at(deg, self.edge_i, self.weights)
        np.add.at(deg, self.edge_j, self.weights)
        self.degrees = deg
        self.d_max = float(deg.max()) if self.n else 0.0
        rows = np.concatenate([self.edge_i, self.edge_j, np.arange(self.n)])
        cols = np.concatenate([self.edge_j, self.edge_i, np.arange(self.n)])
        vals = np.concatenate([-self.weights, -self.weights, deg])
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))


@dataclass
class GlrCache:
    """Forward-solve byproducts retained for the backward pass."""

    solution: np.ndarray
    rhs: np.ndarray
    mu: float
    clamped: bool
    laplacian: SparseLaplacian8
    iterations: int
    residual: float


def compute_edge_weights(exemplars: ExemplarPatch, edge_i: np.ndarray,
                         edge_j: np.ndarray) -> np.ndarray:
    """w_ij = exp(-sum_n (f_n(i) - f_n(j))^2 / (2 eps^2)) for each edge."""
    f = exemplars.features
    if not np.all(np.isfinite(f)):
        bad = int(np.argwhere(~np.isfinite(f))[0][1])
        raise DataError(f"non-finite exemplar value at pixel {bad}")
    diffs = f[:, edge_i] - f[:, edge_j]
    dist = np.sum(diffs * diffs, axis=0)
    return np.exp(-dist / exemplars.eps2x)


def assemble_laplacian(n: int, edge_i: np.ndarray, edge_j: np.ndarray,
                       weights: np.ndarray) -> SparseLaplacian8:
    return SparseLaplacian8(
        n=n,
        edge_i=np.asarray(edge_i, dtype=np.intp),
        edge_j=np.asarray(edge_j, dtype=np.intp),
        weights=np.asarray(weights, dtype=np.float64),
    )


def build_patch_laplacian(exemplars: ExemplarPatch, side: int) -> SparseLaplacian8:
    """Full pipeline for one square patch: 8-connected weights -> Laplacian."""
    ei, ej = grid_edges_8(side)
    w = compute_edge_weights(exemplars, ei, ej)
    return assemble_laplacian(side * side, ei, ej, w)


def clamp_mu(mu_raw: float, laplacian: SparseLaplacian8,
             kappa_max: float = 250.0) -> Tuple[float, bool]:
    """Truncate mu at mu_max = (kappa_max - 1) / (2 d_max) so the condition
    number of I + mu*L stays below kappa_max. Returns (mu, clamped)."""
    if mu_raw < 0:
        raise ValueError(f"mu must be nonnegative, got {mu_raw}")
    if kappa_max <= 1:
        raise ValueError(f"kappa_max must exceed 1, got {kappa_max}")
    if laplacian.d_max <= 0.0:
        raise DegenerateGraphError("graph has no edges with positive weight")
    mu_max = (kappa_max - 1.0) / (2.0 * laplacian.d_max)
    if mu_raw >= mu_max:
        return mu_max, True
    return float(mu_raw), False


def _pcg(laplacian: SparseLaplacian8, mu: float, b: np.ndarray,
         tol: float = SOLVE_TOL) -> Tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned CG on (I + mu*L) x = b, x0 = 0."""
    L = laplacian.matrix
    m = b.size
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0, 0.0
    diag = 1.0 + mu * laplacian.degrees
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    max_iter = 10 * m
    for it in range(1, max_iter + 1):
        Ap = p + mu * (L @ p)
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol * bnorm:
            return x, it, rnorm / bnorm
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverFailureError(float(np.linalg.norm(r)) / bnorm, max_iter)


def solve_qp(laplacian: SparseLaplacian8, mu: float, rhs: np.ndarray, *,
             clamped: bool = False) -> GlrCache:
    """Solve (I + mu*L) x = rhs; mu must already be clamped by the caller."""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (laplacian.n,):
        raise DataError(
            f"rhs length {rhs.shape} does not match graph size {laplacian.n}"
        )
    x, iters, res = _pcg(laplacian, mu, rhs)
    return GlrCache(solution=x, rhs=rhs, mu=mu, clamped=clamped,
                    laplacian=laplacian, iterations=iters, residual=res)


def solve_qp_multichannel(laplacian: SparseLaplacian8, mu: float,
                          rhs_channels: List[np.ndarray], *,
                          clamped: bool = False) -> List[GlrCache]:
    """Independent solves sharing one graph and one mu (one per channel)."""
    return [solve_qp(laplacian, mu, rhs, clamped=clamped)
            for rhs in rhs_channels]


def regularizer_value(laplacian: SparseLaplacian8, x: np.ndarray) -> float:
    """x^T L x via the edge sum: sum_ij w_ij (x_i - x_j)^2."""
    d = x[laplacian.edge_i] - x[laplacian.edge_j]
    return float(np.sum(laplacian.weights * d * d))


def _check_cache(cache: GlrCache) -> None:
    L = cache.laplacian.matrix
    r = cache.solution + cache.mu * (L @ cache.solution) - cache.rhs
    bnorm = float(np.linalg.norm(cache.rhs))
    if float(np.linalg.norm(r)) > 10.0 * SOLVE_TOL * max(bnorm, 1e-300):
        raise StaleCacheError("cached solution no longer solves its system")


def backward_qp(cache: GlrCache, grad_output: np.ndarray,
                pixel_weights: Optional[np.ndarray] = None,
                ) -> Tuple[float, np.ndarray, np.ndarray]:
    """Implicit gradients through the solve, via one extra system solve.

    grad_output is the loss gradient at the solved patch; pixel_weights (if
    given) are squared per-pixel loss weights not yet folded into it.
    Returns (grad_mu, grad_rhs, grad_edge_weights). grad_mu already carries
    the clamp subgradient (zero when the forward clamp was active).
    """
    _check_cache(cache)
    g = np.asarray(grad_output, dtype=np.float64)
    if pixel_weights is not None:
        g = g * pixel_weights
    if not np.any(g):
        return 0.0, np.zeros_like(g), np.zeros_like(cache.laplacian.weights)

    lap = cache.laplacian
    z, _, _ = _pcg(lap, cache.mu, g)
    grad_rhs = z
    Lx = lap.matrix @ cache.solution
    grad_mu = 0.0 if cache.clamped else float(-(z @ Lx))
    dx = cache.solution[lap.edge_i] - cache.solution[lap.edge_j]
    dz = z[lap.edge_i] - z[lap.edge_j]
    grad_w = -cache.mu * dz * dx
    return grad_mu, grad_rhs, grad_w


def backward_graph(exemplars: ExemplarPatch, laplacian: SparseLaplacian8,
                   grad_edge_weights: np.ndarray) -> np.ndarray:
    """Chain edge-weight gradients back to the exemplar features.

    d e / d f_n(i) = sum_{j in N(i)} grad_w_ij * w_ij * (f_n(j) - f_n(i)) / eps^2,
    with eps^2 = eps2x / 2; each edge contributes antisymmetrically to both
    endpoints. Returns an (N, m) gradient array.
    """
    f = exemplars.features
    eps_sq = exemplars.eps2x / 2.0
    coef = grad_edge_weights * laplacian.weights / eps_sq
    diff = f[:, laplacian.edge_j] - f[:, laplacian.edge_i]  # (N, E)
    grad = np.zeros_like(f)
    np.add.at(grad, (slice(None), laplacian.edge_i), coef * diff)
    np.add.at(grad, (slice(None), laplacian.edge_j), -coef * diff)
    return grad


def estimate_lambda_max(laplacian: SparseLaplacian8, mu: float,
                        iters: int = 100, seed: int = 0) -> float:
    """Power-iteration estimate of the largest eigenvalue of I + mu*L."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(laplacian.n)
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        w = v + mu * (laplacian.matrix @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0
        v = w / lam
    return lam
