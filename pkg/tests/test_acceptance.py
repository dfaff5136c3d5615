"""Acceptance gate: one test per shipping criterion, each printing a single
pass/fail line (run with -s or read the captured output). Tolerances are
pinned here and nowhere else; the oracles (dense solves, explicit window
loops, finite differences) are independent of the code paths under test.
"""

import math
import time

import numpy as np

from glrdenoise import gradcheck as gc
from glrdenoise import graph_layer as gl
from glrdenoise import model as md
from glrdenoise import patches as pp
from glrdenoise import training as tr
from glrdenoise.autodiff import Tensor
from glrdenoise.harness import NoiseSpec, add_awgn, psnr, ssim, synthetic_scene
from glrdenoise.params import build_params
from test_harness import ssim_reference


def _verdict(num: int, label: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"criterion {num} ({label}): {status} [{detail}]")
    assert ok, f"criterion {num} ({label}): {detail}"


def test_criterion_1_gradient_fidelity():
    """Analytic layer gradients vs central finite differences with a dense
    direct-solve oracle: 50 random 6x6 patches, 2 exemplars, mu in (0, 10),
    every component within relative error 1e-5; the closed-form two-vertex
    case gives d e / d mu = -1/27 to 1e-10; all under 60 seconds."""
    start = time.monotonic()
    side, n_ex, m = 6, 2, 36
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        features = rng.standard_normal((n_ex, m)) * 0.5
        mu = float(rng.uniform(0.01, 10.0))
        rhs = rng.standard_normal(m)
        x_gt = rng.standard_normal(m)
        c = rng.uniform(0.5, 1.5, m)

        ex = gl.ExemplarPatch(features=features.copy(), eps2x=1.0)
        lap = gl.build_patch_laplacian(ex, side)
        cache = gl.solve_qp(lap, mu, rhs)
        g = (c * c) * (cache.solution - x_gt)
        grad_mu, grad_rhs, grad_w = gl.backward_qp(cache, g)
        grad_f = gl.backward_graph(ex, lap, grad_w)

        def loss(features=features, mu=mu, rhs=rhs):
            return gc._patch_loss_dense(features, mu, rhs, x_gt, c, 1.0, side)

        mu_box = np.array([mu])
        fd_mu = gc.central_diff(lambda: loss(mu=mu_box[0]), mu_box)
        fd_rhs = gc.central_diff(loss, rhs)
        fd_f = gc.central_diff(loss, features)
        w0 = lap.weights.copy()

        def loss_w():
            lw = gl.assemble_laplacian(m, lap.edge_i, lap.edge_j, w0)
            x = np.linalg.solve(np.eye(m) + mu * lw.matrix.toarray(), rhs)
            d = c * (x - x_gt)
            return 0.5 * float(d @ d)

        fd_w = gc.central_diff(loss_w, w0)
        worst = max(worst,
                    gc.rel_err(np.array([grad_mu]), fd_mu),
                    gc.rel_err(grad_rhs, fd_rhs),
                    gc.rel_err(grad_w, fd_w),
                    gc.rel_err(grad_f, fd_f))

    lap2 = gl.assemble_laplacian(2, [0], [1], [1.0])
    cache2 = gl.solve_qp(lap2, 1.0, np.array([1.0, 0.0]))
    gm2, _, _ = gl.backward_qp(cache2, cache2.solution - np.array([0.5, 0.5]))
    two_vertex_err = abs(gm2 - (-1.0 / 27.0))
    elapsed = time.monotonic() - start
    ok = worst < 1e-5 and two_vertex_err < 1e-10 and elapsed < 60.0
    _verdict(1, "gradient fidelity", ok,
             f"max rel err {worst:.2e} < 1e-5, two-vertex err "
             f"{two_vertex_err:.1e} < 1e-10, {elapsed:.1f}s < 60s")


def test_criterion_2_conditioning_bound():
    """200 random patches: power-iteration lambda_max(I + mu L) never exceeds
    1 + 2 mu d_max (1e-8 slack), and after the clamp the condition number
    stays at or below 250; under 60 seconds."""
    start = time.monotonic()
    worst_gap = -math.inf
    worst_kappa = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        side = int(rng.integers(3, 8))
        features = rng.standard_normal((2, side * side)) * rng.uniform(0.2, 1.5)
        lap = gl.build_patch_laplacian(gl.ExemplarPatch(features), side)
        mu_raw = float(rng.uniform(0.0, 500.0))
        lam = gl.estimate_lambda_max(lap, mu_raw, seed=seed)
        worst_gap = max(worst_gap, lam - (1.0 + 2.0 * mu_raw * lap.d_max))
        mu, _ = gl.clamp_mu(mu_raw, lap, kappa_max=250.0)
        # the smallest eigenvalue of I + mu L is exactly 1, so lambda_max is
        # the condition number
        worst_kappa = max(worst_kappa, gl.estimate_lambda_max(lap, mu, seed=seed))
    elapsed = time.monotonic() - start
    ok = worst_gap <= 1e-8 and worst_kappa <= 250.0 + 1e-8 and elapsed < 60.0
    _verdict(2, "conditioning bound", ok,
             f"max bound excess {worst_gap:.2e} <= 1e-8, max clamped kappa "
             f"{worst_kappa:.2f} <= 250, {elapsed:.1f}s < 60s")


def test_criterion_3_solver_oracle():
    """100 random systems with up to 100 vertices: the preconditioned CG
    solution matches a dense direct solve to max-abs 1e-8, preserves the
    mean of the input to 1e-9, and never increases the graph quadratic."""
    worst_abs = 0.0
    worst_mean = 0.0
    smooth_ok = True
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        side = int(rng.integers(2, 11))  # up to 100 vertices
        features = rng.standard_normal((2, side * side)) * 0.6
        lap = gl.build_patch_laplacian(gl.ExemplarPatch(features), side)
        mu = float(rng.uniform(0.0, 15.0))
        rhs = rng.standard_normal(lap.n)
        x = gl.solve_qp(lap, mu, rhs).solution
        dense = np.linalg.solve(np.eye(lap.n) + mu * lap.matrix.toarray(), rhs)
        worst_abs = max(worst_abs, float(np.max(np.abs(x - dense))))
        worst_mean = max(worst_mean, abs(float(np.mean(x) - np.mean(rhs))))
        if gl.regularizer_value(lap, x) > gl.regularizer_value(lap, rhs) + 1e-12:
            smooth_ok = False
    ok = worst_abs < 1e-8 and worst_mean < 1e-9 and smooth_ok
    _verdict(3, "solver oracle", ok,
             f"max |cg - dense| {worst_abs:.2e} < 1e-8, max mean drift "
             f"{worst_mean:.2e} < 1e-9, quadratic never increased: {smooth_ok}")


def test_criterion_4_classic_mode_denoising():
    """A 180x180 piecewise-smooth test image corrupted with seeded AWGN at
    sigma 25: grid-searching the global regularization weight improves PSNR
    by at least 1 dB over the noisy input."""
    clean = synthetic_scene(180, 180, seed=3)
    noisy = add_awgn(clean, NoiseSpec(sigma=25.0, seed=7))
    config = md.CascadeConfig(mode="classic", cascades=1)
    best_mu, out = md.classic_grid_search(noisy, clean, config)
    p_noisy = psnr(clean, noisy)
    p_out = psnr(clean, out)
    ok = p_out >= p_noisy + 1.0
    _verdict(4, "classic-mode denoising", ok,
             f"noisy {p_noisy:.2f} dB -> denoised {p_out:.2f} dB at mu "
             f"{best_mu:g}, gain {p_out - p_noisy:.2f} dB >= 1 dB")


def test_criterion_5_desk_scale_trainability():
    """20 synthetic 64x64 images, sigma 25, two cascades, 10 epochs on one
    core in under 30 minutes: the epoch-mean loss drops by at least 20% from
    epoch 1 to epoch 10 and the trained model beats the noisy input's PSNR
    on a held-out image."""
    start = time.monotonic()
    images = [synthetic_scene(64, 64, seed=i) for i in range(20)]
    config = tr.TrainingConfig(sigma=25.0, cascades=2, epochs=10, batch_size=4,
                               lr_epochs=(3, 6, 8, 9, 10), seed=0)
    params, _, log = tr.train(images, config)
    elapsed = time.monotonic() - start

    drop = 1.0 - log.epoch_losses[-1] / log.epoch_losses[0]
    held_clean = synthetic_scene(64, 64, seed=123)
    held_noisy = add_awgn(held_clean, NoiseSpec(sigma=25.0, seed=9))
    out = md.cascade_forward(Tensor(held_noisy), params,
                             config.cascade_config()).data
    p_noisy = psnr(held_clean, held_noisy)
    p_out = psnr(held_clean, out)
    ok = elapsed < 1800.0 and drop >= 0.20 and p_out > p_noisy
    _verdict(5, "desk-scale trainability", ok,
             f"loss {log.epoch_losses[0]:.3e} -> {log.epoch_losses[-1]:.3e} "
             f"({100 * drop:.0f}% drop >= 20%), held-out {p_noisy:.2f} dB -> "
             f"{p_out:.2f} dB, {elapsed:.0f}s < 1800s")


def test_criterion_6_pipeline_invariants():
    """Patch decomposition round-trips bit-exactly, a constant image is a
    fixed point of the regularization solve to solver tolerance, and reruns
    with fixed seeds are bit-identical end to end."""
    rng = np.random.default_rng(0)
    plane = rng.standard_normal((180, 180))
    plan = pp.plan_patches(180, 180)
    round_trip = np.array_equal(
        pp.aggregate_patches(pp.extract_patches(plane, plan), plan), plane)

    config = md.CascadeConfig(mode="classic", cascades=1)
    const = np.full((64, 64), 0.37)
    fixed_point_err = float(np.max(np.abs(md.classic_block(const, config) - const)))
    fixed_point = fixed_point_err < 1e-8

    noisy = add_awgn(synthetic_scene(64, 64, seed=4), NoiseSpec(25.0, seed=5))
    classic_same = np.array_equal(md.classic_cascade(noisy, config),
                                  md.classic_cascade(noisy, config))
    arch_params = build_params(tr.TrainingConfig().architecture(), seed=0)
    learned_cfg = md.CascadeConfig(cascades=2)
    a = md.cascade_forward(Tensor(noisy), arch_params, learned_cfg).data
    b = md.cascade_forward(Tensor(noisy), arch_params, learned_cfg).data
    noise_same = np.array_equal(
        add_awgn(np.zeros((32, 32)), NoiseSpec(25.0, seed=6)),
        add_awgn(np.zeros((32, 32)), NoiseSpec(25.0, seed=6)))
    rerun_same = classic_same and np.array_equal(a, b) and noise_same

    ok = round_trip and fixed_point and rerun_same
    _verdict(6, "pipeline invariants", ok,
             f"round trip exact: {round_trip}, constant fixed-point err "
             f"{fixed_point_err:.1e} < 1e-8, seeded reruns bit-identical: "
             f"{rerun_same}")


def test_criterion_7_metric_fixtures():
    """PSNR of a uniform 25/255 error is 20.17 dB within 0.01; SSIM of an
    image with itself is 1.0; SSIM on a fixture matches an independent
    second implementation within 1e-6."""
    ref = synthetic_scene(32, 32, seed=1)
    p = psnr(ref, ref + 25.0 / 255.0)
    psnr_ok = abs(p - 20.17) < 0.01

    self_ssim = ssim(ref, ref.copy())
    self_ok = abs(self_ssim - 1.0) < 1e-12

    test = ref + np.random.default_rng(7).standard_normal((32, 32)) * 0.1
    ours = ssim(ref, test)
    oracle = ssim_reference(ref, test)
    cross_err = abs(ours - oracle)
    cross_ok = cross_err < 1e-6

    ok = psnr_ok and self_ok and cross_ok
    _verdict(7, "metric fixtures", ok,
             f"uniform-error PSNR {p:.4f} dB within 0.01 of 20.17, "
             f"self-SSIM {self_ssim:.12f}, cross-implementation err "
             f"{cross_err:.1e} < 1e-6")
