"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as the
criteria execute.
"""
import time

import numpy as np

from mtensor.decomp import (contraction_env, cp_to_multiple,
                            distribute_check, entry_bound, gtri_construct,
                            multiple_product, pad_ranks, pcu_rank_bound,
                            random_factors, rank_bounds, submax,
                            tucker_commutation_gap)
from mtensor.imtd import (empirical_lipschitz, eval_grid, grid_backward,
                          grid_domains, init_imtd, model_certificate)
from mtensor.mlp import backward_batch, forward_batch, init_mlp
from mtensor.pals import PalsConfig, e_step
from mtensor.pcu import (PcuConfig, PointCloud, chamfer, circle_points,
                         extract_points, f_score, fit_frame, fit_sdf, sdf_loss)
from mtensor.rtc import RtcProblem, corrupt, default_gamma, rtc_recover, tv_l1
from mtensor.tensor import psnr, unfold

from _oracles import cp_product, fd_gradient, naive_multiple_product


def report(num, desc, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {num}: {status} - {desc}{detail}")
    assert ok, f"criterion {num} failed: {desc}{detail}"


def smooth_planted(shape, ranks, seed):
    """Planted low-rank tensor with smooth factor profiles, scaled to [0, 1]."""
    rng = np.random.default_rng(seed)
    f = random_factors(shape, ranks, seed=seed)
    for mode in range(len(shape)):
        extent = shape[mode]
        t = np.linspace(0.0, 1.0, extent)
        moved = np.moveaxis(f.factors[mode], mode, -1)
        flat = moved.reshape(-1, extent)
        for k in range(flat.shape[0]):
            prof = np.zeros(extent)
            for w in range(3):
                prof += rng.normal() * np.cos(np.pi * w * t
                                              + rng.uniform(0, 2 * np.pi))
            flat[k] = prof
        f.factors[mode] = np.moveaxis(flat.reshape(moved.shape), -1, mode)
    x = multiple_product(f)
    x -= x.min()
    x /= max(x.max(), 1e-12)
    return x


def outer_bound_tensor(f):
    vecs = []
    for mode in range(f.order):
        moved = np.moveaxis(np.abs(f.factors[mode]), mode, 0)
        vecs.append(moved.reshape(moved.shape[0], -1).sum(axis=1))
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def test_criterion_1_algebraic_identities():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for trial in range(200):
        n = int(rng.integers(3, 6))
        dims = tuple(int(d) for d in rng.integers(1, 6, size=n))
        ranks = tuple(int(r) for r in rng.integers(1, 4, size=n))
        f = random_factors(dims, ranks, seed=trial)
        x = multiple_product(f)

        # defining sum versus the contraction-environment path
        assert np.max(np.abs(x - naive_multiple_product(f))) <= 1e-12

        # unfolding identity for every mode
        for mode in range(n):
            env = contraction_env(f, mode)
            lhs = unfold(x, mode)
            rhs = unfold(f.factors[mode], mode) @ env.matrix.T
            scale = max(np.max(np.abs(lhs)), 1e-12)
            assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale

        # distributivity in a random factor
        mode = int(rng.integers(n))
        f_hat = f.replace_factor(mode,
                                 rng.standard_normal(f.factor_shape(mode)))
        assert distribute_check(f, f_hat, mode) <= 1e-12

        # entry bound dominates every entry
        assert np.all(np.abs(x) <= outer_bound_tensor(f) + 1e-12)

        # zero-padding preserves the product
        padded = pad_ranks(f, tuple(r + 1 for r in ranks))
        assert np.max(np.abs(multiple_product(padded) - x)) <= 1e-12

        # composition with mode matrices commutes
        mats = [rng.standard_normal((int(rng.integers(1, 4)), d))
                for d in dims]
        assert tucker_commutation_gap(f, mats) <= 1e-11

        # CP embedding equals the direct rank-one sum
        r_cp = int(rng.integers(1, 4))
        mats = [rng.standard_normal((d, r_cp)) for d in dims]
        emb = cp_to_multiple(mats)
        assert np.max(np.abs(multiple_product(emb) - cp_product(mats))) <= 1e-12

    # anchor the per-index bound op against the vectorized scan
    f = random_factors((3, 3, 3), (2, 2, 2), seed=7)
    bound = outer_bound_tensor(f)
    for idx in [(0, 0, 0), (2, 1, 0), (1, 2, 2)]:
        assert abs(entry_bound(f, idx) - bound[idx]) <= 1e-12

    elapsed = time.perf_counter() - t0
    report(1, "algebraic identities on 200 random instances",
           elapsed < 30.0, f" ({elapsed:.1f}s)")


def test_criterion_2_constructive_rank():
    rng = np.random.default_rng(77)
    t0 = time.perf_counter()
    for trial in range(50):
        n = int(rng.integers(3, 6))
        dims = tuple(int(d) for d in rng.integers(1, 6, size=n))
        x = rng.standard_normal(dims)
        g = gtri_construct(x)
        assert g.ranks == (submax(dims),) * n
        assert np.max(np.abs(multiple_product(g) - x)) <= 1e-12
    elapsed = time.perf_counter() - t0
    report(2, "constructive decomposition exact at uniform rank submax",
           elapsed < 10.0, f" ({elapsed:.1f}s)")


def test_criterion_3_gradient_suite():
    rng = np.random.default_rng(33)
    t0 = time.perf_counter()

    # network backward, 1e-5 relative on significant entries
    net = init_mlp(6, 3, 4, omega0=3.0, seed=1)
    xs = rng.uniform(-1, 1, size=5)
    cot = rng.standard_normal((4, 5))
    _, cache = forward_batch(net, xs)
    grads = backward_batch(net, cache, cot)
    mlp_value = lambda: float(np.sum(cot * forward_batch(net, xs)[0]))
    mlp_ok = True
    for li, w in enumerate(net.weights):
        for idx in np.ndindex(*w.shape):
            an = grads[li][idx]
            if abs(an) <= 1e-8:
                continue
            fd = fd_gradient(mlp_value, w, idx, 1e-5)
            mlp_ok &= abs(fd - an) / abs(an) < 1e-5

    # grid backward, 1e-4 relative on 20 random weights
    model = init_imtd((2, 3, 2), grid_domains((4, 4, 4)), hidden=8, depth=3,
                      seed=2)
    coords = [np.arange(4.0)] * 3
    gcot = rng.standard_normal((4, 4, 4))
    flat = [g for per in grid_backward(model, coords, gcot) for g in per]
    params = model.parameters()
    grid_value = lambda: float(np.sum(gcot * eval_grid(model, coords)))
    grid_ok = True
    for _ in range(20):
        pi = rng.integers(len(params))
        w = params[pi]
        idx = tuple(rng.integers(s) for s in w.shape)
        fd = fd_gradient(grid_value, w, idx, 1e-6)
        grid_ok &= abs(fd - flat[pi][idx]) <= 1e-4 * max(abs(flat[pi][idx]),
                                                         1e-6)

    # smoothed TV gradient, 1e-5 relative with an FD-noise floor
    xtv = rng.standard_normal((4, 4, 3))
    _, tv_grad = tv_l1(xtv, 1e-3)
    tv_value = lambda: tv_l1(xtv, 1e-3)[0]
    tv_ok = True
    for _ in range(12):
        idx = tuple(rng.integers(s) for s in xtv.shape)
        fd = fd_gradient(tv_value, xtv, idx, 1e-5)
        tv_ok &= abs(fd - tv_grad[idx]) <= 1e-5 * max(abs(tv_grad[idx]), 1e-2)

    # SDF loss gradient, 1e-3 relative on 20 random weights
    sdf_model = init_imtd((3, 3), [(-1, 1)] * 2, hidden=6, depth=3, seed=3,
                          out_scale=4.0)
    cloud = circle_points(10)
    pts = fit_frame(cloud).normalize(cloud.points)
    cfg = PcuConfig(lam=2.0, gamma=1.0, n_eikonal=12, n_exterior=12)
    _, sgrads = sdf_loss(sdf_model, pts, cfg, seed=4)
    sflat = [g for per in sgrads for g in per]
    sparams = sdf_model.parameters()
    sdf_value = lambda: sdf_loss(sdf_model, pts, cfg, seed=4)[0]
    sdf_ok = True
    for _ in range(20):
        pi = rng.integers(len(sparams))
        w = sparams[pi]
        idx = tuple(rng.integers(s) for s in w.shape)
        fd = fd_gradient(sdf_value, w, idx, 1e-5)
        sdf_ok &= abs(fd - sflat[pi][idx]) <= 1e-3 * max(abs(sflat[pi][idx]),
                                                         1e-4)

    elapsed = time.perf_counter() - t0
    ok = mlp_ok and grid_ok and tv_ok and sdf_ok and elapsed < 60.0
    report(3, "reverse-mode gradients match finite differences", ok,
           f" (mlp {mlp_ok}, grid {grid_ok}, tv {tv_ok}, sdf {sdf_ok}, "
           f"{elapsed:.1f}s)")


def test_criterion_4_lipschitz_suite():
    t0 = time.perf_counter()
    violations = 0
    checked = 0

    rng = np.random.default_rng(44)
    for trial in range(20):
        n = int(rng.integers(2, 5))
        ranks = (int(rng.integers(1, 4)),) * n
        model = init_imtd(ranks, [(-1, 1)] * n,
                          hidden=int(rng.integers(4, 17)),
                          depth=int(rng.integers(2, 5)),
                          omega0=float(rng.uniform(1.0, 8.0)), seed=trial)
        ratio = empirical_lipschitz(model, 10000, seed=trial)
        checked += 1
        violations += ratio > model_certificate(model).delta

    # trained model 1: a short robust-completion run
    x = smooth_planted((8, 8, 3), (2, 2, 2), seed=9)
    m, mask = corrupt(x, 0.6, 0.1, seed=9)
    cfg = PalsConfig(lam=1e-3, gamma=default_gamma(m), inner_steps=10,
                     outer_iters=5, seed=9)
    _, _, state = rtc_recover(RtcProblem(m, mask, ranks=(3, 3, 3), config=cfg,
                                         hidden=16, depth=3))
    ratio = empirical_lipschitz(state.model, 10000, seed=1)
    checked += 1
    violations += ratio > model_certificate(state.model).delta

    # trained model 2: a short SDF fit
    gt = circle_points(64)
    sparse = PointCloud(gt.points[::4])
    pcfg = PcuConfig(iters=150, n_eikonal=64, n_exterior=64, seed=2)
    sdf_model, _, _ = fit_sdf(sparse, pcfg)
    ratio = empirical_lipschitz(sdf_model, 10000, seed=2)
    checked += 1
    violations += ratio > model_certificate(sdf_model).delta

    elapsed = time.perf_counter() - t0
    report(4, "empirical Lipschitz ratio below certificate",
           violations == 0 and checked == 22 and elapsed < 60.0,
           f" ({checked} models, {violations} violations, {elapsed:.1f}s)")


def test_criterion_5_pals_descent():
    t0 = time.perf_counter()

    # closed-form perturbation step versus 1-D grid search
    rng = np.random.default_rng(55)
    grid = np.arange(-3.0, 3.0, 1e-5)
    worst = 0.0
    for _ in range(1000):
        a, ep, m = rng.uniform(-1.2, 1.2, size=3)
        gamma = rng.uniform(0.0, 2.0)
        eta = rng.uniform(0.1, 3.0)
        observed = bool(rng.random() < 0.5)
        if observed:
            obj = gamma * np.abs(grid) + (a + grid - m) ** 2 \
                + 0.5 * eta * (grid - ep) ** 2
        else:
            obj = gamma * np.abs(grid) + 0.5 * eta * (grid - ep) ** 2
        want = grid[np.argmin(obj)]
        got = e_step(np.array([a]), np.array([ep]), np.array([m]),
                     np.array([observed]), gamma, eta)[0]
        worst = max(worst, abs(got - want))
    estep_ok = worst <= 1e-4

    mono_ok = True
    trend_ok = True
    for seed in range(10):
        x = smooth_planted((16, 16, 3), (3, 3, 3), seed=500 + seed)
        m, mask = corrupt(x, 0.4, 0.2, seed=seed)
        cfg = PalsConfig(lam=1e-3, gamma=default_gamma(m), eta=0.1,
                         inner_steps=30, outer_iters=20, tol=0.0,
                         patience=1000, seed=seed)
        _, _, state = rtc_recover(RtcProblem(m, mask, ranks=(3, 3, 3),
                                             config=cfg, hidden=32, depth=3))
        v = [h.lyapunov for h in state.history]
        slack = 1e-8 * abs(v[0])
        mono_ok &= all(v[i + 1] <= v[i] + slack for i in range(len(v) - 1))
        steps = [h.a_step + h.e_step for h in state.history[1:]]
        trend_ok &= np.mean(steps[-5:]) < np.mean(steps[:5])

    elapsed = time.perf_counter() - t0
    ok = estep_ok and mono_ok and trend_ok and elapsed < 300.0
    report(5, "Lyapunov descent and step-norm trend over 10 seeded runs", ok,
           f" (e-step worst {worst:.2e}, mono {mono_ok}, trend {trend_ok}, "
           f"{elapsed:.1f}s)")


def test_criterion_6_rtc_recovery():
    t0 = time.perf_counter()
    psnrs = []
    for seed in range(5):
        x = smooth_planted((32, 32, 3), (3, 3, 3), seed=600 + seed)
        m, mask = corrupt(x, 0.4, 0.2, seed=seed)
        cfg = PalsConfig(lam=1e-3, gamma=default_gamma(m), eta=0.1,
                         inner_steps=50, outer_iters=100, seed=seed)
        x_hat, _, _ = rtc_recover(RtcProblem(m, mask, config=cfg))
        psnrs.append(psnr(x_hat, x, peak=1.0))
    median = float(np.median(psnrs))
    elapsed = time.perf_counter() - t0
    listing = ", ".join(f"{p:.1f}" for p in psnrs)
    report(6, "robust completion of planted 32x32x3 at sr 0.4, sigma 0.2",
           median >= 25.0 and elapsed < 600.0,
           f" (median {median:.2f} dB over [{listing}], {elapsed:.0f}s)")


def test_criterion_7_pcu_upsampling():
    t0 = time.perf_counter()
    gt = circle_points(320)
    cd_in, cd_out, fscores, on_curve = [], [], [], []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sparse = PointCloud(gt.points[rng.choice(320, 32, replace=False)])
        cfg = PcuConfig(seed=seed)
        model, frame, _ = fit_sdf(sparse, cfg)
        dense = extract_points(model, frame, cfg, seed=seed + 1)
        cd_in.append(chamfer(sparse, gt))
        cd_out.append(chamfer(dense, gt))
        fscores.append(f_score(dense, gt, 0.05))
        # analytic-distance check: survivors should hug the unit circle
        radius = np.sqrt(np.sum(dense.points ** 2, axis=1))
        on_curve.append(float(np.mean(np.abs(radius - 1.0) < 0.05)))
    med_in = float(np.median(cd_in))
    med_out = float(np.median(cd_out))
    med_f = float(np.median(fscores))
    med_curve = float(np.median(on_curve))
    elapsed = time.perf_counter() - t0
    ok = (med_out < med_in and med_f >= 0.9 and med_curve >= 0.95
          and elapsed < 600.0)
    report(7, "circle upsampling beats the sparse input", ok,
           f" (CD {med_out:.4f} < {med_in:.4f}, F {med_f:.3f}, "
           f"on-curve {med_curve:.3f}, {elapsed:.0f}s)")


def test_criterion_8_rank_heuristics():
    rb = rank_bounds((512, 512, 3))
    ok = (abs(rb.r_min - 7.54) <= 1e-2 and abs(rb.r_max - 18.45) <= 1e-2
          and pcu_rank_bound(1000) == 10)
    report(8, "rank heuristic spot checks", ok,
           f" (r_min {rb.r_min:.3f}, r_max {rb.r_max:.3f}, "
           f"pcu(1000) {pcu_rank_bound(1000)})")
