import json

import numpy as np
import pytest

from mtensor.decomp import multiple_product, random_factors
from mtensor.imtd import eval_grid, grid_domains, init_imtd
from mtensor.pals import (HistoryRecord, PalsConfig, PalsDivergence,
                          PalsProblem, PalsState, e_step, history_jsonl,
                          jacobian_rank, pals_run, theta_step)
from mtensor.rtc import corrupt


def e_step_oracle(a, e_prev, m, observed, gamma, eta):
    grid = np.arange(-3.0, 3.0, 1e-5)
    if observed:
        f = gamma * np.abs(grid) + (a + grid - m) ** 2 \
            + 0.5 * eta * (grid - e_prev) ** 2
    else:
        f = gamma * np.abs(grid) + 0.5 * eta * (grid - e_prev) ** 2
    return grid[np.argmin(f)]


def smooth_tensor(shape, seed):
    rng = np.random.default_rng(seed)
    f = random_factors(shape, (3,) * len(shape), seed=seed)
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


def small_problem(seed=0, shape=(8, 8, 3), ranks=(3, 3, 3), sr=0.5, sigma=0.2):
    x = smooth_tensor(shape, seed)
    m, mask = corrupt(x, sr, sigma, seed=seed)
    model = init_imtd(ranks, grid_domains(shape), hidden=16, depth=3, seed=seed)
    coords = [np.arange(s, dtype=np.float64) for s in shape]
    return x, PalsProblem(m, mask.mask, model, coords)


class TestEStep:
    def test_spec_scalar_case(self):
        got = e_step(np.array([0.0]), np.array([0.0]), np.array([1.0]),
                     np.array([True]), 0.5, 1.0)
        assert got[0] == pytest.approx(0.5, abs=1e-12)

    def test_matches_grid_search(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, ep, m = rng.uniform(-1.2, 1.2, size=3)
            gamma = rng.uniform(0.0, 2.0)
            eta = rng.uniform(0.1, 3.0)
            obs = bool(rng.random() < 0.5)
            got = e_step(np.array([a]), np.array([ep]), np.array([m]),
                         np.array([obs]), gamma, eta)[0]
            want = e_step_oracle(a, ep, m, obs, gamma, eta)
            assert abs(got - want) <= 1e-4

    def test_gamma_zero_unobserved_keeps_previous(self):
        e_prev = np.array([0.7, -0.4])
        got = e_step(np.zeros(2), e_prev, np.zeros(2),
                     np.array([False, False]), 0.0, 0.5)
        np.testing.assert_allclose(got, e_prev)

    def test_huge_gamma_shrinks_to_zero(self):
        rng = np.random.default_rng(2)
        got = e_step(rng.standard_normal(10), rng.standard_normal(10),
                     rng.standard_normal(10), rng.random(10) > 0.5,
                     1e9, 1.0)
        assert not np.any(got)

    def test_eta_must_be_positive(self):
        with pytest.raises(ValueError):
            e_step(np.zeros(1), np.zeros(1), np.zeros(1),
                   np.array([True]), 1.0, 0.0)


class TestThetaStep:
    def test_zero_learning_rate_keeps_model(self):
        _, problem = small_problem(seed=3)
        cfg = PalsConfig(lam=0.0, gamma=0.1, eta=0.1, inner_steps=5, lr=0.0)
        a0 = eval_grid(problem.model, problem.coords)
        state = PalsState(problem.model.copy(), np.zeros_like(problem.observed),
                          a0)
        before = [w.copy() for w in state.model.parameters()]
        a = theta_step(state, problem, cfg)
        np.testing.assert_array_equal(a, a0)
        for w, w0 in zip(state.model.parameters(), before):
            np.testing.assert_array_equal(w, w0)

    def test_larger_eta_shrinks_steps(self):
        _, problem = small_problem(seed=4)
        means = []
        for eta in (1.0, 1e2, 1e4):
            cfg = PalsConfig(lam=0.0, gamma=0.1, eta=eta, inner_steps=20,
                             outer_iters=8, tol=0.0, patience=1000)
            st = pals_run(problem, cfg)
            means.append(np.mean([h.a_step for h in st.history[1:]]))
        assert means[0] >= means[1] >= means[2]

    def test_subproblem_never_increases(self):
        _, problem = small_problem(seed=5)
        cfg = PalsConfig(lam=0.0, gamma=0.2, eta=0.1, inner_steps=15,
                         outer_iters=10, tol=0.0, patience=1000)
        st = pals_run(problem, cfg)
        # G decreases up to the closed-form E-step's effect; the Lyapunov
        # sequence must be monotone throughout
        v = [h.lyapunov for h in st.history]
        slack = 1e-8 * abs(v[0])
        assert all(v[i + 1] <= v[i] + slack for i in range(len(v) - 1))


class TestPalsRun:
    def test_frozen_perturbation_reduces_to_plain_fit(self):
        _, problem = small_problem(seed=6, sigma=0.0, sr=1.0)
        cfg = PalsConfig(lam=0.0, gamma=0.0, eta=0.1, inner_steps=20,
                         outer_iters=10, tol=0.0, patience=1000)
        st = pals_run(problem, cfg)
        assert not np.any(st.e)
        objs = [h.objective for h in st.history]
        assert objs[-1] < objs[0]

    def test_lyapunov_descent_and_step_trend(self):
        _, problem = small_problem(seed=7)
        cfg = PalsConfig(lam=1e-3, gamma=0.15, eta=0.1, inner_steps=25,
                         outer_iters=15, tol=0.0, patience=1000, seed=7)
        st = pals_run(problem, cfg)
        v = [h.lyapunov for h in st.history]
        g = [h.objective for h in st.history]
        slack = 1e-8 * abs(v[0])
        assert all(v[i + 1] <= v[i] + slack for i in range(len(v) - 1))
        # guarded alternation gives the stronger per-iteration inequality
        for i, h in enumerate(st.history[1:], start=1):
            assert g[i] <= g[i - 1] - 0.5 * cfg.eta * (h.a_step + h.e_step) \
                + slack
        steps = [h.a_step + h.e_step for h in st.history[1:]]
        assert np.mean(steps[-5:]) < np.mean(steps[:5])
        # strict decrease whenever the steps are nonzero
        for i, h in enumerate(st.history[1:], start=1):
            if h.a_step + h.e_step > 1e-14:
                assert v[i] < v[i - 1]

    def test_infinite_gamma_freezes_perturbation(self):
        _, problem = small_problem(seed=10, sigma=0.0)
        cfg = PalsConfig(lam=0.0, gamma=np.inf, eta=0.1, inner_steps=15,
                         outer_iters=5, tol=0.0, patience=1000)
        st = pals_run(problem, cfg)
        assert not np.any(st.e)
        objs = [h.objective for h in st.history]
        assert objs[-1] < objs[0]

    @pytest.mark.filterwarnings("ignore:invalid value encountered")
    def test_divergent_model_raises_with_history(self):
        _, problem = small_problem(seed=8)
        problem.model.nets[0].weights[0][:] = np.inf
        cfg = PalsConfig(inner_steps=2, outer_iters=3)
        with pytest.raises((PalsDivergence, FloatingPointError)):
            pals_run(problem, cfg)

    def test_theta_divergence_carries_history(self):
        _, problem = small_problem(seed=9)
        cfg = PalsConfig(lam=0.0, gamma=0.1, eta=0.1, inner_steps=2,
                         outer_iters=2)
        state = PalsState(problem.model.copy(),
                          np.zeros_like(problem.observed),
                          eval_grid(problem.model, problem.coords),
                          history=[HistoryRecord(0, 1.0, 1.0, 0.0, 0.0)])
        state.model.nets[0].weights[0][:] = np.nan
        with pytest.raises(PalsDivergence) as err:
            theta_step(state, problem, cfg)
        assert err.value.history is state.history


class TestHistory:
    def test_jsonl_records(self):
        history = [HistoryRecord(0, 1.0, 1.0, 0.0, 0.0),
                   HistoryRecord(1, 0.5, 0.6, 0.1, 0.05)]
        lines = history_jsonl(history).strip().split("\n")
        assert len(lines) == 2
        rec = json.loads(lines[1])
        assert rec == {"iteration": 1, "objective": 0.5, "lyapunov": 0.6,
                       "a_step": 0.1, "e_step": 0.05}


class TestJacobianDiagnostic:
    def test_toy_model_rank(self):
        model = init_imtd((1, 1, 1), grid_domains((3, 3, 3)), hidden=3,
                          depth=2, seed=10)
        coords = [np.arange(3.0)] * 3
        n_params = sum(w.size for w in model.parameters())
        rank = jacobian_rank(model, coords)
        assert 1 <= rank <= min(27, n_params)

    def test_refuses_large_models(self):
        model = init_imtd((2, 2, 2), grid_domains((4, 4, 4)), hidden=32,
                          depth=3, seed=11)
        with pytest.raises(ValueError, match="diagnostic"):
            jacobian_rank(model, [np.arange(4.0)] * 3)
