"""Proximal alternating least squares for two-block reconstruction models.

The solver alternates between the network block (inexact Adam descent on
the proximally regularized subproblem, with an acceptance guard that never
takes an ascent step) and the perturbation block (exact closed-form
shrinkage).  The proximal term penalizes the *output* tensor, not the
weights, so the Lyapunov function

    V_k = G_k + (eta/2) * (a_k + e_k),

with squared step norms ``a_k``, ``e_k``, decreases at every iteration up
to inner-solver slack.
"""
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .imtd import eval_grid, grid_backward_from, grid_forward
from .kernels import e_step_kernel
from .mlp import AdamState, adam_step
from .tensor import l1_norm


class PalsDivergence(RuntimeError):
    """Raised when an iterate becomes non-finite; carries the history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class PalsConfig:
    lam: float = 1e-3
    gamma: float = 1e-2
    eta: float = 0.1
    inner_steps: int = 50
    outer_iters: int = 100
    tol: float = 1e-6
    patience: int = 3
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.eta <= 0:
            raise ValueError("proximal parameter eta must be positive")
        if self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class PalsProblem:
    """Masked quadratic fidelity plus optional smooth regularizer.

    ``smooth_reg`` maps the current output tensor to ``(value, gradient)``;
    pass ``None`` for an unregularized fit.
    """

    observed: np.ndarray
    mask: np.ndarray
    model: object
    coords: list
    smooth_reg: object = None

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.observed.shape:
            raise ValueError("mask and observed shapes differ")

    def fidelity(self, a, e):
        r = np.where(self.mask, a + e - self.observed, 0.0)
        return float(np.sum(r * r))

    def fidelity_grad_a(self, a, e):
        return 2.0 * np.where(self.mask, a + e - self.observed, 0.0)

    def reg(self, a):
        if self.smooth_reg is None:
            return 0.0, None
        return self.smooth_reg(a)


@dataclass
class HistoryRecord:
    iteration: int
    objective: float
    lyapunov: float
    a_step: float
    e_step: float


@dataclass
class PalsState:
    model: object
    e: np.ndarray
    a_prev: np.ndarray
    history: list = field(default_factory=list)
    adam: AdamState = None
    lr_scale: float = 1.0


def e_step(a, e_prev, m, mask, gamma, eta):
    """Exact minimizer of the perturbation subproblem, elementwise.

    Observed entries shrink the proximally averaged residual; unobserved
    entries shrink the previous iterate alone.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    return e_step_kernel(np.asarray(a, dtype=np.float64),
                         np.asarray(e_prev, dtype=np.float64),
                         np.asarray(m, dtype=np.float64),
                         np.asarray(mask, dtype=bool),
                         float(gamma), float(eta))


def _subproblem_value(problem, cfg, a, e, a_anchor):
    val = problem.fidelity(a, e)
    if cfg.lam > 0 and problem.smooth_reg is not None:
        val += cfg.lam * problem.reg(a)[0]
    val += 0.5 * cfg.eta * float(np.sum((a - a_anchor) ** 2))
    return val


def theta_step(state, problem, cfg):
    """Inexact network update that never accepts an ascent step.

    Runs ``cfg.inner_steps`` Adam iterations on the proximal subproblem
    and keeps the best iterate seen, the previous weights included, so
    the accepted subproblem objective never exceeds its starting value --
    the descent inequality the convergence argument relies on.  When no
    inner iterate improves, the learning rate is backed off for later
    outer iterations instead of retrying the same rejected trajectory.

    Returns the output tensor of the accepted iterate.
    """
    a_anchor = state.a_prev
    e = state.e
    best_val = _subproblem_value(problem, cfg, a_anchor, e, a_anchor)
    best_params = [w.copy() for w in state.model.parameters()]
    best_a = a_anchor
    progressed = False
    if state.adam is None:
        state.adam = AdamState.for_params(state.model.parameters(),
                                          lr=cfg.lr * state.lr_scale)

    params = state.model.parameters()
    try:
        for _ in range(cfg.inner_steps):
            ge = grid_forward(state.model, problem.coords)
            a = ge.tensor
            val = _subproblem_value(problem, cfg, a, e, a_anchor)
            if val < best_val:
                best_val = val
                best_params = [w.copy() for w in params]
                best_a = a
                progressed = True
            cot = problem.fidelity_grad_a(a, e)
            if cfg.lam > 0 and problem.smooth_reg is not None:
                cot = cot + cfg.lam * problem.reg(a)[1]
            cot = cot + cfg.eta * (a - a_anchor)
            grads = grid_backward_from(state.model, ge, cot)
            adam_step(state.adam, params,
                      [g for per_net in grads for g in per_net])
        a = eval_grid(state.model, problem.coords)
    except FloatingPointError as exc:
        raise PalsDivergence(f"theta step diverged: {exc}",
                             state.history) from exc
    final_val = _subproblem_value(problem, cfg, a, e, a_anchor)
    if not np.isfinite(final_val):
        raise PalsDivergence("theta step produced a non-finite objective",
                             state.history)
    if final_val < best_val:
        # the live weights are the best iterate; momentum stays valid
        best_a = a
        progressed = True
    else:
        state.model.set_parameters(best_params)
        state.adam = None  # momentum no longer matches the weights
    if progressed:
        state.lr_scale = min(state.lr_scale * 1.1, 1.0)
    else:
        # the whole trajectory ascended: retry later with smaller steps
        state.lr_scale = max(state.lr_scale * 0.5, 2.0 ** -8)
    return best_a


def _objective(problem, cfg, a, e):
    val = problem.fidelity(a, e)
    if cfg.lam > 0 and problem.smooth_reg is not None:
        val += cfg.lam * problem.reg(a)[0]
    val += cfg.gamma * l1_norm(e) if np.isfinite(cfg.gamma) else 0.0
    return val


def pals_run(problem, cfg):
    """Alternate theta and perturbation steps until tolerance or budget.

    Returns a :class:`PalsState` whose history carries one record per
    iteration: objective ``G``, Lyapunov value ``V``, and the squared step
    norms of both blocks.
    """
    model = problem.model.copy()
    e = np.zeros_like(problem.observed)
    a_prev = eval_grid(model, problem.coords)
    state = PalsState(model, e, a_prev)

    g = _objective(problem, cfg, a_prev, e)
    v = g
    state.history.append(HistoryRecord(0, g, v, 0.0, 0.0))
    slack = None
    stagnant = 0

    for k in range(1, cfg.outer_iters + 1):
        a = theta_step(state, problem, cfg)
        a_step = float(np.sum((a - state.a_prev) ** 2))
        if cfg.gamma > 0:
            e_new = e_step(a, state.e, problem.observed, problem.mask,
                           cfg.gamma, cfg.eta)
        else:
            # gamma = 0 removes the coercive sparse penalty; the two-block
            # model degenerates, so the perturbation stays frozen at zero
            # and the solver reduces to plain single-variable fitting
            e_new = state.e
        e_step_sq = float(np.sum((e_new - state.e) ** 2))

        g_prev = state.history[-1].objective
        g = _objective(problem, cfg, a, e_new)
        v = g + 0.5 * cfg.eta * (a_step + e_step_sq)
        if not np.isfinite(g):
            raise PalsDivergence(f"objective diverged at iteration {k}",
                                 state.history)
        if slack is None:
            slack = 1e-8 * abs(state.history[0].lyapunov)
        if v > state.history[-1].lyapunov + slack:
            warnings.warn(f"Lyapunov increase at iteration {k}: "
                          f"{state.history[-1].lyapunov} -> {v}")
        state.history.append(HistoryRecord(k, g, v, a_step, e_step_sq))
        state.a_prev = a
        state.e = e_new
        # a single stagnant iteration is often just a rejected theta step
        # that the learning-rate backoff will unstick; require several
        if abs(g_prev - g) <= cfg.tol * max(abs(g_prev), 1e-300):
            stagnant += 1
            if stagnant >= cfg.patience:
                break
        else:
            stagnant = 0
    return state


def history_jsonl(history):
    """Line-delimited JSON records for plotting."""
    return "\n".join(json.dumps(asdict(rec)) for rec in history) + "\n"


def jacobian_rank(model, coords, fd_step=1e-6, max_params=500):
    """Numerical rank of the output-vs-weights Jacobian on a toy model.

    Built column by column with central differences, so it is only
    feasible (and only intended) as a diagnostic for models with at most
    ``max_params`` scalar parameters.
    """
    params = model.parameters()
    n_params = sum(w.size for w in params)
    if n_params > max_params:
        raise ValueError(f"{n_params} parameters exceed the diagnostic "
                         f"limit of {max_params}")
    numel = int(np.prod([len(np.atleast_1d(c)) for c in coords]))
    jac = np.empty((numel, n_params))
    col = 0
    for w in params:
        for idx in np.ndindex(*w.shape):
            orig = w[idx]
            w[idx] = orig + fd_step
            up = eval_grid(model, coords)
            w[idx] = orig - fd_step
            dn = eval_grid(model, coords)
            w[idx] = orig
            jac[:, col] = ((up - dn) / (2 * fd_step)).ravel(order="F")
            col += 1
    return int(np.linalg.matrix_rank(jac))
