"""Implicit Multiple Tensor Decomposition.

One sine MLP per mode maps a scalar coordinate to that mode's factor
slice; contracting the N slices over all rank indices yields the tensor
value at the coordinate vector.  Evaluating each network over a grid of
coordinates stacks the slices into genuine Multiple factors, so grid
evaluation and its gradient reuse the contraction-environment machinery
instead of contracting per point.

Coordinates are affinely normalized from each mode's domain onto the
unit-half-width interval [COORD_OFFSET - 1, COORD_OFFSET + 1] before
entering the networks.  The interval is kept away from the origin because
a bias-free sine network vanishes identically at input 0, which would pin
the model to zero on any grid plane whose coordinate normalizes there
(the middle channel of an RGB mode, the axes of an SDF box).  The
certificate's coordinate bound is therefore COORD_OFFSET + 1.

The planar order-2 case (used by the point-cloud pipeline) degenerates to
a matrix factorization: both networks share one rank and the contraction
is the dot product of their slice vectors.
"""
import json
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .decomp import MultipleFactors, contraction_env, multiple_product
from .mlp import (backward_batch, cert_for_nets, forward_batch, init_mlp,
                  load_mlp, save_mlp)
from .tensor import fold, unfold

COORD_OFFSET = 1.5


@dataclass
class ImtdModel:
    """N factor networks plus per-mode coordinate domains."""

    nets: list
    ranks: tuple
    domains: list

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        self.domains = [(float(lo), float(hi)) for lo, hi in self.domains]
        n = len(self.nets)
        if n < 2:
            raise ValueError("need at least 2 factor networks")
        if len(self.ranks) != n or len(self.domains) != n:
            raise ValueError("ranks and domains must have one entry per mode")
        if n == 2 and self.ranks[0] != self.ranks[1]:
            raise ValueError("planar (order-2) models need equal ranks")
        for mode, net in enumerate(self.nets):
            if net.out_dim != self.slice_size(mode):
                raise ValueError(f"net {mode} emits {net.out_dim} values, "
                                 f"expected {self.slice_size(mode)}")

    @property
    def order(self):
        return len(self.nets)

    def slice_size(self, mode):
        if self.order == 2:
            return self.ranks[0]
        return int(np.prod([r for k, r in enumerate(self.ranks) if k != mode]))

    def slice_dims(self, mode):
        return tuple(r for k, r in enumerate(self.ranks) if k != mode)

    def normalize(self, mode, xs):
        lo, hi = self.domains[mode]
        xs = np.asarray(xs, dtype=np.float64)
        if hi == lo:
            return np.full_like(xs, COORD_OFFSET)
        return 2.0 * (xs - lo) / (hi - lo) - 1.0 + COORD_OFFSET

    def parameters(self):
        """All weight matrices, net-major; shared references for updates."""
        return [w for net in self.nets for w in net.weights]

    def set_parameters(self, params):
        i = 0
        for net in self.nets:
            for j in range(net.depth):
                net.weights[j] = np.asarray(params[i], dtype=np.float64)
                i += 1

    def copy(self):
        return ImtdModel([net.copy() for net in self.nets], self.ranks,
                         list(self.domains))


def init_imtd(ranks, domains, hidden=64, depth=4, omega0=5.0, seed=0,
              out_scale=1.0):
    """Build a model with one seeded sine network per mode."""
    ranks = tuple(int(r) for r in ranks)
    n = len(ranks)
    nets = []
    for mode in range(n):
        if n == 2:
            out_dim = ranks[0]
        else:
            out_dim = int(np.prod([r for k, r in enumerate(ranks) if k != mode]))
        nets.append(init_mlp(hidden, depth, out_dim, omega0,
                             seed=seed * 1009 + mode, out_scale=out_scale))
    return ImtdModel(nets, ranks, list(domains))


def grid_domains(shape):
    """Default domains for an integer grid: mode n spans [0, I_n - 1]."""
    return [(0.0, float(max(s - 1, 1))) for s in shape]


def _warn_outside(model, mode, xs):
    lo, hi = model.domains[mode]
    if np.any(xs < lo) or np.any(xs > hi):
        warnings.warn(f"coordinate outside domain {model.domains[mode]} on "
                      f"mode {mode}; extrapolating")


@dataclass
class GridEval:
    """Forward state of a grid evaluation, reusable by the backward pass."""

    tensor: np.ndarray
    outputs: list
    caches: list
    factors: object  # MultipleFactors for order >= 3, None for planar


def _slices_to_factor(out, mode, model, n_coords):
    dims = model.slice_dims(mode) + (n_coords,)
    arr = out.reshape(dims, order="F")
    return np.moveaxis(arr, -1, mode)


def _factor_to_slices(grad_factor, mode):
    moved = np.moveaxis(grad_factor, mode, -1)
    return moved.reshape((-1, moved.shape[-1]), order="F")


def grid_forward(model, coords):
    """Evaluate on a coordinate grid, keeping state for the backward pass."""
    if len(coords) != model.order:
        raise ValueError("need one coordinate list per mode")
    outputs, caches = [], []
    for mode, xs in enumerate(coords):
        xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
        if xs.size == 0:
            raise ValueError("coordinate lists must be nonempty")
        _warn_outside(model, mode, xs)
        out, cache = forward_batch(model.nets[mode], model.normalize(mode, xs))
        outputs.append(out)
        caches.append(cache)
    if model.order == 2:
        tensor = outputs[0].T @ outputs[1]
        return GridEval(tensor, outputs, caches, None)
    factors = [_slices_to_factor(outputs[mode], mode, model, outputs[mode].shape[1])
               for mode in range(model.order)]
    long_dims = tuple(o.shape[1] for o in outputs)
    f = MultipleFactors(factors, model.ranks, long_dims)
    return GridEval(multiple_product(f), outputs, caches, f)


def eval_grid(model, coords):
    """Tensor of model values over the outer product of coordinate lists."""
    return grid_forward(model, coords).tensor


def grid_backward_from(model, ge, cotangent):
    """Weight gradients of ``<cotangent, grid tensor>`` from forward state."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape != ge.tensor.shape:
        raise ValueError(f"cotangent shape {cotangent.shape} does not match "
                         f"grid shape {ge.tensor.shape}")
    grads = []
    if model.order == 2:
        out0, out1 = ge.outputs
        grads.append(backward_batch(model.nets[0], ge.caches[0],
                                    out1 @ cotangent.T))
        grads.append(backward_batch(model.nets[1], ge.caches[1],
                                    out0 @ cotangent))
        return grads
    for mode in range(model.order):
        env = contraction_env(ge.factors, mode)
        grad_unf = unfold(cotangent, mode) @ env.matrix
        grad_factor = fold(grad_unf, mode, ge.factors.factor_shape(mode))
        out_cot = _factor_to_slices(grad_factor, mode)
        grads.append(backward_batch(model.nets[mode], ge.caches[mode], out_cot))
    return grads


def grid_backward(model, coords, cotangent):
    """Weight gradients of ``<cotangent, eval_grid(model, coords)>``."""
    return grid_backward_from(model, grid_forward(model, coords), cotangent)


# ---------------------------------------------------------------------------
# scattered-point evaluation (one arbitrary coordinate vector per row)


def points_forward(model, pts):
    """Evaluate at a batch of coordinate vectors, keeping backward state."""
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != model.order:
        raise ValueError(f"points must be (B, {model.order})")
    outputs, caches = [], []
    for mode in range(model.order):
        xs = pts[:, mode]
        _warn_outside(model, mode, xs)
        out, cache = forward_batch(model.nets[mode], model.normalize(mode, xs))
        outputs.append(out)
        caches.append(cache)
    n = model.order
    if n == 2:
        values = np.einsum("rb,rb->b", outputs[0], outputs[1])
        return values, outputs, caches
    batch = 2 * n
    args = []
    for mode in range(n):
        dims = model.slice_dims(mode) + (pts.shape[0],)
        args.extend((outputs[mode].reshape(dims, order="F"),
                     [k for k in range(n) if k != mode] + [batch]))
    values = np.einsum(*args, [batch], optimize=True)
    return values, outputs, caches


def eval_points(model, pts):
    """Model values at a batch of coordinate vectors, shape (B,)."""
    return points_forward(model, pts)[0]


def eval_point(model, x):
    """Model value at a single coordinate vector."""
    pts = np.asarray(x, dtype=np.float64)[None, :]
    return float(eval_points(model, pts)[0])


def points_backward(model, outputs, caches, cotangent):
    """Weight gradients of ``sum_b cotangent[b] * f(pts[b])``."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    n = model.order
    grads = []
    if n == 2:
        c0 = outputs[1] * cotangent[None, :]
        c1 = outputs[0] * cotangent[None, :]
        grads.append(backward_batch(model.nets[0], caches[0], c0))
        grads.append(backward_batch(model.nets[1], caches[1], c1))
        return grads
    batch = 2 * n
    shaped = [outputs[mode].reshape(model.slice_dims(mode) + (-1,), order="F")
              for mode in range(n)]
    for mode in range(n):
        args = []
        for m in range(n):
            if m == mode:
                continue
            args.extend((shaped[m], [k for k in range(n) if k != m] + [batch]))
        args.extend((cotangent, [batch]))
        out_sub = [k for k in range(n) if k != mode] + [batch]
        slice_cot = np.einsum(*args, out_sub, optimize=True)
        out_cot = slice_cot.reshape((model.slice_size(mode), -1), order="F")
        grads.append(backward_batch(model.nets[mode], caches[mode], out_cot))
    return grads


def empirical_lipschitz(model, n_pairs=10000, seed=0):
    """Max sampled ratio |f(x)-f(y)| / ||x-y|| in normalized coordinates.

    The certificate from :func:`model_certificate` upper-bounds this ratio.
    """
    rng = np.random.default_rng(seed)
    n = model.order
    u = rng.uniform(-1.0, 1.0, size=(n_pairs, n))
    v = rng.uniform(-1.0, 1.0, size=(n_pairs, n))
    dist = np.sqrt(np.sum((u - v) ** 2, axis=1))
    keep = dist > 1e-9
    u, v, dist = u[keep], v[keep], dist[keep]
    raw_u = np.empty_like(u)
    raw_v = np.empty_like(v)
    for mode in range(n):
        lo, hi = model.domains[mode]
        raw_u[:, mode] = lo + (u[:, mode] + 1.0) * 0.5 * (hi - lo)
        raw_v[:, mode] = lo + (v[:, mode] + 1.0) * 0.5 * (hi - lo)
    fu = eval_points(model, raw_u)
    fv = eval_points(model, raw_v)
    return float(np.max(np.abs(fu - fv) / dist))


def model_certificate(model):
    """Certificate with measured weight norms and the normalized-domain
    coordinate bound ``COORD_OFFSET + 1``."""
    return cert_for_nets(model.nets, zeta=COORD_OFFSET + 1.0)


# ---------------------------------------------------------------------------
# model bundle serialization


def save_model(path, model):
    os.makedirs(path, exist_ok=True)
    manifest = {"order": model.order, "ranks": list(model.ranks),
                "domains": [list(d) for d in model.domains]}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    for mode, net in enumerate(model.nets):
        save_mlp(os.path.join(path, f"net_{mode}"), net)


def load_model(path):
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    nets = [load_mlp(os.path.join(path, f"net_{mode}"))
            for mode in range(manifest["order"])]
    return ImtdModel(nets, manifest["ranks"], manifest["domains"])
